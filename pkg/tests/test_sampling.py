import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cocpf.ct import Geometry
from cocpf.sampling import (Stripe, build_stripe, draw_uniform, its_distances, merge, resample_its, sample_uniform,
                            segment_lengths)


def rotate(points, angle):
    c, s = math.cos(angle), math.sin(angle)
    return points @ np.array([[c, s], [-s, c]])


def test_centre_bin_at_zero_angle_is_axis_aligned():
    g = Geometry.parallel(65, 1)
    s = build_stripe(g, 32, 0.0, 2 / 65)
    c = s.corners()
    np.testing.assert_allclose(sorted(set(np.round(c[:, 0], 12))), [-1 / 65, 1 / 65])
    np.testing.assert_allclose(sorted(set(np.round(c[:, 1], 12))), [-1.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 63), st.floats(0, math.pi - 1e-9))
def test_rotation_round_trip_restores_corners(k, theta):
    g = Geometry.parallel(64, 1)
    base = build_stripe(g, k, 0.0, 2 / 64).corners()
    turned = build_stripe(g, k, theta, 2 / 64).corners()
    np.testing.assert_allclose(rotate(turned, -theta), base, atol=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.4, 2.0])
def test_adjacent_stripes_abut(theta):
    w = 32
    g = Geometry.parallel(w, 1)
    a = build_stripe(g, 10, theta, 2 / w)
    b = build_stripe(g, 11, theta, 2 / w)
    # the right edge of a is the left edge of b
    np.testing.assert_allclose(a.corners()[[3, 2]], b.corners()[[0, 1]], atol=1e-12)
    offset = (b.center - a.center) @ a.perp
    assert offset == pytest.approx(a.width)


def test_invalid_stripes_rejected():
    g = Geometry.parallel(8, 1)
    with pytest.raises(IndexError):
        build_stripe(g, 8, 0.0, 0.1)
    with pytest.raises(ValueError):
        build_stripe(g, 0, 0.0, 0.0)


def test_single_sample_lies_inside():
    s = build_stripe(Geometry.parallel(16, 1), 3, 0.7, 0.125)
    out = sample_uniform(s, 1, np.random.default_rng(0))
    assert out.points.shape == (1, 2) and s.contains(out.points).all()


def test_uniform_mean_distance():
    s = build_stripe(Geometry.parallel(16, 1), 5, 1.1, 0.125)
    out = sample_uniform(s, 100_000, np.random.default_rng(1))
    assert abs(out.nu.mean() - s.length / 2) < 0.01 * s.length


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.booleans(), st.integers(0, 2**32 - 1))
def test_sample_set_invariants(n, stratified, seed):
    s = build_stripe(Geometry.parallel(16, 1), 7, 0.3, 0.125)
    out = sample_uniform(s, n, np.random.default_rng(seed), stratified)
    assert np.all(np.diff(out.nu) >= 0)
    assert out.nu[0] >= 0 and out.nu[-1] <= s.length
    np.testing.assert_allclose(out.delta[:-1], np.diff(out.nu))
    assert out.delta[-1] == pytest.approx(s.length - out.nu[-1])
    np.testing.assert_allclose(s.to_field(out.nu, out.xi), out.points)


def test_membership_over_many_random_stripes():
    rng = np.random.default_rng(2)
    for beam in ("parallel", "fan"):
        g = Geometry.parallel(40, 1) if beam == "parallel" else Geometry.fan(58, 1)
        total = 0
        while total < 100_000:
            s = build_stripe(g, int(rng.integers(40)), float(rng.uniform(0, math.pi)), float(rng.uniform(0.01, 0.3)))
            pts = sample_uniform(s, 500, rng).points
            w = np.full(8, 1 / 8)
            fine = resample_its(s, np.sort(rng.uniform(0, s.length, 8)), w, 500, rng).points
            assert s.contains(pts, tol=0).all() and s.contains(fine, tol=0).all()
            total += 1000


def test_fan_stripe_follows_the_fan_ray():
    g = Geometry.fan(31, 1)
    s = build_stripe(g, 4, 0.9, 0.05)
    source = -g.source_to_center * np.array([-math.sin(0.9), math.cos(0.9)])
    rel = s.center - source
    cross = rel[0] * s.axis[1] - rel[1] * s.axis[0]
    assert abs(cross) < 1e-12
    assert abs(s.center @ s.axis) < 1e-12  # centre is the ray point closest to the origin


def test_its_uniform_weights_give_uniform_distances():
    nu = np.linspace(0, 2, 16, endpoint=False)
    draws = its_distances(nu, np.full(16, 1 / 16), 2.0, 100_000, np.random.default_rng(3))
    assert stats.kstest(draws / 2.0, "uniform").pvalue > 0.01


def test_its_one_hot_stays_in_its_segment():
    rng = np.random.default_rng(4)
    nu = np.sort(rng.uniform(0, 2, 10))
    for j in range(10):
        w = np.zeros(10)
        w[j] = 1.0
        d = its_distances(nu, w, 2.0, 1000, rng)
        hi = nu[j + 1] if j < 9 else 2.0
        assert np.all((d >= nu[j]) & (d <= hi))


def test_its_linear_weights_match_analytic_cdf():
    m = 8
    nu = np.arange(m) * (2.0 / m)
    w = np.arange(1, m + 1, dtype=float)
    w /= w.sum()
    draws = its_distances(nu, w, 2.0, 100_000, np.random.default_rng(5))
    edges = np.append(nu, 2.0)
    cdf_knots = np.concatenate([[0.0], np.cumsum(w)])

    def cdf(x):
        return np.interp(x, edges, cdf_knots)

    assert stats.kstest(draws, cdf).statistic < 0.01


def test_its_all_zero_weights_fall_back_to_uniform():
    d = its_distances(np.linspace(0, 1.5, 4), np.zeros(4), 2.0, 50_000, np.random.default_rng(6))
    assert d.min() >= 0 and d.max() <= 2.0
    assert stats.kstest(d / 2.0, "uniform").pvalue > 0.01


def test_its_rejects_negative_weights():
    with pytest.raises(ValueError):
        its_distances(np.zeros(3), np.array([1.0, -1.0, 1.0]), 1.0, 5, np.random.default_rng(0))


def test_batched_its_matches_rows():
    rng = np.random.default_rng(7)
    nu = np.sort(rng.uniform(0, 2, (5, 6)), axis=1)
    w = rng.random((5, 6))
    w[2] = 0
    draws = its_distances(nu, w, 2.0, 20_000, np.random.default_rng(8))
    assert draws.shape == (5, 20_000)
    for r in (0, 1, 3, 4):
        edges = np.append(nu[r], 2.0)
        counts = np.histogram(draws[r], bins=edges)[0]
        expected = w[r] / w[r].sum() * 20_000
        assert stats.chisquare(counts, expected).pvalue > 0.001
    assert stats.kstest(draws[2] / 2, "uniform").pvalue > 0.001


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_merged_set_is_sorted_and_closes(na, nb, seed):
    rng = np.random.default_rng(seed)
    nu_a, nu_b = np.sort(rng.uniform(0, 2, na)), np.sort(rng.uniform(0, 2, nb))
    xi_a, xi_b = rng.random(na), rng.random(nb)
    nu, xi, delta, order = merge(nu_a, xi_a, nu_b, xi_b, 2.0)
    assert np.all(np.diff(nu) >= 0)
    np.testing.assert_allclose(delta, segment_lengths(nu, 2.0))
    assert delta.sum() == pytest.approx(2.0 - nu[0])
    np.testing.assert_array_equal(np.concatenate([xi_a, xi_b])[order], xi)


def test_stripe_validation():
    with pytest.raises(ValueError):
        Stripe(0, 0.1, 0.0, 0.0, np.zeros(2), np.array([0.0, 1.0]), np.array([1.0, 0.0]))


def test_deterministic_draws_use_midpoints_and_quantiles():
    nu, xi = draw_uniform((2, 4), 0.1, 2.0, None)
    np.testing.assert_allclose(nu, [[0.25, 0.75, 1.25, 1.75]] * 2)
    assert not xi.any()
    d = its_distances(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 2.0, 4, None)
    np.testing.assert_allclose(d, [0.25, 0.75, 1.25, 1.75])
