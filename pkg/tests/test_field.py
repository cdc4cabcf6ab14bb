import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocpf import autodiff as ad
from cocpf.field import FieldConfig, FieldModel, angle_input, encode, encoded_size

SMALL = FieldConfig(width=16, intensity_width=8)


def test_encode_examples():
    np.testing.assert_allclose(encode([0.0], 2), [0, 0, 1, 0, 1])
    np.testing.assert_allclose(encode([1.0], 1), [1, 0.84147098, 0.54030231], atol=1e-8)
    assert encode(np.zeros((3, 2)), 10).shape == (3, 42) and encoded_size(2, 10) == 42


def test_encode_rejects_negative_frequency_count():
    with pytest.raises(ValueError):
        encode([0.5], -1)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999), st.integers(0, 10))
def test_encoding_keeps_the_input(x, y, L):
    feats = encode(np.array([[x, y]]), L)
    assert feats.shape[1] == encoded_size(2, L)
    assert feats[0, 0] == x and feats[0, 2 * L + 1] == y


def test_angle_input_range():
    assert angle_input(0.0) == -1.0 and angle_input(math.pi) == 0.0


def test_default_parameter_count():
    assert FieldModel().parameter_count() == 572290


def test_sigma_ignores_theta():
    m = FieldModel(SMALL, seed=3)
    z = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    _, s1 = m.eval_field(z, 0.1)
    _, s2 = m.eval_field(z, 2.9)
    assert s1.tobytes() == s2.tobytes()


def test_output_ranges_and_finiteness_on_a_large_batch():
    m = FieldModel(seed=0)
    rng = np.random.default_rng(1)
    intensity, sigma = m.eval_field(rng.uniform(-1, 1, (2048, 2)), rng.uniform(0, 2 * math.pi, 2048))
    assert intensity.shape == sigma.shape == (2048,)
    assert np.all(np.isfinite(intensity)) and np.all(np.isfinite(sigma))
    assert np.all((intensity > 0) & (intensity < 1)) and np.all(sigma >= 0)


def test_evaluation_is_deterministic():
    z = np.random.default_rng(2).uniform(-1, 1, (10, 2))
    a = FieldModel(SMALL, seed=5).eval_field(z, 1.0)
    b = FieldModel(SMALL, seed=5).eval_field(z, 1.0)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_skips_land_before_activation():
    # zero every trunk weight except layer 1; with zero biases layer 4 then
    # sees only the skipped layer-1 activations
    m = FieldModel(SMALL, seed=0, dtype=np.float64)
    for i, layer in enumerate(m.trunk, start=1):
        if i != 1:
            layer.weight.data = np.zeros_like(layer.weight.data)
    z = np.array([[0.3, -0.4]])
    h1 = np.maximum(encode(z, 10) @ m.trunk[0].weight.data, 0)
    _, last = m.sigma_features(z)
    # layers 4 and 7 pass h1 through (relu(0 + h1) = h1); layers 8-9 are zero
    assert not last.data.any()
    head = m.sigma_head
    head.weight.data = np.ones_like(head.weight.data)
    sigma, _ = m.sigma_features(z)
    assert sigma.data[0, 0] == pytest.approx(h1.sum())


def test_state_round_trip_and_validation():
    a = FieldModel(SMALL, seed=1)
    b = FieldModel(SMALL, seed=2)
    b.load_state(a.state())
    z = np.zeros((1, 2))
    assert a.eval_field(z, 0.0)[0].tobytes() == b.eval_field(z, 0.0)[0].tobytes()
    with pytest.raises(KeyError):
        b.load_state(a.state()[1:])
    bad = [(n, np.zeros((1, 1))) for n, _ in a.state()]
    with pytest.raises(ValueError):
        b.load_state(bad)


def test_config_dict_round_trip():
    cfg = FieldConfig(width=32, skips=((1, 3), (3, 5)), sigma_layer=5)
    back = FieldConfig.from_dict({k: str(v) for k, v in cfg.to_dict().items()})
    assert back == cfg


def test_field_gradients_match_finite_differences():
    m = FieldModel(FieldConfig(width=8, intensity_width=4, z_frequencies=3, theta_frequencies=2),
                   seed=4, dtype=np.float64)
    rng = np.random.default_rng(0)
    z = rng.uniform(-1, 1, (6, 2))
    th = rng.uniform(0, 2 * math.pi, 6)

    def loss():
        intensity, sigma = m(z, th)
        return ad.tsum(ad.add(ad.mul(intensity, sigma), ad.square(sigma)))

    m.zero_grad()
    ad.backward(loss())
    for p in m.parameters():
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + 1e-6
            up = float(loss().data)
            flat[i] = old - 1e-6
            down = float(loss().data)
            flat[i] = old
            num = (up - down) / 2e-6
            assert p.grad.reshape(-1)[i] == pytest.approx(num, rel=1e-4, abs=1e-8)
