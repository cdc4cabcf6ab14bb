"""Stripe regions around detector rays, uniform sampling, and inverse transform resampling.

A stripe is a width x length rectangle whose long axis follows the ray of one
detector bin. Points are parametrised by the distance ``nu`` in [0, length]
from the entry edge and the lateral offset ``xi`` in [-width/2, width/2]:

    z = center + (nu - length / 2) * axis + xi * perp
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ct import PARALLEL

DEFAULT_LENGTH = 2.0


@dataclass(frozen=True)
class Stripe:
    k: int
    width: float
    length: float
    theta: float
    center: np.ndarray
    axis: np.ndarray
    perp: np.ndarray

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("stripe width must be positive")
        if not self.length > 0:
            raise ValueError("stripe length must be positive")

    def to_field(self, nu, xi):
        nu = np.asarray(nu, dtype=np.float64)
        xi = np.asarray(xi, dtype=np.float64)
        return (self.center + np.multiply.outer(nu - self.length / 2.0, self.axis)
                + np.multiply.outer(xi, self.perp))

    def local(self, points):
        """Inverse of ``to_field``: (nu, xi) for field points."""
        rel = np.asarray(points, dtype=np.float64) - self.center
        return rel @ self.axis + self.length / 2.0, rel @ self.perp

    def corners(self):
        nu = np.array([0.0, self.length, self.length, 0.0])
        xi = np.array([-0.5, -0.5, 0.5, 0.5]) * self.width
        return self.to_field(nu, xi)

    def contains(self, points, tol=1e-12):
        nu, xi = self.local(points)
        return (nu >= -tol) & (nu <= self.length + tol) & (np.abs(xi) <= self.width / 2.0 + tol)


@dataclass(frozen=True)
class SampleSet:
    """Points sorted by ``nu``; ``delta`` closes the last segment at the stripe length."""

    points: np.ndarray
    nu: np.ndarray
    xi: np.ndarray
    delta: np.ndarray


def segment_lengths(nu, length):
    """delta_i = nu_{i+1} - nu_i, with the last one running to ``length``."""
    nu = np.asarray(nu)
    return np.diff(nu, axis=-1, append=np.full(nu.shape[:-1] + (1,), length, dtype=nu.dtype))


def stripe_frames(geometry, ks, thetas):
    """Vectorised stripe frames: centres, axes and perpendiculars, each (B, 2).

    Parallel: the axis is the ray direction (-sin t, cos t) and the centre is
    s_k along (cos t, sin t). Fan: the axis follows the fan ray of bin k and the
    centre is the point of that ray closest to the origin.
    """
    ks = np.asarray(ks)
    thetas = np.asarray(thetas, dtype=np.float64)
    d = np.stack([-np.sin(thetas), np.cos(thetas)], axis=-1)
    pos = geometry.bin_positions()[ks]
    if geometry.beam == PARALLEL:
        u = np.stack([np.cos(thetas), np.sin(thetas)], axis=-1)
        return pos[..., None] * u, d, u
    cg, sg = np.cos(pos), np.sin(pos)
    axis = np.stack([cg * d[..., 0] - sg * d[..., 1], sg * d[..., 0] + cg * d[..., 1]], axis=-1)
    source = -geometry.source_to_center * d
    t = -np.sum(source * axis, axis=-1, keepdims=True)
    center = source + t * axis
    # equals u = (cos t, sin t) for the central bin, as in the parallel frame
    perp = np.stack([axis[..., 1], -axis[..., 0]], axis=-1)
    return center, axis, perp


def build_stripe(geometry, k, theta, width, length=DEFAULT_LENGTH):
    if not 0 <= k < geometry.detector_count:
        raise IndexError(f"detector index {k} outside [0, {geometry.detector_count})")
    center, axis, perp = stripe_frames(geometry, np.array([k]), np.array([theta]))
    return Stripe(int(k), float(width), float(length), float(theta), center[0], axis[0], perp[0])


def draw_uniform(shape, width, length, rng, stratified=False):
    """(nu, xi) arrays of ``shape`` (..., N), nu sorted along the last axis.

    With ``rng=None`` the draw is deterministic: cell midpoints on the centre line.
    """
    n = shape[-1]
    if n < 1:
        raise ValueError("need at least one sample")
    if rng is None:
        return np.broadcast_to((np.arange(n) + 0.5) * (length / n), shape).copy(), np.zeros(shape)
    u = rng.random(shape)
    if stratified:
        nu = (np.arange(n) + u) * (length / n)
    else:
        nu = np.sort(u * length, axis=-1)
    xi = (rng.random(shape) - 0.5) * width
    return nu, xi


def sample_uniform(stripe, n, rng, stratified=False):
    """``n`` uniform points in the stripe, sorted by distance along its axis."""
    nu, xi = draw_uniform((n,), stripe.width, stripe.length, rng, stratified)
    return SampleSet(stripe.to_field(nu, xi), nu, xi, segment_lengths(nu, stripe.length))


def its_distances(nu, weights, length, n, rng):
    """Inverse transform sampling of ``n`` distances per row.

    Bins are [nu_i, nu_{i+1}) with the last closing at ``length``; the density
    is piecewise constant with bin mass ``weights`` (normalised per row here).
    Rows whose weights sum to zero fall back to uniform on [0, length].
    Works on (N,) or (B, N) inputs. ``rng=None`` inverts the fixed quantiles
    (j + 0.5) / n instead of random ones.
    """
    nu = np.asarray(nu, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    single = nu.ndim == 1
    if single:
        nu, w = nu[None], w[None]
    b, m = nu.shape
    total = w.sum(axis=1, keepdims=True)
    dead = total[:, 0] <= 0
    pdf = np.where(dead[:, None], 1.0 / m, w / np.where(total > 0, total, 1.0))
    cdf = np.concatenate([np.zeros((b, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((b, n)) if rng is not None else np.broadcast_to((np.arange(n) + 0.5) / n, (b, n))
    # batched searchsorted: rows live in disjoint [2r, 2r + 1] ranges
    offs = 2.0 * np.arange(b)[:, None]
    idx = np.searchsorted((cdf + offs).ravel(), (u + offs).ravel(), side="right").reshape(b, n)
    idx = idx - (m + 1) * np.arange(b)[:, None] - 1
    idx = np.clip(idx, 0, m - 1)
    lo = np.take_along_axis(nu, idx, axis=1)
    hi = np.take_along_axis(segment_lengths(nu, length) + nu, idx, axis=1)
    p = np.take_along_axis(pdf, idx, axis=1)
    c0 = np.take_along_axis(cdf, idx, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.clip(np.where(p > 0, (u - c0) / p, 0.0), 0.0, 1.0)
    out = lo + frac * (hi - lo)
    if np.any(dead):
        out[dead] = u[dead] * length
    return out[0] if single else out


def resample_its(stripe, coarse_nu, weights, n, rng):
    """Draw ``n`` fine points: distances by ITS over the coarse segments, offsets uniform."""
    nu = np.sort(its_distances(coarse_nu, weights, stripe.length, n, rng))
    xi = (rng.random(n) - 0.5) * stripe.width
    return SampleSet(stripe.to_field(nu, xi), nu, xi, segment_lengths(nu, stripe.length))


def merge(nu_a, xi_a, nu_b, xi_b, length):
    """Sorted union of two sample sets; returns (nu, xi, delta, order)."""
    nu = np.concatenate([nu_a, nu_b], axis=-1)
    xi = np.concatenate([xi_a, xi_b], axis=-1)
    order = np.argsort(nu, axis=-1, kind="stable")
    nu = np.take_along_axis(nu, order, axis=-1)
    xi = np.take_along_axis(xi, order, axis=-1)
    return nu, xi, segment_lengths(nu, length), order
