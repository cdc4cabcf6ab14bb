"""Discrete forward projection of rasters along parallel or fan-beam rays."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ct import PARALLEL, Raster, Sinogram

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class RaySpec:
    origin: np.ndarray
    direction: np.ndarray
    t_entry: float
    t_exit: float

    def point(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def _view_vectors(theta):
    d = np.array([-math.sin(theta), math.cos(theta)])
    u = np.array([math.cos(theta), math.sin(theta)])
    return d, u


def ray_arrays(geometry, theta):
    """Origins and unit directions, shape (D, 2), for every bin at one view."""
    d, u = _view_vectors(theta)
    pos = geometry.bin_positions()
    if geometry.beam == PARALLEL:
        origin = np.outer(pos, u)
        direction = np.broadcast_to(d, origin.shape).copy()
        return origin, direction
    source = -geometry.source_to_center * d
    cg, sg = np.cos(pos), np.sin(pos)
    direction = np.stack([cg * d[0] - sg * d[1], sg * d[0] + cg * d[1]], axis=1)
    origin = np.broadcast_to(source, direction.shape).copy()
    return origin, direction


def clip_to_square(origin, direction, half=1.0):
    """Slab intersection of rays with [-half, half]^2; misses give t_entry == t_exit."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / direction
        t1 = (-half - origin) * inv
        t2 = (half - origin) * inv
    lo = np.where(direction == 0, np.where(np.abs(origin) <= half, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(direction == 0, np.where(np.abs(origin) <= half, np.inf, -np.inf), np.maximum(t1, t2))
    t_in = lo.max(axis=-1)
    t_out = hi.min(axis=-1)
    miss = ~(t_out > t_in)
    t_in = np.where(miss, 0.0, t_in)
    t_out = np.where(miss, 0.0, t_out)
    return t_in, t_out


def ray_for(geometry, k, theta):
    if not 0 <= k < geometry.detector_count:
        raise IndexError(f"detector index {k} outside [0, {geometry.detector_count})")
    origin, direction = ray_arrays(geometry, theta)
    o, d = origin[k], direction[k]
    t_in, t_out = clip_to_square(o[None], d[None])
    return RaySpec(o, d, float(t_in[0]), float(t_out[0]))


def bilinear(values, x, y):
    """Sample a raster at field coordinates, clamping to the edge pixels."""
    h, w = values.shape
    fx = np.clip((x + 1.0) * (w / 2.0) - 0.5, 0.0, w - 1.0)
    fy = np.clip((y + 1.0) * (h / 2.0) - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(fx.astype(np.intp), w - 2)
    y0 = np.minimum(fy.astype(np.intp), h - 2)
    ax = fx - x0
    ay = fy - y0
    flat = values.ravel()
    i00 = y0 * w + x0
    v00 = flat[i00]
    v01 = flat[i00 + 1]
    v10 = flat[i00 + w]
    v11 = flat[i00 + w + 1]
    top = v00 + ax * (v01 - v00)
    bot = v10 + ax * (v11 - v10)
    return top + ay * (bot - top)


def _project_view(values, geometry, theta, step):
    origin, direction = ray_arrays(geometry, theta)
    t_in, t_out = clip_to_square(origin, direction)
    length = t_out - t_in
    nseg = np.maximum(np.ceil(length / step - 1e-9).astype(np.intp), 1)
    h = length / nseg
    m = np.arange(int(nseg.max()) + 1)
    t = t_in[:, None] + h[:, None] * m[None, :]
    weight = np.where(m[None, :] <= nseg[:, None], h[:, None], 0.0)
    weight[:, 0] *= 0.5
    weight[np.arange(len(nseg)), nseg] *= 0.5
    x = origin[:, 0:1] + t * direction[:, 0:1]
    y = origin[:, 1:2] + t * direction[:, 1:2]
    samples = bilinear(values, x, y)
    return (samples * weight).sum(axis=1)


def project(raster, geometry, workers=1):
    """Line integrals of the bilinear raster along every ray of ``geometry``.

    Rays are clipped to the field square and sampled every half pixel with
    trapezoid end weights.
    """
    if geometry.detector_count < 1:
        raise ValueError("geometry has no detector bins")
    values = raster.values if isinstance(raster, Raster) else np.asarray(raster, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty raster")
    step = 0.5 * (2.0 / values.shape[1])
    out = np.empty((geometry.detector_count, geometry.view_count))

    def one(j):
        out[:, j] = _project_view(values, geometry, geometry.angles[j], step)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(one, range(geometry.view_count)))
    else:
        for j in range(geometry.view_count):
            one(j)
    return Sinogram(geometry, out)
