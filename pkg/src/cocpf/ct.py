"""Rasters, sinograms, acquisition geometry and field-coordinate mapping.

Length units: the reconstruction square spans [-1, 1] x [-1, 1]. Raster
column j has its centre at x = -1 + (j + 0.5) * 2 / W and row i at
y = -1 + (i + 0.5) * 2 / H. Every length (detector span, fan distances,
stripe width and length) is measured in these units.

Angle convention: at view angle theta the parallel rays travel along
d = (-sin theta, cos theta) and the detector axis is u = (cos theta, sin theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PARALLEL = "parallel"
FAN = "fan"

# detector bins per image column for simulated fan scans (736 / 512)
FAN_DETECTOR_RATIO = 1.4375


@dataclass(frozen=True)
class Raster:
    """A W x H scalar image stored row-major as ``values[row, col]``."""

    values: np.ndarray
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"raster must be 2-d, got shape {v.shape}")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise ValueError(f"raster must be at least 2x2, got {v.shape[1]}x{v.shape[0]}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "value_range", (float(self.value_range[0]), float(self.value_range[1])))

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def pixel_size(self):
        return 2.0 / self.width

    @classmethod
    def from_array(cls, arr, normalize=True):
        """Build a raster, min-max normalising to [0, 1] unless told not to.

        The pre-normalisation (min, max) is kept in ``value_range``.
        """
        a = np.asarray(arr, dtype=np.float64)
        lo, hi = float(a.min()), float(a.max())
        if normalize:
            a = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
        return cls(a, (lo, hi))


@dataclass(frozen=True)
class Geometry:
    beam: str
    detector_count: int
    angles: np.ndarray
    detector_span: float = 2.0
    source_to_center: float = 0.0
    source_to_detector: float = 0.0
    angle_range: float = math.pi

    def __post_init__(self):
        if self.beam not in (PARALLEL, FAN):
            raise ValueError(f"unknown beam type {self.beam!r}")
        if int(self.detector_count) < 1:
            raise ValueError("geometry needs at least one detector bin")
        object.__setattr__(self, "detector_count", int(self.detector_count))
        a = np.asarray(self.angles, dtype=np.float64).reshape(-1).copy()
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)
        if a.size == 0:
            raise ValueError("geometry needs at least one view angle")
        if a.size > 1 and np.any(np.diff(a) <= 0):
            raise ValueError("view angles must be strictly increasing")
        limit = math.pi if self.beam == PARALLEL else 2 * math.pi
        if a[0] < 0 or a[-1] >= limit + 1e-12:
            raise ValueError(f"view angles must lie in [0, {limit:.6g})")
        if not self.detector_span > 0:
            raise ValueError("detector span must be positive")
        if self.beam == FAN:
            if not (self.source_to_center > 0 and self.source_to_detector > 0):
                raise ValueError("fan distances must be positive")
            if self.source_to_detector <= self.source_to_center:
                raise ValueError("source-to-detector must exceed source-to-center")
            if self.source_to_center <= 1.0:
                raise ValueError("fan source must lie outside the unit field circle")

    @classmethod
    def parallel(cls, detector_count, n_views, detector_span=2.0, angle_range=math.pi):
        angles = np.arange(n_views) * (angle_range / n_views)
        return cls(PARALLEL, detector_count, angles, detector_span, angle_range=angle_range)

    @classmethod
    def fan(cls, detector_count, n_views, source_to_center=4.0, source_to_detector=8.0,
            detector_span=None, angle_range=2 * math.pi):
        if detector_span is None:
            # cover the circumscribed circle of the field square
            detector_span = 2.0 * math.asin(math.sqrt(2.0) / source_to_center) * source_to_detector
        angles = np.arange(n_views) * (angle_range / n_views)
        return cls(FAN, detector_count, angles, detector_span, source_to_center,
                   source_to_detector, angle_range)

    @property
    def view_count(self):
        return self.angles.size

    @property
    def bin_spacing(self):
        """Detector pitch: field units (parallel) or radians of fan angle (fan)."""
        if self.beam == PARALLEL:
            return self.detector_span / self.detector_count
        return self.detector_span / (self.detector_count * self.source_to_detector)

    def bin_positions(self):
        """Detector offset s_k (parallel) or fan angle gamma_k (fan) per bin."""
        k = np.arange(self.detector_count)
        return (k - (self.detector_count - 1) / 2.0) * self.bin_spacing

    def with_angles(self, angles):
        return Geometry(self.beam, self.detector_count, angles, self.detector_span,
                        self.source_to_center, self.source_to_detector, self.angle_range)


@dataclass(frozen=True)
class Sinogram:
    """Projection values indexed ``values[detector, view]``."""

    geometry: Geometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.shape != (self.geometry.detector_count, self.geometry.view_count):
            raise ValueError(
                f"sinogram shape {v.shape} does not match geometry "
                f"({self.geometry.detector_count}, {self.geometry.view_count})"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("sinogram values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def detector_count(self):
        return self.geometry.detector_count

    @property
    def view_count(self):
        return self.geometry.view_count

    def replace(self, values):
        return Sinogram(self.geometry, values)


def normalize_coordinate(p, width, height, padding=0.0):
    """Map pixel-space points to field coordinates, ``(2p - S) / (S + 2P)`` per axis.

    ``p`` has shape (..., 2) holding (x, y) in pixels.
    """
    if padding < 0:
        raise ValueError("padding must be non-negative")
    p = np.asarray(p, dtype=np.float64)
    size = np.array([width, height], dtype=np.float64)
    return (2.0 * p - size) / (size + 2.0 * padding)


def denormalize_coordinate(z, width, height, padding=0.0):
    if padding < 0:
        raise ValueError("padding must be non-negative")
    z = np.asarray(z, dtype=np.float64)
    size = np.array([width, height], dtype=np.float64)
    return (z * (size + 2.0 * padding) + size) / 2.0


def field_scale(width, padding=0.0):
    """Factor taking geometry units to field coordinates for a given padding."""
    if padding < 0:
        raise ValueError("padding must be non-negative")
    return width / (width + 2.0 * padding)


def select_sparse_views(full, n_views):
    v = full.view_count
    if n_views < 1:
        raise ValueError("need at least one view")
    if n_views > v:
        raise ValueError(f"requested {n_views} views but only {v} are available")
    if v % n_views == 0:
        idx = np.arange(0, v, v // n_views)
    else:
        idx = np.floor(np.arange(n_views) * v / n_views + 0.5).astype(int)
    geometry = full.geometry.with_angles(full.geometry.angles[idx])
    return Sinogram(geometry, full.values[:, idx])


def add_awgn(sino, sigma, rng=None):
    """Perturb values with i.i.d. N(0, sigma^2) noise; ``rng`` may be a seed."""
    if sigma < 0:
        raise ValueError("noise std must be non-negative")
    if sigma == 0:
        return sino
    rng = np.random.default_rng(rng)
    noise = rng.normal(0.0, sigma, size=sino.values.shape)
    return sino.replace(sino.values + noise)


def pixel_centers(width, height):
    """Field coordinates (x, y) of every pixel centre, each shaped (H, W)."""
    xs = -1.0 + (np.arange(width) + 0.5) * (2.0 / width)
    ys = -1.0 + (np.arange(height) + 0.5) * (2.0 / height)
    return np.meshgrid(xs, ys)
