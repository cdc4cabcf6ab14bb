"""Self-supervised fitting of coarse and fine fields to one sparse-view sinogram."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ct import Sinogram, field_scale
from .fbp import default_output_size
from .field import FieldConfig, FieldModel
from .formats import read_checkpoint, read_sidecar, write_checkpoint, write_sidecar
from .render import render, render_sum
from .sampling import DEFAULT_LENGTH, draw_uniform, its_distances, segment_lengths, stripe_frames

STRIPE, RAY = "stripe", "ray"
VOLUME, SUM = "volume", "sum"


class NumericalError(RuntimeError):
    """Raised when the loss or a prediction stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    n_coarse: int = 64
    n_fine: int = 64
    batch_size: int = 2048
    max_iters: int = 20000
    lr_start: float = 2e-3
    lr_end: float = 2e-5
    weight_decay: float = 1e-6
    width: float = 0.0  # stripe width; 0 selects one pixel, 2 / W
    padding: float = 0.0
    seed: int = 0
    sampling: str = STRIPE
    rendering: str = VOLUME
    stratified: bool = False
    synth_coarse: int = 8
    synth_fine: int = 8
    synth_jitter: bool = False
    model_width: int = 256
    model_depth: int = 9
    intensity_width: int = 128

    def __post_init__(self):
        for name in ("n_coarse", "n_fine", "batch_size", "max_iters", "synth_coarse", "synth_fine",
                     "model_width", "model_depth", "intensity_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.weight_decay < 0 or self.width < 0 or self.padding < 0:
            raise ValueError("weight_decay, width and padding must be non-negative")
        if self.sampling not in (STRIPE, RAY):
            raise ValueError(f"sampling must be {STRIPE!r} or {RAY!r}")
        if self.rendering not in (VOLUME, SUM):
            raise ValueError(f"rendering must be {VOLUME!r} or {SUM!r}")

    def model_config(self):
        return FieldConfig(width=self.model_width, depth=self.model_depth, intensity_width=self.intensity_width)

    def stripe_width(self, geometry):
        return self.width or 2.0 / default_output_size(geometry)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, mapping):
        """Build from string values (key=value files); unknown keys are rejected."""
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, val in mapping.items():
            if key not in kinds:
                raise KeyError(f"unknown training option {key!r}")
            default = getattr(cls, key)
            if isinstance(default, bool):
                kw[key] = val if isinstance(val, bool) else str(val).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[key] = int(val)
            elif isinstance(default, float):
                kw[key] = float(val)
            else:
                kw[key] = str(val)
        return cls(**kw)

    def replace(self, **kw):
        return replace(self, **kw)


def lr_at(iteration, cfg):
    """Log-linear interpolation between lr_start and lr_end."""
    if not 0 <= iteration <= cfg.max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    t = iteration / cfg.max_iters
    return math.exp(math.log(cfg.lr_start) + t * (math.log(cfg.lr_end) - math.log(cfg.lr_start)))


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr:
                p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def pixel_loss(gt, coarse, fine):
    """Per-pixel |gt - fine| * (gt - coarse)^2 + (gt - fine)^2, weight treated as constant."""
    lam = np.abs(gt - fine.data)
    return ad.add(ad.mul(ad.square(ad.sub(gt, coarse)), lam), ad.square(ad.sub(gt, fine)))


@dataclass
class StripeBatch:
    ks: np.ndarray
    views: np.ndarray
    thetas: np.ndarray
    center: np.ndarray
    axis: np.ndarray
    perp: np.ndarray


def stripe_batch(geometry, ks, views, thetas=None):
    thetas = geometry.angles[views] if thetas is None else np.asarray(thetas, dtype=np.float64)
    center, axis, perp = stripe_frames(geometry, ks, thetas)
    return StripeBatch(np.asarray(ks), np.asarray(views), thetas, center, axis, perp)


class CoCPF:
    """Coarse and fine fields plus the geometry-dependent constants used to query them."""

    def __init__(self, geometry, cfg, value_scale=1.0, dtype=np.float32):
        self.geometry = geometry
        self.cfg = cfg
        self.value_scale = float(value_scale)
        self.width = cfg.stripe_width(geometry)
        self.scale = field_scale(default_output_size(geometry), cfg.padding)
        mc = cfg.model_config()
        self.coarse = FieldModel(mc, seed=np.random.SeedSequence([cfg.seed, 0]).generate_state(1)[0], dtype=dtype)
        self.fine = FieldModel(mc, seed=np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0], dtype=dtype)

    def parameters(self):
        return self.coarse.parameters() + self.fine.parameters()

    def zero_grad(self):
        self.coarse.zero_grad()
        self.fine.zero_grad()

    # -- querying -------------------------------------------------------

    def _offsets(self, shape, rng):
        if self.cfg.sampling == RAY or rng is None:
            return np.zeros(shape)
        return (rng.random(shape) - 0.5) * self.width

    def _points(self, batch, nu, xi):
        pts = (batch.center[:, None, :] + (nu - DEFAULT_LENGTH / 2.0)[..., None] * batch.axis[:, None, :]
               + xi[..., None] * batch.perp[:, None, :])
        return pts.reshape(-1, 2) * self.scale

    def _render(self, model, batch, nu, xi):
        b, n = nu.shape
        intensity, sigma = model(self._points(batch, nu, xi), np.repeat(batch.thetas, n))
        sigma = ad.reshape(sigma, (b, n))
        delta = segment_lengths(nu, DEFAULT_LENGTH)
        if self.cfg.rendering == SUM:
            return render_sum(nu, sigma, delta=delta)
        return render(nu, sigma, ad.reshape(intensity, (b, n)), self.width, delta=delta)

    def forward(self, batch, rng, n_coarse, n_fine):
        """Coarse and fine renders for every stripe in ``batch``.

        ``rng=None`` renders deterministically: midpoint coarse nodes, fixed ITS
        quantiles and the stripe centre line.
        """
        b = batch.ks.size
        nu_c, _ = draw_uniform((b, n_coarse), self.width, DEFAULT_LENGTH, rng, self.cfg.stratified)
        xi_c = self._offsets((b, n_coarse), rng)
        coarse = self._render(self.coarse, batch, nu_c, xi_c)
        nu_f = its_distances(nu_c, np.maximum(coarse.weights.data, 0.0), DEFAULT_LENGTH, n_fine, rng)
        xi_f = self._offsets((b, n_fine), rng)
        nu = np.concatenate([nu_c, nu_f], axis=1)
        xi = np.concatenate([xi_c, xi_f], axis=1)
        order = np.argsort(nu, axis=1, kind="stable")
        fine = self._render(self.fine, batch, np.take_along_axis(nu, order, axis=1),
                            np.take_along_axis(xi, order, axis=1))
        return coarse.value, fine.value

    # -- persistence ----------------------------------------------------

    def state(self):
        return ([("coarse." + n, a) for n, a in self.coarse.state()]
                + [("fine." + n, a) for n, a in self.fine.state()])

    def load_state(self, named):
        named = list(named)
        self.coarse.load_state([(n[7:], a) for n, a in named if n.startswith("coarse.")])
        self.fine.load_state([(n[5:], a) for n, a in named if n.startswith("fine.")])


def measurement_scale(geometry, cfg):
    """Factor mapping a stripe render to measured line-integral units.

    The stripe quadrature approximates width * integral(sigma * I) while the
    attenuation stays small, so multiplying by 1 / width lets sigma carry the
    raster's own attenuation units. Plain summation needs no rescaling.
    """
    return 1.0 if cfg.rendering == SUM else 1.0 / cfg.stripe_width(geometry)


def _substream(seed, *keys):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def train_step(model, adam, sino, iteration, lr=None):
    """One optimisation step on a random pixel batch; returns the summed batch loss."""
    cfg = model.cfg
    g = sino.geometry
    rng = _substream(cfg.seed, 1, iteration)
    d, v = sino.values.shape
    ks = rng.integers(0, d, cfg.batch_size)
    views = rng.integers(0, v, cfg.batch_size)
    gt = sino.values[ks, views].astype(model.fine.dtype)
    batch = stripe_batch(g, ks, views)
    coarse, fine = model.forward(batch, rng, cfg.n_coarse, cfg.n_fine)
    # compare in measured units; keeps gradients well above Adam's epsilon
    coarse = ad.mul(coarse, model.value_scale)
    fine = ad.mul(fine, model.value_scale)
    loss = ad.tsum(pixel_loss(gt, coarse, fine))
    value = float(loss.data)
    if not math.isfinite(value):
        bad = ~(np.isfinite(coarse.data) & np.isfinite(fine.data))
        pixels = list(zip(ks[bad].tolist(), views[bad].tolist()))[:16]
        raise NumericalError(f"non-finite loss at iteration {iteration}; offending (bin, view) pixels: {pixels}")
    model.zero_grad()
    ad.backward(loss)
    adam.step(lr_at(iteration, cfg) if lr is None else lr)
    return value


@dataclass
class LogRow:
    iteration: int
    loss: float
    lr: float
    wall_ms: float


class Trainer:
    """Owns the model, optimiser and log for one training run."""

    def __init__(self, sino, cfg, dtype=np.float32):
        if sino.values.size == 0:
            raise ValueError("empty sinogram")
        self.sino = sino
        self.cfg = cfg
        self.model = CoCPF(sino.geometry, cfg, value_scale=measurement_scale(sino.geometry, cfg), dtype=dtype)
        self.adam = Adam(self.model.parameters(), weight_decay=cfg.weight_decay)
        self.iteration = 0
        self.log = []

    def run(self, iters=None, log_every=100, callback=None):
        stop = self.cfg.max_iters if iters is None else min(self.cfg.max_iters, self.iteration + iters)
        t0 = time.perf_counter()
        while self.iteration < stop:
            lr = lr_at(self.iteration, self.cfg)
            loss = train_step(self.model, self.adam, self.sino, self.iteration, lr)
            if self.iteration % log_every == 0 or self.iteration == stop - 1:
                row = LogRow(self.iteration, loss, lr, (time.perf_counter() - t0) * 1000.0)
                self.log.append(row)
                if callback:
                    callback(row)
            self.iteration += 1
        return self.log

    def save(self, path):
        save_checkpoint(path, self.model, self.iteration)


def sidecar_path(path):
    return Path(str(path) + ".cfg")


def save_checkpoint(path, model, iteration=0):
    """Write CPF1 parameters plus a key=value sidecar holding config and geometry."""
    write_checkpoint(path, model.state())
    g = model.geometry
    meta = {f"train.{k}": v for k, v in model.cfg.to_dict().items()}
    meta.update({
        "iteration": iteration,
        "value_scale": repr(model.value_scale),
        "dtype": np.dtype(model.fine.dtype).name,
        "geometry.beam": g.beam,
        "geometry.detector_count": g.detector_count,
        "geometry.detector_span": repr(g.detector_span),
        "geometry.source_to_center": repr(g.source_to_center),
        "geometry.source_to_detector": repr(g.source_to_detector),
        "geometry.angle_range": repr(g.angle_range),
        "geometry.angles": ",".join(repr(float(a)) for a in g.angles),
    })
    write_sidecar(sidecar_path(path), meta)


def load_checkpoint(path):
    from .ct import Geometry

    meta = read_sidecar(sidecar_path(path))
    cfg = TrainConfig.from_dict({k[6:]: v for k, v in meta.items() if k.startswith("train.")})
    angles = np.array([float(a) for a in meta["geometry.angles"].split(",")])
    geometry = Geometry(meta["geometry.beam"], int(meta["geometry.detector_count"]), angles,
                        float(meta["geometry.detector_span"]), float(meta["geometry.source_to_center"]),
                        float(meta["geometry.source_to_detector"]), float(meta["geometry.angle_range"]))
    model = CoCPF(geometry, cfg, float(meta["value_scale"]), dtype=np.dtype(meta["dtype"]))
    model.load_state(read_checkpoint(path))
    return model, int(meta["iteration"])


def dense_angles(geometry, n_views):
    return np.arange(n_views) * (geometry.angle_range / n_views)


def render_views(model, geometry, thetas, n_coarse, n_fine, seed=None, points_per_chunk=1 << 16):
    """Fine-field predictions (in sinogram units) for all bins at ``thetas``; shape (D, len(thetas)).

    ``seed=None`` uses deterministic quadrature; otherwise each chunk draws its
    own random samples.
    """
    d = geometry.detector_count
    chunk = max(1, points_per_chunk // (n_coarse + n_fine))
    ks, views = np.meshgrid(np.arange(d), np.arange(len(thetas)), indexing="ij")
    ks, views = ks.ravel(), views.ravel()
    out = np.empty(ks.size)
    for start in range(0, ks.size, chunk):
        sl = slice(start, start + chunk)
        rng = None if seed is None else _substream(seed, 2, start // chunk)
        batch = stripe_batch(geometry, ks[sl], views[sl], np.asarray(thetas)[views[sl]])
        with ad.no_grad():
            _, fine = model.forward(batch, rng, n_coarse, n_fine)
        out[sl] = fine.data
    return (out * model.value_scale).reshape(d, len(thetas))


def synthesize_dense(model, geometry=None, n_views=720, n_coarse=None, n_fine=None, seed=None):
    """Render a dense-view sinogram over uniform angles in the geometry's angular range."""
    g = geometry or model.geometry
    cfg = model.cfg
    thetas = dense_angles(g, n_views)
    if seed is None and cfg.synth_jitter:
        seed = cfg.seed
    values = render_views(model, g, thetas, n_coarse or cfg.synth_coarse, n_fine or cfg.synth_fine, seed)
    if not np.all(np.isfinite(values)):
        raise NumericalError("synthesised sinogram contains non-finite values")
    return Sinogram(g.with_angles(thetas), values)
