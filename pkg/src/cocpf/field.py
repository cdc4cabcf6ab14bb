"""Coordinate MLP mapping (field coordinate z, view angle theta) to (I, sigma)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

Z_FREQUENCIES = 10
THETA_FREQUENCIES = 6


def encode(w, L):
    """Fourier features: w followed by sin(2^i w), cos(2^i w) for i < L.

    ``w`` has shape (n, d) (or (d,)); the output is grouped per component,
    [w_c, sin(w_c), cos(w_c), sin(2 w_c), ...], giving d * (2L + 1) columns.
    """
    if L < 0:
        raise ValueError("frequency count must be non-negative")
    w = np.asarray(w)
    squeeze = w.ndim == 1
    if squeeze:
        w = w[None, :]
    n, d = w.shape
    scales = (2.0 ** np.arange(L)).astype(w.dtype)
    arg = w[:, :, None] * scales  # (n, d, L)
    feats = np.empty((n, d, 2 * L + 1), dtype=w.dtype)
    feats[:, :, 0] = w
    feats[:, :, 1::2] = np.sin(arg)
    feats[:, :, 2::2] = np.cos(arg)
    out = feats.reshape(n, d * (2 * L + 1))
    return out[0] if squeeze else out


def encoded_size(d, L):
    return d * (2 * L + 1)


def angle_input(theta):
    """Scale an angle in [0, 2pi) to [-1, 1) before encoding."""
    return np.asarray(theta) / math.pi - 1.0


@dataclass(frozen=True)
class FieldConfig:
    width: int = 256
    depth: int = 9
    intensity_width: int = 128
    z_frequencies: int = Z_FREQUENCIES
    theta_frequencies: int = THETA_FREQUENCIES
    z_dim: int = 2
    skips: tuple = ((1, 4), (4, 7))
    sigma_layer: int = 7

    def to_dict(self):
        d = asdict(self)
        d["skips"] = ";".join(f"{a}-{b}" for a, b in self.skips)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for key, val in d.items():
            if key == "skips":
                val = tuple(tuple(int(x) for x in pair.split("-")) for pair in str(val).split(";") if pair)
            elif key in cls.__dataclass_fields__:
                val = int(val)
            else:
                continue
            kw[key] = val
        return cls(**kw)


class Linear:
    def __init__(self, fan_in, fan_out, rng, dtype, name):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        self.weight = ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
                                requires_grad=True, name=f"{name}.weight")
        self.bias = ad.Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class FieldModel:
    """Nine-layer trunk on gamma(z) with additive skips 1->4 and 4->7.

    sigma = ReLU(head(h7)) depends on z only; the intensity branch takes the
    trunk output concatenated with gamma(theta), narrows to
    ``intensity_width`` channels and ends in a sigmoid.
    """

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config or FieldConfig()
        self.dtype = np.dtype(dtype)
        cfg = self.config
        rng = np.random.default_rng(seed)
        zin = encoded_size(cfg.z_dim, cfg.z_frequencies)
        tin = encoded_size(1, cfg.theta_frequencies)
        self.trunk = [Linear(zin if i == 0 else cfg.width, cfg.width, rng, self.dtype, f"trunk{i + 1}")
                      for i in range(cfg.depth)]
        self.sigma_head = Linear(cfg.width, 1, rng, self.dtype, "sigma")
        self.intensity_hidden = Linear(cfg.width + tin, cfg.intensity_width, rng, self.dtype, "intensity_hidden")
        self.intensity_head = Linear(cfg.intensity_width, 1, rng, self.dtype, "intensity")
        self._skip_into = {dst: src for src, dst in cfg.skips}

    def parameters(self):
        ps = []
        for layer in self.trunk:
            ps += layer.parameters()
        for layer in (self.sigma_head, self.intensity_hidden, self.intensity_head):
            ps += layer.parameters()
        return ps

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def sigma_features(self, z):
        """Run the trunk on field coordinates ``z`` (n, d); returns (sigma, last trunk features)."""
        x = ad.Tensor(encode(np.asarray(z, dtype=self.dtype), self.config.z_frequencies))
        outs = {}
        h = x
        sigma = None
        for i, layer in enumerate(self.trunk, start=1):
            pre = layer(h)
            if i in self._skip_into:
                pre = ad.add(pre, outs[self._skip_into[i]])
            h = ad.relu(pre)
            outs[i] = h
            if i == self.config.sigma_layer:
                sigma = ad.relu(self.sigma_head(h))
        return sigma, h

    def __call__(self, z, theta):
        """Evaluate (I, sigma), each shaped (n,), for coordinates z (n, d) and angles theta (n,)."""
        z = np.asarray(z, dtype=self.dtype)
        theta = np.broadcast_to(np.asarray(theta, dtype=self.dtype), (z.shape[0],))
        sigma, h = self.sigma_features(z)
        t = ad.Tensor(encode(angle_input(theta)[:, None].astype(self.dtype), self.config.theta_frequencies))
        mid = ad.relu(self.intensity_hidden(ad.concat([h, t], axis=1)))
        intensity = ad.sigmoid(self.intensity_head(mid))
        n = z.shape[0]
        return ad.reshape(intensity, (n,)), ad.reshape(sigma, (n,))

    def eval_field(self, z, theta):
        """Plain-array evaluation without recording gradients."""
        with ad.no_grad():
            I, sigma = self(z, theta)
        return I.data, sigma.data

    def state(self):
        return [(name, p.data) for name, p in self.named_parameters()]

    def load_state(self, named_arrays):
        table = dict(named_arrays)
        for name, p in self.named_parameters():
            if name not in table:
                raise KeyError(f"missing parameter {name}")
            arr = np.asarray(table[name])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(self.dtype)
