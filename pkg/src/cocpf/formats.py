"""Binary file formats: CPR1 rasters, CPS1 sinograms, CPF1 parameter checkpoints.

All integers are unsigned 32-bit little-endian unless noted; see
docs/formats.md for the byte-level layouts.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .ct import FAN, PARALLEL, Geometry, Raster, Sinogram

RASTER_MAGIC = b"CPR1"
SINOGRAM_MAGIC = b"CPS1"
CHECKPOINT_MAGIC = b"CPF1"

_BEAM_TAGS = {PARALLEL: 0, FAN: 1}
_TAG_BEAMS = {v: k for k, v in _BEAM_TAGS.items()}


class FormatError(ValueError):
    pass


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4")


def _read(buf, offset, n):
    if offset + n > len(buf):
        raise FormatError("unexpected end of file")
    return buf[offset:offset + n], offset + n


# ---------------------------------------------------------------- CPR1


def raster_bytes(raster):
    v = raster.values if isinstance(raster, Raster) else np.asarray(raster)
    h, w = v.shape
    return RASTER_MAGIC + struct.pack("<II", w, h) + _f32(v).tobytes()


def raster_from_bytes(buf):
    if buf[:4] != RASTER_MAGIC:
        raise FormatError("not a CPR1 raster")
    w, h = struct.unpack_from("<II", buf, 4)
    body = buf[12:]
    if len(body) != 4 * w * h:
        raise FormatError(f"CPR1 payload has {len(body)} bytes, expected {4 * w * h}")
    values = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    return Raster(values, (float(values.min()), float(values.max())))


def write_raster(path, raster):
    Path(path).write_bytes(raster_bytes(raster))


def read_raster(path, normalize=False):
    """Load a CPR1 file; ``normalize`` min-max scales values into [0, 1]."""
    r = raster_from_bytes(Path(path).read_bytes())
    return Raster.from_array(r.values) if normalize else r


# ---------------------------------------------------------------- CPS1


def sinogram_bytes(sino):
    g = sino.geometry
    head = SINOGRAM_MAGIC + struct.pack(
        "<BIdddd I",
        _BEAM_TAGS[g.beam],
        g.detector_count,
        g.detector_span,
        g.source_to_center,
        g.source_to_detector,
        g.angle_range,
        g.view_count,
    )
    return head + np.ascontiguousarray(g.angles, dtype="<f8").tobytes() + _f32(sino.values).tobytes()


_CPS1_HEAD = struct.Struct("<BIdddd I")


def sinogram_from_bytes(buf):
    if buf[:4] != SINOGRAM_MAGIC:
        raise FormatError("not a CPS1 sinogram")
    tag, d, span, sod, sdd, arange, v = _CPS1_HEAD.unpack_from(buf, 4)
    if tag not in _TAG_BEAMS:
        raise FormatError(f"unknown beam tag {tag}")
    off = 4 + _CPS1_HEAD.size
    raw, off = _read(buf, off, 8 * v)
    angles = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    raw, off = _read(buf, off, 4 * d * v)
    if off != len(buf):
        raise FormatError("trailing bytes after CPS1 payload")
    values = np.frombuffer(raw, dtype="<f4").reshape(d, v).astype(np.float64)
    geometry = Geometry(_TAG_BEAMS[tag], d, angles, span, sod, sdd, arange)
    return Sinogram(geometry, values)


def write_sinogram(path, sino):
    Path(path).write_bytes(sinogram_bytes(sino))


def read_sinogram(path):
    return sinogram_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- CPF1


def checkpoint_bytes(named_arrays):
    """Serialise ``(name, array)`` pairs in the given order."""
    parts = [CHECKPOINT_MAGIC]
    for name, arr in named_arrays:
        a = np.asarray(arr)
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)))
        parts.append(key)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(_f32(a).tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(buf):
    """Parse a CPF1 blob into an ordered list of ``(name, float32 array)``."""
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a CPF1 checkpoint")
    off = 4
    out = []
    while off < len(buf):
        raw, off = _read(buf, off, 4)
        (n,) = struct.unpack("<I", raw)
        raw, off = _read(buf, off, n)
        name = raw.decode("utf-8")
        raw, off = _read(buf, off, 4)
        (rank,) = struct.unpack("<I", raw)
        raw, off = _read(buf, off, 4 * rank)
        dims = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(dims)) if rank else 1
        raw, off = _read(buf, off, 4 * count)
        out.append((name, np.frombuffer(raw, dtype="<f4").reshape(dims).copy()))
    return out


def write_checkpoint(path, named_arrays):
    Path(path).write_bytes(checkpoint_bytes(named_arrays))


def read_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())


def write_sidecar(path, mapping):
    lines = [f"{k}={v}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_sidecar(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed key=value line: {line!r}")
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------- viewing / hashing


def pgm_bytes(values):
    """16-bit binary PGM (P5, big-endian samples), min-max scaled to 0..65535."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    pix = np.round(scaled * 65535).astype(">u2")
    h, w = v.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + pix.tobytes()


def write_pgm(path, values):
    if isinstance(values, Raster):
        values = values.values
    Path(path).write_bytes(pgm_bytes(values))


def git_blob_hash(data):
    """SHA-1 object id git would assign to ``data`` as a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_hash(path):
    return git_blob_hash(Path(path).read_bytes())
