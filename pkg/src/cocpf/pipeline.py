"""End-to-end runs: phantom, simulation, training, dense synthesis, FBP and scoring."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .ct import FAN_DETECTOR_RATIO, PARALLEL, Geometry, Sinogram, add_awgn, select_sparse_views
from .fbp import fbp
from .formats import file_hash, read_raster, write_pgm, write_raster, write_sinogram
from .metrics import evaluate, psnr
from .phantom import disk, shepp_logan
from .projector import project
from .train import TrainConfig, Trainer, save_checkpoint, synthesize_dense

DENSE_VIEWS = 720
METHODS = ("fbp_sparse", "bicubic_fbp", "cocpf")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def bicubic_upsample_sinogram(sino, n_views):
    """Cubic-spline interpolation along the angle axis onto ``n_views`` uniform angles.

    Parallel data are treated as periodic over [0, pi) with the detector flipped at
    the seam, p(s, t + pi) = p(-s, t). Fan data use a not-a-knot spline.
    """
    g = sino.geometry
    if n_views < g.view_count:
        raise ValueError("target view count must not be below the input view count")
    targets = np.arange(n_views) * (g.angle_range / n_views)
    angles = np.asarray(g.angles, dtype=np.float64)
    values = np.asarray(sino.values, dtype=np.float64)
    if g.beam == PARALLEL:
        period = 2.0 * g.angle_range
        knots = np.concatenate([angles, angles + g.angle_range, [angles[0] + period]])
        data = np.concatenate([values, values[::-1], values[:, :1]], axis=1)
        spline = CubicSpline(knots, data, axis=1, bc_type="periodic")
        out = spline(angles[0] + np.mod(targets - angles[0], period))
    elif g.view_count < 2:
        out = np.repeat(values, n_views, axis=1)
    else:
        bc = "not-a-knot" if g.view_count > 3 else "natural"
        out = CubicSpline(angles, values, axis=1, bc_type=bc)(targets)
    return Sinogram(g.with_angles(targets), out)


def make_phantom(name):
    if name == "shepp_logan":
        return shepp_logan()
    if name == "disk":
        return disk()
    raise ValueError(f"unknown phantom {name!r}")


def geometry_for(beam, size, n_views):
    if beam == PARALLEL:
        return Geometry.parallel(size, n_views)
    return Geometry.fan(int(math.ceil(FAN_DETECTOR_RATIO * size)), n_views)


@dataclass
class RunManifest:
    """Everything needed to repeat a run, plus what it produced."""

    out_dir: str
    phantom: str = "shepp_logan"
    input_raster: str = ""
    size: int = 128
    beam: str = PARALLEL
    sparse_views: int = 30
    dense_views: int = DENSE_VIEWS
    noise_sigma: float = 0.0
    seed: int = 0
    workers: int = 1
    precision: str = "f32"
    train: dict = field(default_factory=dict)
    input_hashes: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def train_config(self):
        cfg = TrainConfig.from_dict(self.train) if self.train else TrainConfig()
        return cfg.replace(seed=self.seed)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _record(manifest, key, path):
    manifest.outputs[key] = {"path": str(path), "hash": file_hash(path)}


def verify_outputs(manifest):
    """Names of manifest outputs whose content hash no longer matches."""
    return [k for k, rec in manifest.outputs.items() if file_hash(rec["path"]) != rec["hash"]]


def _score(reference, estimate):
    return evaluate(reference, estimate).to_dict()


def run_pipeline(manifest, log=None):
    """Run every stage, writing artifacts under ``manifest.out_dir``; returns the report dict."""
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.float64 if manifest.precision == "f64" else np.float32
    cfg = manifest.train_config()
    say = log or (lambda msg: None)
    state = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        say(f"[{name}] start")
        try:
            result = fn()
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
            manifest.timings[name] = None
            # keep what earlier stages produced
            (out / "manifest.json").write_text(manifest.to_json() + "\n")
            raise StageError(name, exc) from exc
        manifest.timings[name] = round(time.perf_counter() - t0, 3)
        say(f"[{name}] done in {manifest.timings[name]:.1f}s")
        return result

    def phantom_stage():
        if manifest.input_raster:
            manifest.input_hashes["input_raster"] = file_hash(manifest.input_raster)
            img = read_raster(manifest.input_raster, normalize=True)
        else:
            img = make_phantom(manifest.phantom).rasterize(manifest.size)
        write_raster(out / "phantom.cpr", img)
        _record(manifest, "phantom", out / "phantom.cpr")
        return img

    def simulate_stage():
        img = state["phantom"]
        dense_geo = geometry_for(manifest.beam, img.width, manifest.dense_views)
        dense = project(img, dense_geo, workers=manifest.workers)
        sparse = select_sparse_views(dense, manifest.sparse_views)
        sparse = add_awgn(sparse, manifest.noise_sigma, np.random.default_rng([manifest.seed, 7]))
        write_sinogram(out / "dense_true.cps", dense)
        write_sinogram(out / "sparse.cps", sparse)
        _record(manifest, "dense_true", out / "dense_true.cps")
        _record(manifest, "sparse", out / "sparse.cps")
        return dense, sparse

    def baseline_stage():
        _, sparse = state["sim"]
        size = state["phantom"].width
        rec_fbp = fbp(sparse, output_size=size)
        bicubic = bicubic_upsample_sinogram(sparse, manifest.dense_views)
        rec_bic = fbp(bicubic, output_size=size)
        for key, obj in (("fbp_sparse", rec_fbp), ("bicubic_fbp", rec_bic)):
            write_raster(out / f"{key}.cpr", obj)
            _record(manifest, key, out / f"{key}.cpr")
        write_sinogram(out / "dense_bicubic.cps", bicubic)
        _record(manifest, "dense_bicubic", out / "dense_bicubic.cps")
        return rec_fbp, bicubic, rec_bic

    def train_stage():
        _, sparse = state["sim"]
        trainer = Trainer(sparse, cfg, dtype=dtype)
        trainer.run(log_every=max(1, cfg.max_iters // 20),
                    callback=lambda r: say(f"  iter {r.iteration} loss {r.loss:.4g} lr {r.lr:.2e}"))
        save_checkpoint(out / "model.cpf", trainer.model, trainer.iteration)
        _record(manifest, "checkpoint", out / "model.cpf")
        with open(out / "train_log.csv", "w") as fh:
            fh.write("iter,loss,lr,wall_ms\n")
            for r in trainer.log:
                fh.write(f"{r.iteration},{r.loss!r},{r.lr!r},{r.wall_ms:.1f}\n")
        return trainer.model

    def synth_stage():
        dense = synthesize_dense(state["model"], n_views=manifest.dense_views)
        write_sinogram(out / "dense_cocpf.cps", dense)
        _record(manifest, "dense_cocpf", out / "dense_cocpf.cps")
        rec = fbp(dense, output_size=state["phantom"].width)
        write_raster(out / "cocpf.cpr", rec)
        _record(manifest, "cocpf", out / "cocpf.cpr")
        return dense, rec

    state["phantom"] = stage("phantom", phantom_stage)
    state["sim"] = stage("simulate", simulate_stage)
    state["baselines"] = stage("baselines", baseline_stage)
    state["model"] = stage("train", train_stage)
    state["synth"] = stage("synthesize", synth_stage)

    def eval_stage():
        ref = state["phantom"].values
        dense_true = state["sim"][0]
        rec_fbp, bicubic, rec_bic = state["baselines"]
        dense_cocpf, rec_cocpf = state["synth"]
        report = {
            "fbp_sparse": _score(ref, rec_fbp.values),
            "bicubic_fbp": _score(ref, rec_bic.values),
            "cocpf": _score(ref, rec_cocpf.values),
        }
        rng = float(dense_true.values.max() - dense_true.values.min())
        report["dense_sinogram_psnr"] = {
            "bicubic": psnr(dense_true.values, bicubic.values, rng),
            "cocpf": psnr(dense_true.values, dense_cocpf.values, rng),
        }
        for key in METHODS:
            write_pgm(out / f"{key}.pgm", (rec_fbp, rec_bic, rec_cocpf)[METHODS.index(key)].values)
        return report

    report = stage("eval", eval_stage)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _record(manifest, "report", out / "report.json")
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return report

