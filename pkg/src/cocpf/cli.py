"""Command-line entry point: ``cocpf <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ct import FAN, PARALLEL, add_awgn, select_sparse_views
from .fbp import WINDOWS, fbp
from .formats import FormatError, read_raster, read_sidecar, read_sinogram, write_pgm, write_raster, write_sinogram
from .metrics import evaluate
from .pipeline import RunManifest, StageError, geometry_for, make_phantom, run_pipeline
from .projector import project
from .train import NumericalError, TrainConfig, Trainer, load_checkpoint, synthesize_dense

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("COCPF_WORKERS")
    return int(env) if env else 1


def _dtype(args):
    return np.float64 if args.precision == "f64" else np.float32


def _load_config(path, seed):
    mapping = read_sidecar(path) if path else {}
    mapping["seed"] = seed
    return TrainConfig.from_dict(mapping)


def cmd_phantom(args):
    img = make_phantom(args.name).rasterize(args.size)
    write_raster(args.out, img)
    if args.pgm:
        write_pgm(args.pgm, img)


def cmd_simulate(args):
    img = read_raster(args.raster, normalize=args.normalize)
    if img.width != img.height:
        raise ValueError("simulation expects a square raster")
    sino = project(img, geometry_for(args.beam, img.width, args.views), workers=_workers(args))
    if args.sparse:
        sino = select_sparse_views(sino, args.sparse)
    sino = add_awgn(sino, args.noise, np.random.default_rng(args.seed))
    write_sinogram(args.out, sino)


def cmd_fbp(args):
    rec = fbp(read_sinogram(args.sinogram), window=args.window, output_size=args.size)
    write_raster(args.out, rec)
    if args.pgm:
        write_pgm(args.pgm, rec)


def cmd_train(args):
    sino = read_sinogram(args.sinogram)
    cfg = _load_config(args.config, args.seed)
    trainer = Trainer(sino, cfg, dtype=_dtype(args))
    log = open(args.log, "w") if args.log else sys.stdout
    try:
        log.write("iter,loss,lr,wall_ms\n")
        trainer.run(log_every=args.log_every,
                    callback=lambda r: (log.write(f"{r.iteration},{r.loss!r},{r.lr!r},{r.wall_ms:.1f}\n"),
                                        log.flush()))
    finally:
        if log is not sys.stdout:
            log.close()
    trainer.save(args.checkpoint_out)


def cmd_synthesize(args):
    model, _ = load_checkpoint(args.checkpoint)
    dense = synthesize_dense(model, n_views=args.views, seed=args.seed if model.cfg.synth_jitter else None)
    write_sinogram(args.out, dense)


def cmd_eval(args):
    ref = read_raster(args.reference).values
    est = read_raster(args.estimate).values
    report = evaluate(ref, est, args.data_range).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_pipeline(args):
    train = read_sidecar(args.config) if args.config else {}
    manifest = RunManifest(out_dir=args.out_dir, phantom=args.phantom, input_raster=args.raster or "",
                           size=args.size, beam=args.beam, sparse_views=args.views, dense_views=args.dense_views,
                           noise_sigma=args.noise, seed=args.seed, workers=_workers(args),
                           precision=args.precision, train=train)
    report = run_pipeline(manifest, log=lambda m: print(m, file=sys.stderr, flush=True))
    print(json.dumps(report, indent=2, sort_keys=True))


def _global_flags(parser, **defaults):
    kw = {k: {"default": v} for k, v in defaults.items()}
    parser.add_argument("--seed", type=int, **kw.get("seed", {}))
    parser.add_argument("--workers", type=int, help="defaults to $COCPF_WORKERS or 1", **kw.get("workers", {}))
    parser.add_argument("--precision", choices=("f32", "f64"), **kw.get("precision", {}))


def build_parser():
    p = argparse.ArgumentParser(prog="cocpf", description="Sparse-view CT with a continuous projection field.")
    _global_flags(p, seed=0, workers=None, precision="f32")
    # subcommands accept the same flags; SUPPRESS keeps them from overriding the top-level values
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _global_flags(common)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", parents=[common], help="rasterise a phantom to CPR1")
    s.add_argument("--name", choices=("shepp_logan", "disk"), default="shepp_logan")
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--out", required=True)
    s.add_argument("--pgm")
    s.set_defaults(fn=cmd_phantom)

    s = sub.add_parser("simulate", parents=[common], help="project a raster to a CPS1 sinogram")
    s.add_argument("--raster", required=True)
    s.add_argument("--beam", choices=(PARALLEL, FAN), default=PARALLEL)
    s.add_argument("--views", type=int, default=720)
    s.add_argument("--sparse", type=int, default=0, help="keep this many uniformly spaced views")
    s.add_argument("--noise", type=float, default=0.0, help="AWGN standard deviation")
    s.add_argument("--normalize", action="store_true", help="min-max scale the raster first")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("fbp", parents=[common], help="filtered back-projection of a CPS1 sinogram")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--window", choices=WINDOWS, default="none")
    s.add_argument("--size", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--pgm")
    s.set_defaults(fn=cmd_fbp)

    s = sub.add_parser("train", parents=[common], help="fit the field to a sparse sinogram")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--config", help="key=value file of training options")
    s.add_argument("--checkpoint-out", required=True)
    s.add_argument("--log-every", type=int, default=100)
    s.add_argument("--log", help="CSV log path (default stdout)")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("synthesize", parents=[common], help="render a dense-view sinogram from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--views", type=int, default=720)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synthesize)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of an estimate against a reference")
    s.add_argument("reference")
    s.add_argument("estimate")
    s.add_argument("--data-range", type=float)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("pipeline", parents=[common], help="phantom to report in one run")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--phantom", choices=("shepp_logan", "disk"), default="shepp_logan")
    s.add_argument("--raster", help="use this CPR1 image instead of a phantom")
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--beam", choices=(PARALLEL, FAN), default=PARALLEL)
    s.add_argument("--views", type=int, default=30)
    s.add_argument("--dense-views", type=int, default=720)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--config", help="key=value file of training options")
    s.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericalError) else EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
