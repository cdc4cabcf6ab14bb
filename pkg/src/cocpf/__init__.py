"""Sparse-view CT reconstruction with a coordinate-based continuous projection field."""

from .ct import FAN, PARALLEL, Geometry, Raster, Sinogram
from .fbp import fbp
from .metrics import evaluate, psnr, ssim
from .phantom import disk, shepp_logan
from .projector import project
from .train import TrainConfig, Trainer, synthesize_dense

__all__ = [
    "FAN", "PARALLEL", "Geometry", "Raster", "Sinogram", "TrainConfig", "Trainer", "disk", "evaluate", "fbp",
    "project", "psnr", "shepp_logan", "ssim", "synthesize_dense",
]
__version__ = "0.1.0"
