"""Saliency-guided conditional GAN for fundus-to-angiography translation."""

from .errors import CheckpointError, DataError, NumericFault, ParameterError
from .image_core import (
    apply_mask,
    circular_roi_mask,
    extract_patches,
    gaussian_filter,
    median_filter,
    read_png,
    write_png,
)
from .losses import LossReport, LossWeights, total_loss
from .metrics import SSIMParams, evaluate_dataset, mse, psnr, ssim
from .saliency import SaliencyConfig, SaliencyMap, compute_saliency, estimate_background, saliency_to_visual

__version__ = "0.1.0"
