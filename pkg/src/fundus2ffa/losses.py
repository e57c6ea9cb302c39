"""Adversarial, pixel, perceptual and local-saliency losses.

All functions take ``(N, C, H, W)`` tensors and return scalar tensors so they
can be differentiated; :func:`total_loss` produces the plain-float report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from numba import njit

from .errors import NumericFault, ParameterError
from .image_core import gaussian_kernel1d, median_filter, quantize8
from .saliency import SaliencyConfig

EPS = 1e-12
GRAD_MODES = ("detached", "exact")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 100.0  # pixel
    beta: float = 0.001  # perceptual
    gamma: float = 1.0  # saliency

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    gan: float
    pixel: float
    perceptual: float
    saliency: float
    total: float

    CSV_HEADER = "iteration,gan,pixel,perceptual,saliency,total"

    def csv_row(self, iteration: int) -> str:
        return f"{iteration},{self.gan!r},{self.pixel!r},{self.perceptual!r},{self.saliency!r},{self.total!r}"


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def adversarial_g_loss(fake_scores):
    return -torch.log(fake_scores.clamp(min=EPS)).mean()


def adversarial_d_loss(real_scores, fake_scores):
    return -torch.log(real_scores.clamp(min=EPS)).mean() - torch.log((1.0 - fake_scores).clamp(min=EPS)).mean()


def pixel_l1(generated, target):
    """Channel-summed absolute error averaged over pixels (and batch)."""
    _same_shape(generated, target)
    return (target - generated).abs().sum(dim=1).mean()


def perceptual_loss(generated, target, fx):
    """Channel-summed squared feature error averaged over feature-map positions."""
    _same_shape(generated, target)
    d = fx(target) - fx(generated)
    return (d * d).sum(dim=1).mean()


# ------------------------------------------------------------ saliency


def gaussian_blur(x, k: int, sigma: float):
    """Separable Gaussian on (N, C, H, W) with reflect padding."""
    g = torch.as_tensor(gaussian_kernel1d(k, sigma), dtype=x.dtype, device=x.device)
    c = x.shape[1]
    r = k // 2
    x = F.pad(x, (r, r, r, r), mode="reflect")
    x = F.conv2d(x, g.view(1, 1, k, 1).expand(c, 1, k, 1), groups=c)
    return F.conv2d(x, g.view(1, 1, 1, k).expand(c, 1, 1, k), groups=c)


@njit(cache=True)
def _median_argsel(padded, med, k):
    # flat index (into ``padded``) of the first window element, in row-major
    # window order, whose code equals the window median
    h, w = med.shape
    wp = padded.shape[1]
    out = np.empty((h, w), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            m = med[y, x]
            found = -1
            for dy in range(k):
                row = y + dy
                for dx in range(k):
                    if padded[row, x + dx] == m:
                        found = row * wp + x + dx
                        break
                if found >= 0:
                    break
            out[y, x] = found
    return out


def median_background(x, k: int, grad_mode: str = "detached"):
    """k x k median background of a single-channel batch.

    ``detached``: a constant of the forward pass. ``exact``: same forward
    value, gradient routed to the selected window element.
    """
    if grad_mode not in GRAD_MODES:
        raise ParameterError(f"grad_mode must be one of {GRAD_MODES}")
    if x.shape[1] != 1:
        raise ParameterError("median background needs single-channel input")
    arr = x.detach().cpu().double().numpy()
    med = np.stack([median_filter(arr[n, 0], k) for n in range(arr.shape[0])])[:, None]
    med_t = torch.as_tensor(med, dtype=x.dtype, device=x.device)
    if grad_mode == "detached":
        return med_t
    r = k // 2
    xp = F.pad(x, (r, r, r, r), mode="reflect")
    picked = []
    for n in range(arr.shape[0]):
        codes = np.pad(quantize8(arr[n, 0]), r, mode="reflect")
        idx = _median_argsel(codes, quantize8(med[n, 0]), k)
        idx_t = torch.as_tensor(idx.ravel(), device=x.device)
        picked.append(xp[n, 0].reshape(-1).gather(0, idx_t).view(1, *idx.shape))
    sel = torch.stack(picked)
    # forward equals the quantized median; backward flows through ``sel``
    return sel + (med_t - sel).detach()


def saliency_tensor(x, cfg: SaliencyConfig = SaliencyConfig(), grad_mode: str = "detached", background=None):
    """Differentiable saliency of a single-channel batch.

    ``background`` overrides the median estimate (used to freeze it).
    """
    if background is None:
        background = median_background(x, cfg.median_kernel, grad_mode)
    s = gaussian_blur(x, cfg.gaussian_kernel, cfg.gaussian_sigma) - background
    return s * cfg.a if cfg.a != 1.0 else s


def saliency_loss(generated, target_saliency, cfg: SaliencyConfig = SaliencyConfig(), grad_mode="detached", background=None):
    """Mean squared difference between saliency of ``generated`` and a fixed target map."""
    target_saliency = torch.as_tensor(target_saliency, dtype=generated.dtype, device=generated.device)
    if target_saliency.dim() == 2:
        target_saliency = target_saliency[None, None]
    _same_shape(generated, target_saliency)
    d = target_saliency.detach() - saliency_tensor(generated, cfg, grad_mode, background)
    return (d * d).mean()


# --------------------------------------------------------------- total


def weighted_total(gan, pixel, perceptual, saliency, w: LossWeights = LossWeights()):
    """Differentiable combined objective; raises on any non-finite term."""
    for name, v in (("gan", gan), ("pixel", pixel), ("perceptual", perceptual), ("saliency", saliency)):
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise NumericFault(f"loss term {name} is not finite ({v})", term=name)
    return gan + w.alpha * pixel + w.beta * perceptual + w.gamma * saliency


def total_loss(gan, pixel, perceptual, saliency, w: LossWeights = LossWeights()) -> LossReport:
    terms = [float(v) for v in (gan, pixel, perceptual, saliency)]
    total = float(weighted_total(*terms, w))
    return LossReport(*terms, total)
