"""MSE / PSNR / SSIM on 255-scaled intensities, plus directory evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, ParameterError
from .image_core import gaussian_kernel1d, read_png, to_gray

log = logging.getLogger(__name__)

PEAK = 255.0


@dataclass(frozen=True)
class SSIMParams:
    c1: float = (0.01 * PEAK) ** 2
    c2: float = (0.03 * PEAK) ** 2
    mode: str = "global"  # "global" | "windowed"
    window: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ParameterError("SSIM constants must be positive")
        if self.mode not in ("global", "windowed"):
            raise ParameterError(f"unknown SSIM mode {self.mode!r}")


def _prep(x, y):
    x = to_gray(x) * PEAK
    y = to_gray(y) * PEAK
    if x.shape != y.shape:
        raise ParameterError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def mse(x, y) -> float:
    x, y = _prep(x, y)
    return float(np.mean((x - y) ** 2))


def psnr(x, y) -> float:
    """PSNR in dB; ``math.inf`` for identical images."""
    m = mse(x, y)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / m)


def _ssim_formula(mx, my, vx, vy, cxy, c1, c2):
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def ssim(x, y, p: SSIMParams = SSIMParams()) -> float:
    """SSIM from whole-image moments (global) or mean of Gaussian-window values.

    Variances and covariance use the population (1/N) normalisation.
    """
    x, y = _prep(x, y)
    if p.mode == "global":
        mx, my = x.mean(), y.mean()
        dx, dy = x - mx, y - my
        return float(_ssim_formula(mx, my, (dx * dx).mean(), (dy * dy).mean(), (dx * dy).mean(), p.c1, p.c2))
    if min(x.shape) < p.window:
        raise ParameterError(f"image smaller than the {p.window}x{p.window} SSIM window")
    g = gaussian_kernel1d(p.window, p.sigma)
    r = p.window // 2

    def blur(a):
        # valid windows only: drop the border rows/cols the filter would pad
        b = ndimage.correlate1d(ndimage.correlate1d(a, g, axis=0), g, axis=1)
        return b[r:-r, r:-r] if r else b

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx**2
    vy = blur(y * y) - my**2
    cxy = blur(x * y) - mx * my
    return float(np.mean(_ssim_formula(mx, my, vx, vy, cxy, p.c1, p.c2)))


@dataclass
class MetricRow:
    id: str
    mse: float
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (id, message)

    @property
    def count(self):
        return len(self.rows)

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else math.nan

    @property
    def mean_psnr(self):
        """Mean over finite PSNRs; ``inf`` if every row is identical."""
        finite = [r.psnr for r in self.rows if math.isfinite(r.psnr)]
        if finite:
            return float(np.mean(finite))
        return math.inf if self.rows else math.nan

    def to_csv(self) -> str:
        lines = ["id,mse,psnr,ssim"]
        lines += [f"{r.id},{r.mse!r},{r.psnr!r},{r.ssim!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        n_inf = sum(not math.isfinite(r.psnr) for r in self.rows)
        out = [
            f"pairs evaluated : {self.count}",
            f"mean PSNR (dB)  : {self.mean_psnr:.4f}" + (f"  ({n_inf} identical pairs excluded)" if n_inf else ""),
            f"mean SSIM       : {self.mean_ssim:.6f}",
            f"errors          : {len(self.errors)}",
        ]
        out += [f"  {name}: {msg}" for name, msg in self.errors]
        return "\n".join(out) + "\n"


def evaluate_pair(pred, ref, p: SSIMParams = SSIMParams(), name="") -> MetricRow:
    return MetricRow(name, mse(pred, ref), psnr(pred, ref), ssim(pred, ref, p))


def evaluate_dataset(pred_dir, ref_dir, p: SSIMParams = SSIMParams(), ref_glob="*.png") -> MetricReport:
    """Pair PNGs by filename and score each prediction against its reference.

    Files present on only one side become error entries.
    """
    pred_dir, ref_dir = Path(pred_dir), Path(ref_dir)
    preds = {f.name for f in pred_dir.glob("*.png")}
    refs = {f.name for f in ref_dir.glob(ref_glob)}
    report = MetricReport()
    for name in sorted(preds | refs):
        if name not in refs:
            report.errors.append((name, "no reference image"))
            continue
        if name not in preds:
            report.errors.append((name, "no prediction image"))
            continue
        try:
            row = evaluate_pair(read_png(pred_dir / name, 1), read_png(ref_dir / name, 1), p, name)
        except (DataError, ParameterError) as exc:
            report.errors.append((name, str(exc)))
            continue
        if not math.isfinite(row.psnr):
            log.info("%s: identical to reference, PSNR excluded from mean", name)
        report.rows.append(row)
    return report
