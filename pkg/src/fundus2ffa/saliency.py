"""Local saliency of angiography-like images.

The saliency map is a contrast-scaled difference between a lightly denoised
copy of the image (small Gaussian) and a background estimate (large median
whose window exceeds vessel width but stays below optic-disc size).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .image_core import as_image, gaussian_filter, median_filter


@dataclass(frozen=True)
class SaliencyConfig:
    median_kernel: int = 51
    gaussian_kernel: int = 7
    gaussian_sigma: float = 1.5
    a: float = 1.0

    def __post_init__(self):
        for name in ("median_kernel", "gaussian_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ParameterError(f"{name} must be odd and >= 1, got {k}")
        if self.gaussian_sigma <= 0:
            raise ParameterError("gaussian_sigma must be > 0")


@dataclass(frozen=True)
class SaliencyMap:
    data: np.ndarray
    a: float = 1.0

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def _single_channel(img):
    img = as_image(img)
    if img.ndim != 2:
        raise ParameterError("saliency is defined on single-channel images")
    return img


def estimate_background(img, cfg: SaliencyConfig = SaliencyConfig()) -> np.ndarray:
    return median_filter(_single_channel(img), cfg.median_kernel)


def compute_saliency(img, cfg: SaliencyConfig = SaliencyConfig()) -> SaliencyMap:
    img = _single_channel(img)
    base = gaussian_filter(img, cfg.gaussian_kernel, cfg.gaussian_sigma) - estimate_background(img, cfg)
    # computed at a=1 then scaled, so map(a) == a * map(1) bit for bit
    return SaliencyMap(base * cfg.a if cfg.a != 1.0 else base, cfg.a)


def _diverging_ramp(t):
    # blue (0) -> white (0.5) -> red (1)
    lo = np.clip(2.0 * t, 0.0, 1.0)
    hi = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    r = np.where(t < 0.5, lo, 1.0)
    g = np.where(t < 0.5, lo, 1.0 - hi)
    b = np.where(t < 0.5, 1.0, 1.0 - hi)
    return np.stack([r, g, b], axis=-1)


def saliency_to_visual(smap: SaliencyMap, color: bool = False) -> np.ndarray:
    """Render a saliency map into [0, 1] for display.

    Signed maps are scaled symmetrically so that zero lands on 0.5; maps with
    no negative values are min-max stretched.
    """
    d = np.asarray(smap.data if isinstance(smap, SaliencyMap) else smap, dtype=np.float64)
    lo, hi = float(d.min()), float(d.max())
    if lo < 0.0:
        m = max(-lo, hi)
        v = 0.5 + 0.5 * d / m
    elif hi > lo:
        v = (d - lo) / (hi - lo)
    elif hi == 0.0:
        v = np.full_like(d, 0.5)
    else:
        v = np.ones_like(d)
    v = np.clip(v, 0.0, 1.0)
    return _diverging_ramp(v) if color else v


# Raw export: uint32 width, uint32 height, then float32 row-major, all little-endian.
_RAW_HEADER = struct.Struct("<II")


def write_raw_map(path, smap: SaliencyMap) -> None:
    d = np.asarray(smap.data if isinstance(smap, SaliencyMap) else smap)
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(_RAW_HEADER.pack(w, h))
        f.write(d.astype("<f4").tobytes(order="C"))


def read_raw_map(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _RAW_HEADER.size:
        raise DataError(f"{path}: truncated raw map header")
    w, h = _RAW_HEADER.unpack_from(buf)
    body = buf[_RAW_HEADER.size:]
    if len(body) != 4 * w * h:
        raise DataError(f"{path}: expected {4 * w * h} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
