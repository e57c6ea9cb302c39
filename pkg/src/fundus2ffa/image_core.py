"""Raster conventions, spatial filters, ROI masking and patch extraction.

Images are plain numpy arrays in the canonical range [0, 1]: ``(H, W)`` for
single-channel data and ``(H, W, 3)`` for colour, channel-last, float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image as PILImage
from scipy import ndimage

from .errors import DataError, ParameterError

N_BINS = 256


@dataclass(frozen=True)
class FilterSpec:
    kind: str  # "median" | "gaussian"
    kernel_size: int
    sigma: float | None = None
    border: str = "reflect"

    def __post_init__(self):
        if self.kind not in ("median", "gaussian"):
            raise ParameterError(f"unknown filter kind {self.kind!r}")
        _check_odd(self.kernel_size)
        if self.kind == "gaussian" and (self.sigma is None or self.sigma <= 0):
            raise ParameterError("gaussian filter needs sigma > 0")
        if self.border != "reflect":
            raise ParameterError("only reflect borders are supported")

    def apply(self, img):
        if self.kind == "median":
            return median_filter(img, self.kernel_size)
        return gaussian_filter(img, self.kernel_size, self.sigma)


def as_image(arr, channels=None) -> np.ndarray:
    """Validate and convert ``arr`` to a float64 image array."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ParameterError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ParameterError("image has zero extent")
    if channels is not None and n_channels(img) != channels:
        raise ParameterError(f"expected {channels}-channel image, got {n_channels(img)}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("image contains non-finite values")
    return img


def n_channels(img) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img if img.ndim == 2 else img.mean(axis=2)


def _check_odd(k):
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ParameterError(f"kernel size must be a positive odd integer, got {k}")


def quantize8(img) -> np.ndarray:
    """Map [0, 1] floats onto 8-bit codes, rounding half to even."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- median


@njit(cache=True)
def _select_rank(hist, rank):
    acc = 0
    for b in range(hist.shape[0]):
        acc += hist[b]
        if acc >= rank:
            return b
    return hist.shape[0] - 1


@njit(cache=True)
def _median_sliding_hist(padded, r):
    # Column histograms slide down one row at a time; the kernel histogram
    # slides right by adding one column histogram and removing another, so
    # the per-pixel cost does not depend on the kernel size.
    hp, wp = padded.shape
    k = 2 * r + 1
    h = hp - 2 * r
    w = wp - 2 * r
    rank = (k * k) // 2 + 1
    out = np.empty((h, w), dtype=np.uint8)
    cols = np.zeros((wp, 256), dtype=np.int32)
    hist = np.zeros(256, dtype=np.int32)
    for x in range(wp):
        for yy in range(k):
            cols[x, padded[yy, x]] += 1
    for y in range(h):
        if y > 0:
            for x in range(wp):
                cols[x, padded[y - 1, x]] -= 1
                cols[x, padded[y + k - 1, x]] += 1
        hist[:] = 0
        for x in range(k):
            for b in range(256):
                hist[b] += cols[x, b]
        out[y, 0] = _select_rank(hist, rank)
        for x in range(1, w):
            add = x + k - 1
            rem = x - 1
            for b in range(256):
                hist[b] += cols[add, b] - cols[rem, b]
            out[y, x] = _select_rank(hist, rank)
    return out


def _check_median_args(img, k):
    img = as_image(img)
    if img.ndim != 2:
        raise ParameterError("median filter needs a single-channel image")
    _check_odd(k)
    h, w = img.shape
    if k > 2 * min(h, w) - 1:
        raise ParameterError(f"kernel {k} too large for {w}x{h} image (max {2 * min(h, w) - 1})")
    return img


def median_filter(img, k: int) -> np.ndarray:
    """k x k median with reflect borders, O(1) per pixel on 8-bit codes.

    Input is quantized to 256 levels first; the result is exact on
    quantized data and returned in [0, 1].
    """
    img = _check_median_args(img, k)
    r = k // 2
    padded = np.pad(quantize8(img), r, mode="reflect")
    return _median_sliding_hist(padded, r).astype(np.float64) / 255.0


def median_filter_bruteforce(img, k: int) -> np.ndarray:
    """Reference median: sort every window of the quantized image."""
    img = _check_median_args(img, k)
    r = k // 2
    q = np.pad(quantize8(img), r, mode="reflect").astype(np.float64)
    win = np.lib.stride_tricks.sliding_window_view(q, (k, k))
    return np.median(win.reshape(*win.shape[:2], -1), axis=-1) / 255.0


# -------------------------------------------------------------- gaussian


def gaussian_kernel1d(k: int, sigma: float) -> np.ndarray:
    _check_odd(k)
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    x = np.arange(k, dtype=np.float64) - k // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_kernel2d(k: int, sigma: float) -> np.ndarray:
    g = gaussian_kernel1d(k, sigma)
    return np.outer(g, g)


def gaussian_filter(img, k: int = 7, sigma: float = 1.5) -> np.ndarray:
    """Separable truncated Gaussian, normalized to unit mass, reflect borders."""
    img = as_image(img)
    g = gaussian_kernel1d(k, sigma)
    # scipy's "mirror" is reflection about the edge pixel (d c b | a b c d)
    out = ndimage.correlate1d(img, g, axis=0, mode="mirror")
    return ndimage.correlate1d(out, g, axis=1, mode="mirror")


# ----------------------------------------------------------- ROI, patches


def circular_roi_mask(width: int, height: int | None = None) -> np.ndarray:
    """Binary disc of diameter ``width`` centred in a ``height x width`` frame.

    Pixels whose centre lies in or on the circle are 1.
    """
    height = width if height is None else height
    if width <= 0 or height <= 0:
        raise ParameterError("mask size must be positive")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= (width / 2.0) ** 2
    return inside.astype(np.float64)


def apply_mask(img, mask) -> np.ndarray:
    img = as_image(img)
    mask = as_image(mask)
    if mask.ndim != 2:
        raise ParameterError("mask must be single-channel")
    if img.shape[:2] != mask.shape:
        raise ParameterError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    return img * mask if img.ndim == 2 else img * mask[:, :, None]


def _pair(v):
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def patch_origins(width, height, patch, stride):
    """Row-major (x, y) origins of every full patch on the stride grid."""
    pw, ph = _pair(patch)
    sx, sy = _pair(stride)
    if pw < 1 or ph < 1:
        raise ParameterError("patch size must be positive")
    if sx < 1 or sy < 1:
        raise ParameterError("stride must be >= 1")
    if pw > width or ph > height:
        raise ParameterError(f"patch {pw}x{ph} exceeds image {width}x{height}")
    return [(x, y) for y in range(0, height - ph + 1, sy) for x in range(0, width - pw + 1, sx)]


def extract_patches(img, patch, stride=None):
    """Cut ``img`` into patches; ``patch``/``stride`` are ints or (w, h).

    Returns a list of ``(patch_array, (x, y))`` with row-major origins.
    Stride defaults to the patch size (non-overlapping tiling).
    """
    img = as_image(img)
    pw, ph = _pair(patch)
    stride = (pw, ph) if stride is None else stride
    h, w = img.shape[:2]
    return [(img[y:y + ph, x:x + pw].copy(), (x, y)) for x, y in patch_origins(w, h, patch, stride)]


def reassemble_patches(patches, width, height, channels=1):
    """Paste patches back at their origins; uncovered pixels stay 0."""
    shape = (height, width) if channels == 1 else (height, width, channels)
    out = np.zeros(shape)
    for p, (x, y) in patches:
        out[y:y + p.shape[0], x:x + p.shape[1]] = p
    return out


# ------------------------------------------------------------------- I/O


def read_png(path, channels=None) -> np.ndarray:
    """Load an 8-bit PNG as floats in [0, 1].

    ``channels`` forces grayscale (1) or RGB (3) conversion; default keeps the
    file's own layout.
    """
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if channels == 1:
                im = im.convert("L")
            elif channels == 3 or im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def write_png(path, img) -> None:
    """Float images in [0, 1] are quantised; uint8 arrays are taken as codes."""
    if isinstance(img, np.ndarray) and img.dtype == np.uint8:
        codes = as_image(img).astype(np.uint8)
    else:
        codes = quantize8(as_image(img))
    PILImage.fromarray(codes).save(Path(path))
