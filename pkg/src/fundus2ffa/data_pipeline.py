"""Aligned structure/angiography pairs: ingestion, patching, splitting, phantoms."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, ImageDraw

from .errors import DataError, ParameterError
from .image_core import (
    apply_mask,
    as_image,
    circular_roi_mask,
    extract_patches,
    gaussian_filter,
    read_png,
    write_png,
)

log = logging.getLogger(__name__)

CATEGORIES = ("normal", "optic-disc-leakage", "large-focal-leakage", "punctate-focal-leakage", "synthetic")
STRUCT_SUFFIX = "_struct.png"
FFA_SUFFIX = "_ffa.png"


@dataclass
class AlignedPair:
    structure: np.ndarray  # (H, W, 3)
    angiography: np.ndarray  # (H, W)
    category: str
    source_id: str
    patch_id: str | None = None
    origin: tuple | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ParameterError(f"unknown category {self.category!r}")
        if self.structure.shape[:2] != self.angiography.shape[:2]:
            raise ParameterError(
                f"{self.source_id}: structure {self.structure.shape[:2]} and angiography "
                f"{self.angiography.shape[:2]} differ in size"
            )

    @property
    def id(self):
        return self.patch_id or self.source_id


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int
    ratio: float = 0.8
    notes: list = field(default_factory=list)


# ------------------------------------------------------------- ingestion


def read_exclusion_list(path) -> set:
    lines = Path(path).read_text().splitlines()
    return {ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")}


def ingest_pairs(root, exclude=(), problems=None) -> list:
    """Load ``root/<category>/<id>_struct.png`` + ``<id>_ffa.png`` pairs.

    Orphans, unreadable files and size mismatches are skipped with a warning;
    pass a list as ``problems`` to collect those messages.
    """
    root = Path(root)
    problems = [] if problems is None else problems
    exclude = set(exclude)

    def warn(msg):
        log.warning(msg)
        problems.append(msg)

    pairs = []
    if not root.is_dir():
        raise DataError(f"pairs directory not found: {root}")
    for cat_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if cat_dir.name not in CATEGORIES:
            warn(f"{cat_dir}: unknown category, skipped")
            continue
        ids = {}
        for f in sorted(cat_dir.glob("*.png")):
            for suffix, kind in ((STRUCT_SUFFIX, "struct"), (FFA_SUFFIX, "ffa")):
                if f.name.endswith(suffix):
                    ids.setdefault(f.name[: -len(suffix)], {})[kind] = f
        for sid in sorted(ids):
            files = ids[sid]
            if sid in exclude:
                log.info("%s excluded by list", sid)
                continue
            if len(files) != 2:
                have = next(iter(files.values()))
                warn(f"{have}: missing counterpart file, skipped")
                continue
            try:
                s = read_png(files["struct"], channels=3)
                a = read_png(files["ffa"], channels=1)
                pairs.append(AlignedPair(s, a, cat_dir.name, sid))
            except (DataError, ParameterError) as exc:
                warn(f"{cat_dir.name}/{sid}: rejected ({exc})")
    return pairs


def write_pairs(pairs, root) -> None:
    root = Path(root)
    for p in pairs:
        d = root / p.category
        d.mkdir(parents=True, exist_ok=True)
        write_png(d / f"{p.id}{STRUCT_SUFFIX}", p.structure)
        write_png(d / f"{p.id}{FFA_SUFFIX}", p.angiography)


# ---------------------------------------------------------- preprocessing


def preprocess_pair(pair: AlignedPair, patch, stride=None, roi="none") -> list:
    """Co-located patches of both images, optionally masked by a circular ROI."""
    if roi not in ("none", "circle"):
        raise ParameterError(f"roi must be 'none' or 'circle', got {roi!r}")
    s_patches = extract_patches(pair.structure, patch, stride)
    a_patches = extract_patches(pair.angiography, patch, stride)
    mask = None
    if roi == "circle":
        ph, pw = a_patches[0][0].shape
        mask = circular_roi_mask(pw, ph)
    out = []
    for (s, origin), (a, origin_a) in zip(s_patches, a_patches):
        assert origin == origin_a
        if mask is not None:
            s, a = apply_mask(s, mask), apply_mask(a, mask)
        x, y = origin
        out.append(AlignedPair(s, a, pair.category, pair.source_id, f"{pair.source_id}_x{x}_y{y}", origin))
    return out


def split_dataset(pairs, ratio=0.8, seed=0) -> DatasetSplit:
    """Per-category seeded shuffle, then the first ``round(ratio * n)`` go to train.

    Operates on source pairs, so patches cut afterwards never straddle the split.
    """
    if not 0 < ratio < 1:
        raise ParameterError("split ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    split = DatasetSplit([], [], seed, ratio)
    by_cat = {}
    for p in pairs:
        by_cat.setdefault(p.category, []).append(p)
    for cat in sorted(by_cat):
        group = sorted(by_cat[cat], key=lambda p: p.source_id)
        if len(group) < 2:
            msg = f"category {cat} has {len(group)} pair(s); all assigned to train"
            log.warning(msg)
            split.notes.append(msg)
            split.train += group
            continue
        order = rng.permutation(len(group))
        n_train = math.floor(len(group) * ratio + 0.5)
        split.train += [group[i] for i in order[:n_train]]
        split.test += [group[i] for i in order[n_train:]]
    return split


def dataset_manifest(split: DatasetSplit, params: dict) -> dict:
    def counts(ps):
        c = {}
        for p in ps:
            c[p.category] = c.get(p.category, 0) + 1
        return dict(sorted(c.items()))

    def sources(ps):
        return sorted({p.source_id for p in ps})

    return {
        "seed": split.seed,
        "ratio": split.ratio,
        "params": params,
        "sources": {"train": sources(split.train), "test": sources(split.test)},
        "patches": {"train": counts(split.train), "test": counts(split.test)},
        "notes": split.notes,
    }


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- phantoms

_FUNDUS_RGB = np.array([0.78, 0.42, 0.22])
_FFA_BACKGROUND = 0.12
_FFA_VESSEL = 0.45


@dataclass
class Phantom:
    structure: np.ndarray
    angiography: np.ndarray
    angiography_clean: np.ndarray  # without the leakage blob
    blob: np.ndarray  # additive blob layer, zero outside its 3-sigma disc
    blob_center: tuple | None
    blob_sigma: float | None


def _vessel_tree(rng, size):
    """Random-walk polylines with branches, drawn as a [0, 1] coverage map."""
    canvas = PILImage.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    step = max(2.0, size / 32)

    def walk(x, y, angle, width, n_steps, depth):
        pts = [(x, y)]
        for _ in range(n_steps):
            angle += rng.normal(0.0, 0.35)
            x += step * math.cos(angle)
            y += step * math.sin(angle)
            pts.append((x, y))
            if not (-size * 0.2 < x < size * 1.2 and -size * 0.2 < y < size * 1.2):
                break
        draw.line(pts, fill=255, width=int(width), joint="curve")
        if depth < 2 and width > 1:
            for _ in range(int(rng.integers(1, 3))):
                i = int(rng.integers(1, len(pts)))
                bx, by = pts[i]
                walk(bx, by, angle + rng.choice([-1, 1]) * rng.uniform(0.5, 1.1),
                     max(1, width - int(rng.integers(1, 3))), n_steps // 2 + 2, depth + 1)

    cx, cy = rng.uniform(0.3, 0.7, size=2) * size
    for _ in range(int(rng.integers(2, 5))):
        walk(cx, cy, rng.uniform(0, 2 * math.pi), int(rng.integers(3, 6)), int(rng.integers(16, 30)), 0)
    return np.asarray(canvas, dtype=np.float64) / 255.0


def render_phantom(seed, index, size) -> Phantom:
    rng = np.random.default_rng([int(seed), int(index)])
    vessels = gaussian_filter(_vessel_tree(rng, size), 3, 0.6)
    yy, xx = np.mgrid[0:size, 0:size] / size
    shade = 1.0 - 0.15 * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2)
    structure = shade[:, :, None] * _FUNDUS_RGB * (1.0 - 0.55 * vessels[:, :, None])
    clean = _FFA_BACKGROUND * shade + _FFA_VESSEL * vessels
    blob = np.zeros((size, size))
    center = sigma = None
    if rng.random() < 0.5:
        sigma = float(rng.uniform(5.0, 15.0))
        center = tuple(float(c) for c in rng.uniform(0.25, 0.75, size=2) * size)
        amp = float(rng.uniform(0.32, 0.42))
        d2 = (np.arange(size)[None, :] - center[0]) ** 2 + (np.arange(size)[:, None] - center[1]) ** 2
        blob = np.where(d2 <= (3 * sigma) ** 2, amp * np.exp(-d2 / (2 * sigma**2)), 0.0)
    return Phantom(structure, clean + blob, clean, blob, center, sigma)


def synth_phantom_pairs(n: int, size: int, seed: int = 0) -> list:
    """``n`` synthetic pairs: vessels dark in structure, bright in angiography.

    About half carry a leakage-like blob that exists only in the angiography.
    """
    if n < 1 or size < 64:
        raise ParameterError("need n >= 1 and size >= 64")
    pairs = []
    for i in range(n):
        ph = render_phantom(seed, i, size)
        pairs.append(AlignedPair(as_image(ph.structure), as_image(ph.angiography), "synthetic", f"phantom{seed}_{i:04d}"))
    return pairs
