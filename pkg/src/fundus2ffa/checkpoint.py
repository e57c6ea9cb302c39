"""Single-file tensor checkpoints.

Layout::

    b"FUNDUS2FFA-CKPT\\n"          magic line
    uint64 little-endian           manifest length in bytes
    manifest                       UTF-8 JSON: format_version, meta, tensors
    blobs                          raw little-endian float32, C order

Each ``tensors`` entry is ``{"name", "shape", "offset"}`` with ``offset``
relative to the start of the blob region.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"FUNDUS2FFA-CKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors, meta=None) -> None:
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        a = np.ascontiguousarray(torch.as_tensor(t).detach().cpu().numpy(), dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta or {}, "tensors": entries}, sort_keys=True, indent=1
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(meta, OrderedDict[name -> float32 tensor])``."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    try:
        (n,) = struct.unpack_from("<Q", buf, pos)
        manifest = json.loads(buf[pos + 8: pos + 8 + n].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    base = pos + 8 + n
    tensors = OrderedDict()
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        if start + 4 * count > len(buf):
            raise CheckpointError(f"{path}: tensor {e['name']} truncated")
        a = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(a.copy())
    return manifest["meta"], tensors


def check_shapes(expected, found, what, path="checkpoint"):
    """Raise if ``found`` does not provide every tensor of ``expected`` with the same shape."""
    for name, t in expected.items():
        if name not in found:
            raise CheckpointError(f"{path}: {what} tensor {name!r} missing")
        if tuple(found[name].shape) != tuple(t.shape):
            raise CheckpointError(
                f"{path}: {what} tensor {name!r} has shape {tuple(found[name].shape)}, config expects {tuple(t.shape)}"
            )
