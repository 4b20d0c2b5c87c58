"""Single-file checkpoint container shared by the generator and recognizer.

Layout: magic, u32 manifest length, JSON manifest, raw little-endian tensor
bytes. The manifest records name/dtype/shape/offset per tensor plus free-form
metadata, so files are inspectable without torch.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .media import FormatError

CKPT_MAGIC = b"SVCK"
CKPT_VERSION = 1

_DTYPES = {
    "f4": "<f4",
    "f8": "<f8",
    "i4": "<i4",
    "i8": "<i8",
    "u1": "|u1",
    "b1": "|b1",
}


def _dtype_code(dt: np.dtype) -> str:
    code = f"{dt.kind}{dt.itemsize}"
    if code not in _DTYPES:
        raise FormatError(f"unsupported tensor dtype {dt}")
    return code


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named arrays (numpy or torch) plus metadata to one file."""
    arrays = {}
    for name, t in tensors.items():
        if isinstance(t, torch.Tensor):
            t = t.detach().cpu().numpy()
        arrays[name] = np.asarray(t)  # keep 0-d tensors 0-d; tobytes() handles layout
    entries = []
    offset = 0
    for name, a in arrays.items():
        code = _dtype_code(a.dtype)
        nbytes = a.nbytes
        entries.append(
            {"name": name, "dtype": code, "shape": list(a.shape), "offset": offset, "nbytes": nbytes}
        )
        offset += nbytes
    manifest = {"version": CKPT_VERSION, "meta": meta or {}, "tensors": entries}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for a in arrays.values():
            f.write(a.astype(_DTYPES[_dtype_code(a.dtype)], copy=False).tobytes())


def load_checkpoint(path):
    """Read a checkpoint file back as ({name: ndarray}, meta)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CKPT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r} in {path}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(blob_len).decode("utf-8"))
        if manifest.get("version") != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {manifest.get('version')} in {path}")
        data = f.read()
    tensors = {}
    for e in manifest["tensors"]:
        raw = data[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) < e["nbytes"]:
            raise FormatError(f"truncated checkpoint {path}: tensor {e['name']!r}")
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return tensors, manifest["meta"]


def save_model(path, module: torch.nn.Module, meta: dict | None = None, extra: dict | None = None) -> None:
    """Persist a module's full state (parameters and buffers) plus extras."""
    tensors = {k: v for k, v in module.state_dict().items()}
    if extra:
        tensors.update(extra)
    save_checkpoint(path, tensors, meta=meta)


def load_model(path, module: torch.nn.Module, prefix: str = ""):
    """Load a checkpoint's state into a module; returns (meta, leftover tensors).

    Tensors outside the module's state_dict (optimizer state and the like)
    are returned untouched under their stored names.
    """
    tensors, meta = load_checkpoint(path)
    state = module.state_dict()
    picked, leftover = {}, {}
    for name, arr in tensors.items():
        key = name[len(prefix) :] if prefix and name.startswith(prefix) else name
        if key in state:
            want = tuple(state[key].shape)
            if tuple(arr.shape) != want:
                raise FormatError(f"tensor {name!r}: shape {tuple(arr.shape)} != model {want}")
            picked[key] = torch.from_numpy(arr.copy())
        else:
            leftover[name] = arr
    missing = [k for k in state if k not in picked]
    if missing:
        raise FormatError(f"checkpoint {path} missing tensors: {missing[:8]}")
    module.load_state_dict(picked)
    return meta, leftover


def select_last_checkpoints(paths, k: int) -> list[Path]:
    """The final k checkpoint files in modification-time order (name-stable)."""
    paths = [Path(p) for p in paths]
    if len(paths) < k:
        raise FormatError(f"need {k} checkpoints, found {len(paths)}")
    ordered = sorted(paths, key=lambda p: (p.stat().st_mtime_ns, p.name))
    return ordered[-k:]


def average_checkpoints(paths) -> dict:
    """Elementwise mean of parameter sets, accumulated at 64-bit.

    The mean of k identical inputs reproduces them bit-exactly; integer
    tensors (batch counters) are averaged then cast back.
    """
    paths = list(paths)
    if not paths:
        raise FormatError("no checkpoints to average")
    acc = None
    dtypes = {}
    for p in paths:
        tensors, _ = load_checkpoint(p)
        if acc is None:
            acc = {name: a.astype(np.float64) for name, a in tensors.items()}
            dtypes = {name: a.dtype for name, a in tensors.items()}
        else:
            if set(tensors) != set(acc):
                extra = sorted(set(tensors) ^ set(acc))
                raise FormatError(f"checkpoint {p} tensor names differ: {extra[:8]}")
            for name, a in tensors.items():
                if a.shape != acc[name].shape:
                    raise FormatError(
                        f"checkpoint {p} tensor {name!r}: shape {a.shape} != {acc[name].shape}"
                    )
                acc[name] += a
    k = len(paths)
    out = {}
    for name, total in acc.items():
        mean = total / k
        dt = dtypes[name]
        if np.issubdtype(dt, np.integer):
            out[name] = np.rint(mean).astype(dt)
        else:
            out[name] = mean.astype(dt)
    return out


def checkpoint_hash(path) -> str:
    """sha256 of the checkpoint file bytes, used for provenance fields."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
