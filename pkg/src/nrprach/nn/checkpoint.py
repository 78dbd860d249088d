"""Versioned model checkpoints.

Layout: ``b"PRNN" | version u16 | header_len u32 | JSON header | tensor bytes``.
The header carries the model and training configuration plus, for every
tensor, its name, dtype, shape and byte offset into the data block.  Tensor
order and JSON key order are fixed, so equal models give equal files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ResidualClassifier

MAGIC = b"PRNN"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ResidualClassifier, train_cfg: dict | None = None,
                    optimizer_state: dict | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups = [("param", model.parameters()), ("buffer", model.buffers()),
              ("optim", optimizer_state or {})]
    entries, blobs, offset = [], [], 0
    for group, tensors in groups:
        for name, arr in tensors.items():
            a = np.asarray(arr, order="C")
            a = a.astype(a.dtype.newbyteorder("<"), copy=False)
            entries.append({"group": group, "name": name, "dtype": a.dtype.str,
                            "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
            blobs.append(a.tobytes())
            offset += a.nbytes
    header = {"model": model.cfg.to_dict(), "train": train_cfg or {}, "meta": meta or {},
              "trained": bool(model.trained), "layers": model.spec(), "tensors": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated")
    magic, version, hlen = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    header = json.loads(data[_HEAD.size:_HEAD.size + hlen])
    base = _HEAD.size + hlen
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "optim": {}}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(data, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=start).reshape(e["shape"]).copy()
        groups[e["group"]][e["name"]] = arr
    return header, groups


def load_checkpoint(path) -> tuple[ResidualClassifier, dict, dict]:
    """Rebuild the model; returns ``(model, header, optimizer_state)``."""
    header, groups = read_checkpoint(path)
    model = ResidualClassifier(ModelConfig.from_dict(header["model"]))
    model.load_state(groups["param"], groups["buffer"])
    model.trained = bool(header.get("trained", False))
    return model, header, groups["optim"]
