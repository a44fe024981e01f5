"""Checkpoint files.

Layout::

    b"MCGC" | u32 format version | u64 index length | index (UTF-8 JSON) | array bytes | sha256

The index maps every array name to its shape, dtype, offset and byte count
and carries the run metadata (step, config text, vocabulary text, answer
classes). The trailing SHA-256 covers everything before it, so truncated or
corrupted files are rejected before any state is built.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import Config, parse_config
from .text import Vocabulary

MAGIC = b"MCGC"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DIGEST = 32


class CheckpointError(RuntimeError):
    pass


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")  # ascontiguousarray would promote 0-d arrays
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": index, "meta": meta}).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())
    os.replace(tmp, path)


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    _, version, header_len = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if len(data) < _PREFIX.size + header_len + _DIGEST or hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum failure (truncated or corrupted file)")
    header = json.loads(body[_PREFIX.size : _PREFIX.size + header_len])
    start = _PREFIX.size + header_len
    arrays = {}
    for entry in header["arrays"]:
        lo = start + entry["offset"]
        raw = body[lo : lo + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def list_index(path) -> list[dict]:
    """Array index without loading the blobs into tensors."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    _, version, header_len = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    return json.loads(data[_PREFIX.size : _PREFIX.size + header_len])["arrays"]


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


def save_checkpoint(path, model, optimizer, cfg: Config, step: int) -> None:
    arrays = {f"param/{name}": _to_numpy(p) for name, p in model.named_parameters()}
    if optimizer is not None:
        names = {id(p): name for name, p in model.named_parameters()}
        for p, state in optimizer.state.items():
            for key, value in state.items():
                arrays[f"optim/{names[id(p)]}/{key}"] = _to_numpy(torch.as_tensor(value))
    meta = {
        "step": int(step),
        "config": cfg.to_text(),
        "vocab": model.vocab.to_text(),
        "answer_classes": list(model.answer_classes),
    }
    write_arrays(path, arrays, meta)


@dataclass
class Restored:
    model: object
    optimizer: object
    cfg: Config
    step: int


def load_checkpoint(path, with_optimizer=True) -> Restored:
    """Rebuild model, optimizer and config exactly as saved."""
    from .training import DTYPES, make_optimizer
    from .model import MCG

    arrays, meta = read_arrays(path)
    cfg = parse_config(meta["config"], source=f"{path}:config")
    cfg.validate()
    vocab = Vocabulary.from_text(meta["vocab"])
    model = MCG(cfg, vocab, meta.get("answer_classes") or None).to(DTYPES[cfg.train.dtype])
    params = dict(model.named_parameters())
    missing = [n for n in params if f"param/{n}" not in arrays]
    if missing:
        raise CheckpointError(f"{path}: missing arrays for {missing[:5]}")
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(torch.from_numpy(arrays[f"param/{name}"]))
    optimizer = None
    if with_optimizer:
        optimizer = make_optimizer(model, cfg)
        for name, p in params.items():
            prefix = f"optim/{name}/"
            state = {k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
            if state:
                optimizer.state[p] = state
    return Restored(model, optimizer, cfg, int(meta["step"]))
