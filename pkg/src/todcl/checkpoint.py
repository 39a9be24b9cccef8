"""Binary checkpoints: base parameters, adapters keyed by task label, vocabulary.

Layout: ``MAGIC``, a little-endian uint64 header length, a UTF-8 JSON header
and then every array as little-endian float64 in header order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapters import AdapterBank, AdapterParams
from .autograd import Tensor
from .data.vocab import Tokenizer
from .model import LmConfig, TransformerLM, param_names

MAGIC = b"TODCLCK1"


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    model: TransformerLM
    adapters: list[AdapterParams] = field(default_factory=list)
    tokenizer: Tokenizer | None = None
    extra: dict = field(default_factory=dict)

    def added_params(self) -> int:
        return sum(a.num_params() for a in self.adapters)

    def bank(self) -> AdapterBank:
        return AdapterBank(self.model, list(self.adapters))


def save_checkpoint(path, model: TransformerLM, adapters=(), tokenizer: Tokenizer | None = None,
                    extra: dict | None = None) -> None:
    arrays = []
    header = {"config": model.config.to_dict(), "params": [], "adapters": [],
              "vocab": tokenizer.itos if tokenizer is not None else None, "extra": extra or {}}
    for name in param_names(model.config):
        header["params"].append([name, list(model.params[name].shape)])
        arrays.append(model.params[name].data)
    for a in adapters:
        entry = {"task": a.task_label, "bottleneck": a.bottleneck, "n_layers": a.n_layers, "weights": []}
        for k, w in a.weights.items():
            entry["weights"].append([k, list(w.shape)])
            arrays.append(w.data)
        header["adapters"].append(entry)
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    offset = 16 + n

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape)) * 8
        if offset + size > len(raw):
            raise CheckpointError(f"{path}: truncated data")
        arr = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += size
        return arr

    model = TransformerLM(LmConfig(**header["config"]))
    for name, shape in header["params"]:
        model.params[name].data = take(shape)
    adapters = []
    for entry in header["adapters"]:
        weights = {k: Tensor(take(shape), requires_grad=True, name=f"{entry['task']}:{k}")
                   for k, shape in entry["weights"]}
        adapters.append(AdapterParams(entry["task"], entry["bottleneck"], weights, entry["n_layers"]))
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    tok = Tokenizer(header["vocab"]) if header.get("vocab") else None
    return Checkpoint(model, adapters, tok, header.get("extra", {}))
