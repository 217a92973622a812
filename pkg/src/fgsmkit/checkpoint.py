"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ADVM"                       magic
    u32  version                  currently 1
    u32  n, then n bytes          UTF-8 JSON: model spec, seed, epochs
    per layer, in order:
        u8   frozen flag
        u32  tensor count
        per tensor: u32 rank, rank x u32 dims, float32 data (row-major)
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import nn

MAGIC = b"ADVM"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_spec: dict
    params: list
    frozen: list
    seed: int = 0
    epochs: int = 0
    version: int = VERSION

    @classmethod
    def from_model(cls, model: nn.Model, seed=0, epochs=0) -> "Checkpoint":
        return cls(model.spec_dict(), model.params, list(model.frozen), seed, epochs)

    def model(self, dtype=np.float32) -> nn.Model:
        return nn.model_from_spec(self.model_spec, self.params, self.frozen, dtype)


def encode(ckpt: Checkpoint) -> bytes:
    header = json.dumps({"model": ckpt.model_spec, "seed": ckpt.seed, "epochs": ckpt.epochs}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(header)), header]
    for frozen, tensors in zip(ckpt.frozen, ckpt.params):
        parts.append(struct.pack("<BI", int(bool(frozen)), len(tensors)))
        for t in tensors:
            t = np.asarray(t)
            parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
            parts.append(t.astype("<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not an ADVM checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (n,) = r.unpack("<I")
    try:
        header = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt model spec: {exc}") from None
    spec = header["model"]
    frozen, params = [], []
    for _ in spec["layers"]:
        flag, count = r.unpack("<BI")
        frozen.append(bool(flag))
        tensors = []
        for _ in range(count):
            (rank,) = r.unpack("<I")
            dims = r.unpack(f"<{rank}I")
            size = int(np.prod(dims, dtype=np.int64))
            tensors.append(np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32))
        params.append(tensors)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(spec, params, frozen, header.get("seed", 0), header.get("epochs", 0), version)


def save_checkpoint(path, ckpt: Checkpoint):
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
