"""Versioned little-endian binary checkpoints.

Layout::

    b"MHCL"  u32 version
    u64 meta length, UTF-8 ``key=value`` lines (config snapshot and run metadata)
    u64 tensor count
    per tensor: u64 name length, UTF-8 name, u64 rank, rank x u64 dims, float64 payload
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import CorruptionError, FormatError, ShapeError
from .ndcore import AdamState

MAGIC = b"MHCL"
VERSION = 1
_ADAM_M, _ADAM_V = "adam.m.", "adam.v."


@dataclass
class Checkpoint:
    config: TrainConfig
    tensors: dict
    best_metric: float = float("nan")
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model, best_metric=float("nan"), optimizer=None, meta=None):
        tensors = {name: p.data.copy() for name, p in model.named_parameters().items()}
        opt = None
        if optimizer is not None:
            opt = AdamState(optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps, optimizer.step,
                            {k: v.copy() for k, v in optimizer.m.items()},
                            {k: v.copy() for k, v in optimizer.v.items()})
        base = {"n_users": model.n_users, "n_items": model.n_items,
                "categories": ",".join(str(c) for c in model.categories)}
        return cls(model.config, tensors, best_metric, opt, {**base, **(meta or {})})

    def apply_to(self, model):
        """Copy stored tensors into ``model``; any shape disagreement names the tensor."""
        named = model.named_parameters()
        for name, p in named.items():
            if name not in self.tensors:
                raise FormatError(f"checkpoint has no tensor {name!r}")
            stored = self.tensors[name]
            if stored.shape != p.shape:
                raise ShapeError(f"tensor {name!r}: checkpoint shape {stored.shape}, model shape {p.shape}")
            p.data[...] = stored
        return model


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<Q", len(raw)) + raw


def _pack_tensor(name, arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = _pack_str(name) + struct.pack("<Q", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, ckpt: Checkpoint):
    meta = dict(ckpt.meta)
    meta["best_metric"] = repr(float(ckpt.best_metric))
    tensors = dict(ckpt.tensors)
    if ckpt.optimizer is not None:
        o = ckpt.optimizer
        meta.update(adam_step=o.step, adam_lr=repr(o.lr), adam_beta1=repr(o.beta1),
                    adam_beta2=repr(o.beta2), adam_eps=repr(o.eps))
        for name in sorted(o.m):
            tensors[_ADAM_M + name] = o.m[name]
            tensors[_ADAM_V + name] = o.v[name]
    text = ckpt.config.to_text() + "".join(f"@{k}={v}\n" for k, v in meta.items())
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        fh.write(_pack_str(text))
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            fh.write(_pack_tensor(name, arr))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def text(self):
        try:
            return self.take(self.u64()).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError("checkpoint text is not valid UTF-8") from None


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic {buf[:4]!r})")
    r = _Reader(buf)
    r.take(4)
    version = struct.unpack("<I", r.take(4))[0]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    config_lines, meta = [], {}
    for line in r.text().splitlines():
        if line.startswith("@"):
            k, v = line[1:].split("=", 1)
            meta[k] = v
        else:
            config_lines.append(line)
    tensors = {}
    for _ in range(r.u64()):
        name = r.text()
        rank = r.u64()
        if rank > 8:
            raise CorruptionError(f"tensor {name!r}: implausible rank {rank}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise CorruptionError(f"{path}: {len(buf) - r.pos} trailing bytes")
    optimizer = None
    if "adam_step" in meta:
        optimizer = AdamState(float(meta.pop("adam_lr")), float(meta.pop("adam_beta1")),
                              float(meta.pop("adam_beta2")), float(meta.pop("adam_eps")), int(meta.pop("adam_step")))
        for name in list(tensors):
            if name.startswith(_ADAM_M):
                optimizer.m[name[len(_ADAM_M):]] = tensors.pop(name)
            elif name.startswith(_ADAM_V):
                optimizer.v[name[len(_ADAM_V):]] = tensors.pop(name)
    best = float(meta.pop("best_metric", "nan"))
    return Checkpoint(TrainConfig.from_text("\n".join(config_lines)), tensors, best, optimizer, meta, version)
