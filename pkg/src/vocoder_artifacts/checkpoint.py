"""Binary checkpoint container for a ParamStore, its model config and Adam state.

Layout (all integers little-endian; see docs/checkpoint_format.md)::

    magic            8 bytes   b"VOCARTCK"
    format_version   u32
    config_len       u32, then config_len bytes of canonical model-config JSON
    config_hash      32 bytes  sha256 of the config JSON bytes
    meta_len         u32, then meta_len bytes of free-form JSON metadata
    entry_count      u32
    entries          entry_count x entry
    has_adam         u8; if 1: step u64, lr f64, beta1 f64, beta2 f64, eps f64
    digest           32 bytes  sha256 of every preceding byte

    entry: name_len u16, name utf-8, kind u8, group u8, dtype u8, ndim u8,
           dims u32 x ndim, raw little-endian values (C order)

Saving is deterministic: identical inputs give identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndiff as nd
from .model import ModelConfig

MAGIC = b"VOCARTCK"
FORMAT_VERSION = 1
KINDS = ("param", "buffer", "adam_m", "adam_v")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
GROUP_CODES = {g: i for i, g in enumerate(nd.GROUPS)}
GROUP_CODES[None] = 255


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: nd.ParamStore
    adam: nd.AdamState | None = None
    meta: dict = field(default_factory=dict)


def _canonical(cfg: ModelConfig) -> bytes:
    return json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")


def _dtype_code(a: np.ndarray) -> int:
    for code, dt in DTYPES.items():
        if a.dtype == dt or a.dtype == dt.newbyteorder("="):
            return code
    raise CheckpointError(f"unsupported array dtype {a.dtype}")


def _entry(buf, name, kind, group, a):
    a = np.asarray(a)
    code = _dtype_code(a)
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)) + raw)
    buf.write(struct.pack("<BBBB", KINDS.index(kind), GROUP_CODES[group], code, a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes())


def to_bytes(ck: Checkpoint) -> bytes:
    buf = io.BytesIO()
    cfg = _canonical(ck.config)
    meta = json.dumps(ck.meta, sort_keys=True).encode("utf-8")
    buf.write(MAGIC + struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(cfg)) + cfg + hashlib.sha256(cfg).digest())
    buf.write(struct.pack("<I", len(meta)) + meta)
    entries = [(n, "param", ck.params.groups[n], t.data) for n, t in ck.params.params.items()]
    entries += [(n, "buffer", None, b) for n, b in ck.params.buffers.items()]
    if ck.adam is not None:
        entries += [(n, "adam_m", None, ck.adam.m[n]) for n in sorted(ck.adam.m)]
        entries += [(n, "adam_v", None, ck.adam.v[n]) for n in sorted(ck.adam.v)]
    buf.write(struct.pack("<I", len(entries)))
    for e in entries:
        _entry(buf, *e)
    if ck.adam is None:
        buf.write(b"\x00")
    else:
        a = ck.adam
        buf.write(b"\x01" + struct.pack("<Qdddd", a.step, a.lr, a.beta1, a.beta2, a.eps))
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ck: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes, expected_config: ModelConfig | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    r = _Reader(data)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version} (expected {FORMAT_VERSION})")
    (n,) = r.unpack("<I")
    cfg_bytes = r.take(n)
    stored_hash = r.take(32)
    if hashlib.sha256(cfg_bytes).digest() != stored_hash:
        raise CheckpointError("model config hash mismatch: stored hash does not match the stored config")
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n).decode("utf-8"))
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        kind, group, code, ndim = r.unpack("<BBBB")
        dims = r.unpack(f"<{ndim}I")
        dt = DTYPES.get(code)
        if dt is None or kind >= len(KINDS):
            raise CheckpointError(f"corrupt entry {name!r}")
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(size * dt.itemsize), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        entries.append((name, KINDS[kind], group, arr))
    (has_adam,) = r.unpack("<B")
    adam_hdr = r.unpack("<Qdddd") if has_adam else None
    body_end = r.pos
    digest = r.take(32)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint digest")
    if hashlib.sha256(data[:body_end]).digest() != digest:
        raise CheckpointError("checkpoint digest mismatch (file corrupted)")

    config = ModelConfig.from_dict(json.loads(cfg_bytes.decode("utf-8")))
    if expected_config is not None and _canonical(expected_config) != cfg_bytes:
        raise CheckpointError(f"model config hash mismatch: checkpoint {hashlib.sha256(cfg_bytes).hexdigest()[:12]}"
                              f" vs expected {expected_config.hash()[:12]}")
    groups = {v: k for k, v in GROUP_CODES.items()}
    params = nd.ParamStore()
    adam = nd.AdamState() if adam_hdr else None
    for name, kind, group, arr in entries:
        if kind == "param":
            params.add(name, arr, groups[group])
        elif kind == "buffer":
            params.add_buffer(name, arr)
        elif adam is not None:
            (adam.m if kind == "adam_m" else adam.v)[name] = arr.copy()
    if adam is not None:
        adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps = adam_hdr
    return Checkpoint(config, params, adam, meta)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expected_config)
