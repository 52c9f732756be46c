"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"STRAPCKP"
    version    u32
    meta_len   u64, then meta_len bytes of UTF-8 JSON (sorted keys)
    n_tensors  u32
    per tensor: name_len u16, name, ndim u8, ndim x u64 extents,
                prod(extents) x f64
    crc32      u32 over every preceding byte

Optimizer moments are stored as tensors named ``adam.m/<param>`` and
``adam.v/<param>``; everything else (config echo, seed, step count,
normalization stats) lives in the JSON block.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from strap.errors import DataError
from strap.numerics import AdamWState

MAGIC = b"STRAPCKP"
FORMAT_VERSION = 1

_M_PREFIX = "adam.m/"
_V_PREFIX = "adam.v/"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    opt_state: AdamWState | None
    config: dict
    seed: int | None = None
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors: dict[str, np.ndarray] = dict(ckpt.params)
    meta = {"config": ckpt.config, "seed": ckpt.seed, "extra": ckpt.extra, "optimizer": None}
    if ckpt.opt_state is not None:
        st = ckpt.opt_state
        meta["optimizer"] = {"step_count": st.step_count, **st.hyper()}
        for name in ckpt.params:
            if name in st.m:
                tensors[_M_PREFIX + name] = st.m[name]
                tensors[_V_PREFIX + name] = st.v[name]
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", ckpt.version)
    blob = _dumps(meta)
    out += struct.pack("<Q", len(blob))
    out += blob
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        out += struct.pack("<H", len(raw_name))
        out += raw_name
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise DataError(f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 4 + 4:
        raise DataError("checkpoint truncated: too short for a header")
    r = _Reader(buf[:-4])
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise DataError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    (meta_len,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint metadata is corrupt: {exc}") from None
    (n_tensors,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise DataError(f"checkpoint has {len(r.buf) - r.pos} unexpected trailing bytes")
    (crc,) = struct.unpack("<I", buf[-4:])
    if crc != zlib.crc32(buf[:-4]):
        raise DataError("checkpoint checksum mismatch (file corrupted)")

    params = {k: v for k, v in tensors.items() if not k.startswith((_M_PREFIX, _V_PREFIX))}
    opt = None
    if meta.get("optimizer") is not None:
        o = meta["optimizer"]
        opt = AdamWState(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], weight_decay=o["weight_decay"],
            step_count=o["step_count"],
        )
        for name in params:
            if _M_PREFIX + name in tensors:
                opt.m[name] = tensors[_M_PREFIX + name]
                opt.v[name] = tensors[_V_PREFIX + name]
    return Checkpoint(params=params, opt_state=opt, config=meta["config"], seed=meta["seed"],
                      extra=meta["extra"], version=version)


def save_checkpoint(params, opt_state, config, path, *, seed=None, extra=None) -> None:
    ckpt = Checkpoint(params=dict(params), opt_state=opt_state, config=config, seed=seed, extra=extra or {})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: checkpoint not found")
    return decode_checkpoint(path.read_bytes())
