"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SLCK1"                      magic
    u32                           format version
    u32 + bytes                   canonical config text (UTF-8)
    u32                           blob count
    per blob:
        u32 + bytes               name (UTF-8)
        u8                        dtype code
        u32                       rank
        u64 * rank                dims
        raw values                little-endian, row-major
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SLCK1"
VERSION = 1

DTYPES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("<i4"),
    4: np.dtype("u1"),
    5: np.dtype("?"),
}
_CODES = {dt.str[1:]: code for code, dt in DTYPES.items()}


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


@dataclass
class CheckpointState:
    config_text: str
    blobs: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def parameter_count(self) -> int:
        return sum(int(b.size) for b in self.blobs.values())


def _code(arr: np.ndarray) -> int:
    try:
        return _CODES[arr.dtype.str[1:]]
    except KeyError:
        raise TypeError(f"unsupported checkpoint dtype {arr.dtype}") from None


def encode(state: CheckpointState) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", state.version))
    cfg = state.config_text.encode("utf-8")
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    out.write(struct.pack("<I", len(state.blobs)))
    for name, arr in state.blobs.items():
        arr = np.asarray(arr)
        code = _code(arr)
        raw_name = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<BI", code, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> CheckpointState:
    r = _Reader(data)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", r.pos - 4)
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        config_text = r.take(cfg_len, "config").decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointFormatError("config is not valid UTF-8", r.pos - cfg_len) from None
    (count,) = r.unpack("<I", "blob count")
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<I", "blob name length")
        name = r.take(name_len, "blob name").decode("utf-8", errors="strict")
        code, rank = r.unpack("<BI", "blob header")
        if code not in DTYPES:
            raise CheckpointFormatError(f"blob {name!r}: unknown dtype code {code}", r.pos - 5)
        dims = r.unpack(f"<{rank}Q", "blob dims")
        dt = DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        raw = r.take(nbytes, f"blob {name!r} values")
        if name in blobs:
            raise CheckpointFormatError(f"duplicate blob {name!r}", start)
        blobs[name] = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} trailing bytes", r.pos)
    return CheckpointState(config_text, blobs, version)


def save_checkpoint(state: CheckpointState, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(state))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> CheckpointState:
    return decode(Path(path).read_bytes())
