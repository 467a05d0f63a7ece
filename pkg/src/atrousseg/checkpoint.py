"""Binary checkpoint format.

Layout (all integers little-endian):

    magic "ASEGCKPT" | u32 version | u64 config length | config utf-8 |
    u64 iteration | u32 record count |
    per record: u16 name length | name utf-8 | u8 trainable | u8 rank |
                u64 dims... | float64 raw values (little-endian, C order) |
    8-byte blake2b checksum of everything before it

Records follow parameter-store order, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import DataError
from .params import ParamStore

MAGIC = b"ASEGCKPT"
VERSION = 1


def _digest(blob: bytes) -> bytes:
    return hashlib.blake2b(blob, digest_size=8).digest()


def save_checkpoint(path: str, config_text: str, iteration: int,
                    store: ParamStore) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    cfg = config_text.encode()
    out += struct.pack("<Q", len(cfg))
    out += cfg
    out += struct.pack("<Q", iteration)
    out += struct.pack("<I", len(store))
    for p in store:
        name = p.name.encode()
        out += struct.pack("<H", len(name))
        out += name
        out += struct.pack("<BB", int(p.trainable), p.value.ndim)
        for d in p.value.shape:
            out += struct.pack("<Q", d)
        out += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
    out += _digest(bytes(out))
    with open(path, "wb") as f:
        f.write(out)


def load_checkpoint(path: str) -> tuple[str, int, dict[str, np.ndarray]]:
    """Returns (config text, iteration, name -> value). Raises DataError on
    any structural or checksum mismatch."""
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}")
    if len(blob) < len(MAGIC) + 4 + 8 + 8:
        raise DataError(f"{path}: truncated checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic {blob[:8]!r}")
    if _digest(blob[:-8]) != blob[-8:]:
        raise DataError(f"{path}: checksum mismatch")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals if len(vals) > 1 else vals[0]

    version = take("<I")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg_len = take("<Q")
    config_text = blob[pos:pos + cfg_len].decode()
    pos += cfg_len
    iteration = take("<Q")
    count = take("<I")
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = take("<H")
        name = blob[pos:pos + name_len].decode()
        pos += name_len
        _trainable, rank = take("<BB")
        dims = tuple(take("<Q") for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
        pos += size * 8
        values[name] = arr.reshape(dims).astype(np.float64)
    if pos != len(blob) - 8:
        raise DataError(f"{path}: trailing bytes after parameter records")
    return config_text, iteration, values
