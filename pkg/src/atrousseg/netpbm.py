"""Binary netpbm I/O: P6 (PPM, RGB) images and P5 (PGM, grayscale) labels.

Only maxval 255 is supported. Readers report malformed headers with the
byte offset of the offending token. Round-trips are lossless: labels are
stored as raw class indices, images quantize to 8 bits.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise DataError(f"unterminated comment at byte {pos}")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise DataError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _read_header(data: bytes, magic: bytes, path: str):
    tok, pos = _read_token(data, 0)
    if tok != magic:
        raise DataError(f"{path}: expected magic {magic.decode()} at byte 0, got "
                        f"{tok[:8]!r}")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise DataError(f"{path}: non-numeric {name} at byte {pos - len(tok)}")
        fields.append(int(tok))
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise DataError(f"{path}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates header and raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DataError(f"{path}: missing raster separator at byte {pos}")
    return w, h, pos + 1


def read_ppm(path: str) -> np.ndarray:
    """Read a binary P6 file as an (h, w, 3) uint8 array."""
    data = open(path, "rb").read()
    w, h, pos = _read_header(data, b"P6", path)
    need = w * h * 3
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise DataError(f"{path}: raster truncated at byte {pos + len(raster)} "
                        f"(expected {need} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm(path: str) -> np.ndarray:
    """Read a binary P5 file as an (h, w) uint8 array."""
    data = open(path, "rb").read()
    w, h, pos = _read_header(data, b"P5", path)
    need = w * h
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise DataError(f"{path}: raster truncated at byte {pos + len(raster)} "
                        f"(expected {need} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_ppm(path: str, rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DataError(f"write_ppm: expected (h,w,3) uint8, got {rgb.shape} "
                        f"{rgb.dtype}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


def write_pgm(path: str, gray: np.ndarray) -> None:
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise DataError(f"write_pgm: expected (h,w) uint8, got {gray.shape} "
                        f"{gray.dtype}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.tobytes())
