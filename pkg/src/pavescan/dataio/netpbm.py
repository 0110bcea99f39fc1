"""Binary PGM (P5, 16-bit big-endian) and PPM (P6, 8-bit) codecs."""

from __future__ import annotations

import numpy as np

from ..errors import CorruptImage


def encode_pgm16(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    return header + np.asarray(pixels, dtype=">u2").tobytes()


def encode_ppm(pixels: np.ndarray) -> bytes:
    h, w, _ = pixels.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.asarray(pixels, dtype=np.uint8).tobytes()


def _parse_header(data: bytes, name: str):
    """Return (magic, width, height, maxval, offset of first sample byte)."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptImage(f"{name}: truncated header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos:pos + 1].isspace():
        raise CorruptImage(f"{name}: header not terminated by whitespace")
    pos += 1
    try:
        magic = tokens[0].decode("ascii")
        w, h, maxval = (int(t) for t in tokens[1:])
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptImage(f"{name}: unreadable header ({exc})") from None
    if w <= 0 or h <= 0:
        raise CorruptImage(f"{name}: bad dimensions {w}x{h}")
    return magic, w, h, maxval, pos


def decode_pgm16(data: bytes, name: str = "<pgm>") -> np.ndarray:
    magic, w, h, maxval, pos = _parse_header(data, name)
    if magic != "P5":
        raise CorruptImage(f"{name}: expected P5, found {magic!r}")
    if maxval != 65535:
        raise CorruptImage(f"{name}: depth maxval must be 65535, found {maxval}")
    body = data[pos:]
    if len(body) != 2 * w * h:
        raise CorruptImage(f"{name}: expected {2 * w * h} sample bytes, found {len(body)}")
    return np.frombuffer(body, dtype=">u2").reshape(h, w).astype(np.uint16)


def decode_ppm(data: bytes, name: str = "<ppm>") -> np.ndarray:
    magic, w, h, maxval, pos = _parse_header(data, name)
    if magic != "P6":
        raise CorruptImage(f"{name}: expected P6, found {magic!r}")
    if maxval != 255:
        raise CorruptImage(f"{name}: color maxval must be 255, found {maxval}")
    body = data[pos:]
    if len(body) != 3 * w * h:
        raise CorruptImage(f"{name}: expected {3 * w * h} sample bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()
