"""Binary PPM (P6) and PGM (P5) codecs, maxval 255 only.

Samples decode as byte / 255 and encode as round(clamp(x, 0, 1) * 255),
rounding halves up.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from priornet.errors import BadMagicError, DataIOError, FormatError, MaxvalError, TruncatedPayloadError

_WHITESPACE = b" \t\n\r\v\f"


def _header_fields(buf: bytes, count: int) -> tuple[list[int], int]:
    """Parse ``count`` integers after the 2-byte magic; returns them and the payload offset."""
    pos, fields = 2, []
    while len(fields) < count:
        if pos >= len(buf):
            raise TruncatedPayloadError("truncated payload: header ends early")
        ch = buf[pos:pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        else:
            start = pos
            while pos < len(buf) and buf[pos:pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise FormatError(f"malformed header: unexpected byte {ch!r} at offset {pos}")
            fields.append(int(buf[start:pos]))
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise TruncatedPayloadError("truncated payload: no separator after the header")
    return fields, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """P6 -> float64 (3, H, W); P5 -> float64 (H, W)."""
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise BadMagicError(f"bad magic {magic!r}: expected binary PPM (P6) or PGM (P5)")
    (width, height, maxval), offset = _header_fields(buf, 3)
    if maxval != 255:
        raise MaxvalError(f"maxval {maxval} is not supported (only 255)")
    if width < 1 or height < 1:
        raise FormatError(f"image extents must be positive, got {width}x{height}")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"truncated payload: header promises {need} bytes, found {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return px.reshape(height, width)
    return px.reshape(height, width, 3).transpose(2, 0, 1).copy()


def _levels(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)


def quantize(img: np.ndarray) -> np.ndarray:
    """The float64 image that ``decode(encode(img))`` would return."""
    return _levels(np.asarray(img, dtype=np.float64)) / 255.0


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    q = _levels(img).astype(np.uint8)
    if q.ndim == 2:
        h, w = q.shape
        return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()
    if q.ndim == 3 and q.shape[0] == 3:
        _, h, w = q.shape
        return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()
    raise FormatError(f"cannot encode array of shape {img.shape}; expected HxW or 3xHxW")


def read_image(path: str | Path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    try:
        return decode(buf)
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def write_image(img: np.ndarray, path: str | Path) -> None:
    data = encode(img)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
