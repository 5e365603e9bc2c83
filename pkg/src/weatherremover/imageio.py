"""Image files: binary PPM (P6) natively, PNG through Pillow.

Images are float64 arrays of shape (1, 3, H, W) with values in [0, 1].
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError

_WHITESPACE = b" \t\r\n\v\f"


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PPM header", start)
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    if not buf.startswith(b"P6"):
        raise FormatError("not a binary PPM file (expected magic 'P6')", 0)
    pos = 2
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE + b"#":
        raise FormatError("malformed PPM header after magic", pos)
    values = []
    for field in ("width", "height", "maxval"):
        tok_start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"PPM {field} is not a decimal integer: {tok!r}", tok_start)
        values.append(int(tok))
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise FormatError(f"PPM size {width}x{height} is not positive", pos)
    if not 0 < maxval < 256:
        raise FormatError(f"PPM maxval {maxval} unsupported (8-bit only)", pos)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace before PPM raster", pos)
    pos += 1
    need = width * height * 3
    have = len(buf) - pos
    if have < need:
        raise FormatError(f"PPM raster truncated: need {need} bytes, found {have}", len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after PPM raster", pos + need)
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    img = raster.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64) / maxval
    return np.clip(img, 0.0, 1.0)[None]


def encode_ppm(img: np.ndarray) -> bytes:
    q = to_uint8(img)
    _, H, W = q.shape
    return f"P6\n{W} {H}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()


def to_uint8(img) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) floats -> (3, H, W) uint8 via clamp and round."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {a.shape[0]}")
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {a.shape}")
    return np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}", 0) from e
    if buf.startswith(b"\x89PNG"):
        return _load_png(path)
    try:
        return decode_ppm(buf)
    except FormatError as e:
        raise FormatError(f"{path}: {e.reason}", e.offset) from None


def _load_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise FormatError(f"{path}: unreadable PNG ({e})", 0) from e
    return arr.transpose(2, 0, 1)[None]


def save_image(img, path) -> None:
    """Write PPM or PNG (by extension), clamping to [0, 1]; atomic replace."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(to_uint8(img).transpose(1, 2, 0), "RGB").save(tmp, format="PNG")
    else:
        tmp.write_bytes(encode_ppm(img))
    os.replace(tmp, path)


IMAGE_SUFFIXES = (".ppm", ".png")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        return []
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
