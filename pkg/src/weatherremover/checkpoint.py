"""Binary checkpoint container.

Little-endian layout::

    magic      4 bytes   b"WRMV" (model) or b"WRMS" (training state)
    version    u32
    text_len   u32, then text_len bytes of UTF-8 key = value text
    count      u32
    count x {  name_len u32, name bytes, dtype u8 (1 = f32, 2 = f64),
               ndim u8, ndim x u32 dims, raw scalars }
    crc32      u32 over every preceding byte

Writes go to a temporary file that is renamed into place.
"""
from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, FormatError
from .model import WeatherRemoverModel, param_shapes
from .params import ParamStore

MODEL_MAGIC = b"WRMV"
STATE_MAGIC = b"WRMS"
VERSION = 1
_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_DTYPES = {v: k for k, v in _TAGS.items()}


def encode_container(magic: bytes, text: str, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    out = bytearray()
    out += magic + struct.pack("<I", VERSION)
    t = text.encode("utf-8")
    out += struct.pack("<I", len(t)) + t
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays:
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _TAGS:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<BB", _TAGS[dt], arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=dt).tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self.pos)
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def decode_container(buf: bytes, magic: bytes) -> tuple[str, list[tuple[str, np.ndarray]]]:
    if len(buf) < 16:
        raise FormatError("file too short to be a checkpoint", len(buf))
    if buf[:4] != magic:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {magic!r}", 0)
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch: file is corrupted", len(buf) - 4)
    r = _Reader(body)
    r.take(4, "magic")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    n = r.u32("config length")
    try:
        text = r.take(n, "config text").decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError("config text is not UTF-8", 12) from e
    count = r.u32("parameter count")
    arrays = []
    for _ in range(count):
        start = r.pos
        try:
            name = r.take(r.u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("parameter name is not UTF-8", start) from e
        tag = r.u8("dtype tag")
        if tag not in _DTYPES:
            raise FormatError(f"{name}: unknown dtype tag {tag}", r.pos - 1)
        ndim = r.u8("rank")
        if ndim > 4:
            raise FormatError(f"{name}: rank {ndim} exceeds 4", r.pos - 1)
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "shape"))
        dt = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        raw = r.take(nbytes, f"data of {name}")
        arrays.append((name, np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))))
        if not name:
            raise FormatError("empty parameter name", start)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected trailing bytes", r.pos)
    return text, arrays


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _read(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}", 0) from e


# ------------------------------------------------------------------ models

def save_params(model: WeatherRemoverModel, path) -> None:
    arrays = [(n, t.data) for n, t in model.params.items()]
    _write_atomic(Path(path), encode_container(MODEL_MAGIC, model.config.to_text(), arrays))


def load_params(path, expect: ModelConfig | None = None) -> WeatherRemoverModel:
    """Load a model checkpoint.

    The embedded config rebuilds the expected layout; any missing, extra,
    reordered or mis-shaped parameter is a :class:`FormatError`.  If ``expect``
    is given, the embedded config must equal it.
    """
    text, arrays = decode_container(_read(path), MODEL_MAGIC)
    try:
        config = ModelConfig.from_text(text)
    except ConfigError as e:
        raise FormatError(f"embedded config is invalid: {e}") from e
    if expect is not None and expect != config:
        diff = [f"{k}: file {a} vs expected {b}" for k, a, b in _config_diff(config, expect)]
        raise FormatError("checkpoint config mismatch: " + "; ".join(diff))
    want = param_shapes(config)
    if len(want) != len(arrays):
        raise FormatError(f"expected {len(want)} parameters, file has {len(arrays)}")
    store = ParamStore()
    dtypes = set()
    for (wname, wshape), (name, arr) in zip(want, arrays):
        if name != wname:
            raise FormatError(f"parameter {name!r} found where {wname!r} was expected")
        if tuple(arr.shape) != tuple(wshape):
            raise FormatError(f"{name}: shape {arr.shape} does not match config shape {wshape}")
        dtypes.add(arr.dtype)
        store.add(name, arr.copy())
    if len(dtypes) > 1:
        raise FormatError("checkpoint mixes parameter dtypes")
    return WeatherRemoverModel(config, store)


def _config_diff(a: ModelConfig, b: ModelConfig):
    from dataclasses import fields

    for f in fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if va != vb:
            yield f.name, va, vb


# ---------------------------------------------------------- training state

def save_state(path, text: str, arrays: list[tuple[str, np.ndarray]]) -> None:
    _write_atomic(Path(path), encode_container(STATE_MAGIC, text, arrays))


def load_state(path) -> tuple[str, dict[str, np.ndarray]]:
    text, arrays = decode_container(_read(path), STATE_MAGIC)
    return text, dict(arrays)
