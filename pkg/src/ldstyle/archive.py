"""Single-file named-tensor archive.

This is the one on-disk container used for encoder weights, training
checkpoints and pretrained depth weights.

Layout (all integers little-endian):

    magic           4 bytes  b"LDST"
    schema_version  u32
    n_records       u32
    records         n_records times:
        u32 name_len, name (utf-8)
        u32 dtype_len, numpy dtype string (utf-8, e.g. "<f4")
        u32 ndim, ndim * u64 dims
        u64 data_len, raw array bytes (C order, little-endian)
    config          u64 text_len, utf-8 key=value text block

Arrays round-trip bit-exactly: they are written as raw buffers, never
re-encoded.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointFormatError, CorruptionError

MAGIC = b"LDST"
SCHEMA_VERSION = 1


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"archive truncated: wanted {n} bytes, got {len(data)}")
    return data


def save_archive(path, arrays: dict[str, np.ndarray], config_text: str = "",
                 schema_version: int = SCHEMA_VERSION) -> None:
    """Write `arrays` and an optional config text block to `path` atomically."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", schema_version))
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", len(dtype_b)))
        buf.write(dtype_b)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        raw = arr.tobytes()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    text_b = config_text.encode("utf-8")
    buf.write(struct.pack("<Q", len(text_b)))
    buf.write(text_b)

    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_archive(path) -> tuple[dict[str, np.ndarray], str]:
    """Read `(arrays, config_text)` from `path`.

    Raises CorruptionError for bad magic/truncation and
    CheckpointFormatError for an unsupported schema version.
    """
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CorruptionError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version = struct.unpack("<I", _read_exact(f, 4))[0]
        if version != SCHEMA_VERSION:
            raise CheckpointFormatError(
                f"{path}: schema version {version} not supported "
                f"(this build reads version {SCHEMA_VERSION})")
        n_records = struct.unpack("<I", _read_exact(f, 4))[0]
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            name_len = struct.unpack("<I", _read_exact(f, 4))[0]
            name = _read_exact(f, name_len).decode("utf-8")
            dtype_len = struct.unpack("<I", _read_exact(f, 4))[0]
            dtype = np.dtype(_read_exact(f, dtype_len).decode("utf-8"))
            ndim = struct.unpack("<I", _read_exact(f, 4))[0]
            shape = tuple(struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(ndim))
            data_len = struct.unpack("<Q", _read_exact(f, 8))[0]
            expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if data_len != expected:
                raise CorruptionError(
                    f"{path}: record {name!r} declares {data_len} bytes, "
                    f"shape/dtype imply {expected}")
            raw = _read_exact(f, data_len)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        text_len = struct.unpack("<Q", _read_exact(f, 8))[0]
        config_text = _read_exact(f, text_len).decode("utf-8")
    return arrays, config_text


def parse_config_text(text: str) -> dict[str, str]:
    """Parse a key=value config block (``#`` comments, blank lines allowed)."""
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def format_config_text(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())
