"""Versioned binary container for named arrays plus a JSON meta block.

Used for parameter checkpoints and precomputed embedding files. The layout is
fixed-endian and carries no timestamps, so identical content always produces
identical bytes.
"""

import json
import struct

import numpy as np

MAGIC = b"SPARRAY1"
VERSION = 1

_ALLOWED_DTYPES = {"<f8", "<f4", "<i8", "<i4"}


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays and an optional JSON-serializable meta dict."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            dtype = arr.dtype.newbyteorder("<")
            if dtype.str not in _ALLOWED_DTYPES:
                arr = arr.astype("<f8")
                dtype = arr.dtype
            elif arr.dtype != dtype:
                arr = arr.astype(dtype)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            dtype_bytes = dtype.str.encode("ascii")
            fh.write(struct.pack("<B", len(dtype_bytes)))
            fh.write(dtype_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for size in arr.shape:
                fh.write(struct.pack("<Q", size))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path) -> tuple[dict, dict]:
    """Read back (arrays, meta) written by save_arrays."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a recognized array container (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (dtype_len,) = struct.unpack("<B", fh.read(1))
            dtype = np.dtype(fh.read(dtype_len).decode("ascii"))
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n_bytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            data = fh.read(n_bytes)
            arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
        return arrays, meta
