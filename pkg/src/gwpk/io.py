"""GWPK1 binary array container and JSON sidecars.

Layout (little-endian)::

    b"GWPK1" | u32 version | u8 dtype (0=f64, 1=c128) | u8 rank | u64 dims[rank] | payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GWPK1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


class ContainerError(ValueError):
    """File is not a well-formed GWPK1 container."""


def encode_array(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_ or np.issubdtype(arr.dtype, np.integer) or np.issubdtype(arr.dtype, np.floating):
        code = 0
    elif np.iscomplexobj(arr):
        code = 1
    else:
        raise TypeError(f"cannot store dtype {arr.dtype} in GWPK1")
    data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    header = MAGIC + struct.pack("<IBB", VERSION, code, data.ndim)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + data.tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    if buf[:5] != MAGIC:
        raise ContainerError("bad magic")
    try:
        version, code, rank = struct.unpack_from("<IBB", buf, 5)
    except struct.error as exc:
        raise ContainerError("truncated header") from exc
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise ContainerError(f"unknown dtype code {code}")
    off = 5 + 6
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    if len(buf) - off != count * dtype.itemsize:
        raise ContainerError("payload length does not match dims")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def write_array(path, arr, meta: dict | None = None) -> Path:
    """Write ``arr`` to ``path`` and, if given, ``meta`` to ``path + '.json'``."""
    path = Path(path)
    path.write_bytes(encode_array(arr))
    if meta is not None:
        write_json(path.with_name(path.name + ".json"), meta)
    return path


def read_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def read_meta(path) -> dict | None:
    side = Path(path).with_name(Path(path).name + ".json")
    if not side.exists():
        return None
    return json.loads(side.read_text())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, complex | np.complexfloating):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, repr-exact floats, NaN/inf as strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n")
    return path


# sparse triplets: one (nnz, 3) complex array of [row, col, value]
def encode_triplets(rows, cols, vals) -> np.ndarray:
    out = np.empty((len(vals), 3), dtype=np.complex128)
    out[:, 0] = rows
    out[:, 1] = cols
    out[:, 2] = vals
    return out


def decode_triplets(arr: np.ndarray):
    arr = np.asarray(arr)
    return arr[:, 0].real.astype(np.int64), arr[:, 1].real.astype(np.int64), arr[:, 2].copy()
