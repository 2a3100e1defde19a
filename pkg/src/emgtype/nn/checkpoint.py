"""Named-tensor archive: checkpoint container for parameters and BN state.

Layout: magic ``NTA1``, u32 little-endian header length, a UTF-8 JSON
header carrying arbitrary metadata plus an ordered tensor directory
(name, shape, dtype), then the raw tensor bytes back to back in directory
order, little-endian. Round-trips are exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_MAGIC = b"NTA1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_archive(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    directory = []
    blobs = []
    for name, arr in tensors.items():
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        directory.append({"name": name, "shape": list(arr.shape), "dtype": dtype_name})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes())
    header = json.dumps({"meta": meta, "tensors": directory}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor archive")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    tensors = {}
    offset = 8 + hlen
    for entry in header["tensors"]:
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in archive")
    return tensors, header["meta"]
