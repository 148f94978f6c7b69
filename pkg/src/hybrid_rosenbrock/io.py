"""CSV, binary and JSON writers shared by sample batches, chains and reports.

Binary layout (little endian)::

    bytes 0-7    magic b"HROSENBK"
    bytes 8-15   uint64 format version
    bytes 16-23  uint64 number of rows N
    bytes 24-31  uint64 number of columns (dim)
    then N * dim float64 values, row-major
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HROSENBK"
BINARY_VERSION = 1
_HEADER = struct.Struct("<8sQQQ")


def format_float(v) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(v))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_matrix_csv(path, header, data):
    data = np.asarray(data, dtype=float)
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(map(format_float, row)) + "\n")
    return Path(path)


def read_matrix_csv(path):
    with Path(path).open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_binary(path, data):
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2:
        raise ValueError("binary writer expects a 2-d array")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, BINARY_VERSION, data.shape[0], data.shape[1]))
        fh.write(data.tobytes(order="C"))
    return Path(path)


def read_binary(path):
    raw = Path(path).read_bytes()
    magic, version, n, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a sample file (bad magic {magic!r})")
    if version != BINARY_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n * dim:
        raise ValueError(f"{path}: expected {n * dim} values, found {body.size}")
    return body.reshape(n, dim).astype(float)


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))
    return Path(path)
