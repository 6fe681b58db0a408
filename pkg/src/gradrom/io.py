"""Run artifacts: GRDM binary matrices, energy CSV, legacy VTK fields, JSON.

Every writer goes through :func:`atomic_write` (temporary file in the target
directory, then rename), so a failed run never leaves half-written files.

GRDM layout (little-endian): 4-byte magic ``b"GRDM"``, uint32 version,
uint64 rows, uint64 cols, then ``rows * cols`` float64 values in
column-major order.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"GRDM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, data) -> Path:
    path = Path(path)
    payload = data.encode() if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        os.chmod(tmp, 0o666 & ~_umask())   # mkstemp creates 0600; match a plain open()
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


# -- binary matrices ---------------------------------------------------------------

def encode_matrix(A) -> bytes:
    A = np.asarray(A, dtype="<f8")
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"expected a 1D or 2D array, got shape {A.shape}")
    return _HEADER.pack(MAGIC, VERSION, A.shape[0], A.shape[1]) + A.tobytes(order="F")


def decode_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    expected = rows * cols * 8
    got = len(buf) - _HEADER.size
    if got != expected:
        off = _HEADER.size + min(got, expected)
        raise FormatError(f"payload has {got} bytes, header declares {rows}x{cols} ({expected} bytes)", off)
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.reshape((rows, cols), order="F").astype(float)


def write_matrix(path, A) -> Path:
    return atomic_write(path, encode_matrix(A))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode_matrix(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc.args[0]}") from None


# -- energy CSV --------------------------------------------------------------------

def write_energy_csv(path, times, energies) -> Path:
    out = _io.StringIO()
    out.write("t,energy\n")
    for t, e in zip(times, energies):
        out.write(f"{float(t):.17g},{float(e):.17g}\n")
    return atomic_write(path, out.getvalue())


def read_energy_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "energy"]:
        raise FormatError(f"{path}: expected header 't,energy'", 0)
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, 2)
    return data[:, 0], data[:, 1]


def write_table_csv(path, header, rows) -> Path:
    out = _io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in r])
    return atomic_write(path, out.getvalue())


# -- VTK ---------------------------------------------------------------------------

_VTK_CELL = {3: 5, 6: 22}   # linear and quadratic triangles


def vtk_text(space, fields: dict, title: str = "gradrom field") -> str:
    """Legacy ASCII unstructured grid with one point per dG node."""
    pts = space.node_coordinates()
    nK, nq = space.n_K, space.n_q
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in pts]
    lines.append(f"CELLS {nK} {nK * (nq + 1)}")
    conn = np.arange(nK * nq).reshape(nK, nq)
    lines += [" ".join(map(str, [nq, *row])) for row in conn]
    lines.append(f"CELL_TYPES {nK}")
    lines += [str(_VTK_CELL[nq])] * nK
    lines.append(f"POINT_DATA {len(pts)}")
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (len(pts),):
            raise ValueError(f"field {name!r} has shape {values.shape}, expected ({len(pts)},)")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{x:.17g}" for x in values]
    return "\n".join(lines) + "\n"


def write_vtk(path, space, fields: dict, title: str = "gradrom field") -> Path:
    return atomic_write(path, vtk_text(space, fields, title))


# -- JSON --------------------------------------------------------------------------

def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
