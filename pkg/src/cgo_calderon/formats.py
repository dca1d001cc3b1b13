"""The CGO2 little-endian binary container for fields and DtN maps.

Field layout::

    b"CGO2" | u32 nx | u32 ny | f64 xmin xmax ymin ymax hx hy | nx*ny (f64 re, f64 im)

DtN layout (same magic, then a sub-magic)::

    b"CGO2" | b"DTN1" | u32 M | u32 nx | u32 ny | f64 xmin xmax ymin ymax hx hy
            | u32 len | basis name (ascii) | M*M (re, im) matrix, row-major
            | M*M (re, im) difference-to-reference matrix, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .grid import ComplexField, Grid2D

MAGIC = b"CGO2"
DTN_MAGIC = b"DTN1"
_HEADER = struct.Struct("<4sII6d")
_DTN_HEADER = struct.Struct("<4s4sIII6d")

PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c16").tobytes()


def _read_complex(buf: bytes, offset: int, count: int) -> np.ndarray:
    need = offset + 16 * count
    if len(buf) < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf)}")
    return np.frombuffer(buf, dtype="<c16", count=count, offset=offset).astype(np.complex128)


def field_to_bytes(f: ComplexField) -> bytes:
    g = f.grid
    head = _HEADER.pack(MAGIC, g.nx, g.ny, g.xmin, g.xmax, g.ymin, g.ymax, g.hx, g.hy)
    return head + _complex_bytes(f.values)


def field_from_bytes(buf: bytes) -> ComplexField:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic: not a CGO2 file")
    if buf[4:8] == DTN_MAGIC:
        raise FormatError("file holds a DtN map, not a field")
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    _, nx, ny, xmin, xmax, ymin, ymax, _hx, _hy = _HEADER.unpack_from(buf)
    g = Grid2D(nx, ny, xmin, xmax, ymin, ymax)
    vals = _read_complex(buf, _HEADER.size, nx * ny)
    if len(buf) != _HEADER.size + 16 * nx * ny:
        raise FormatError("trailing bytes after field payload")
    return ComplexField(g, vals.reshape(nx, ny))


def write_field(path: PathLike, f: ComplexField) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field(path: PathLike) -> ComplexField:
    return field_from_bytes(Path(path).read_bytes())


def dtn_to_bytes(dtn) -> bytes:
    g = dtn.grid
    name = dtn.basis.encode("ascii")
    head = _DTN_HEADER.pack(
        MAGIC, DTN_MAGIC, dtn.M, g.nx, g.ny, g.xmin, g.xmax, g.ymin, g.ymax, g.hx, g.hy
    )
    return (
        head
        + struct.pack("<I", len(name))
        + name
        + _complex_bytes(dtn.matrix)
        + _complex_bytes(dtn.delta)
    )


def dtn_from_bytes(buf: bytes):
    from .forward import DtNMap

    if len(buf) < 8 or buf[:4] != MAGIC or buf[4:8] != DTN_MAGIC:
        raise FormatError("bad magic: not a CGO2/DTN1 file")
    if len(buf) < _DTN_HEADER.size + 4:
        raise FormatError("truncated header")
    _, _, M, nx, ny, xmin, xmax, ymin, ymax, _hx, _hy = _DTN_HEADER.unpack_from(buf)
    off = _DTN_HEADER.size
    (nlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    if len(buf) < off + nlen:
        raise FormatError("truncated header")
    basis = buf[off : off + nlen].decode("ascii")
    off += nlen
    mat = _read_complex(buf, off, M * M).reshape(M, M)
    off += 16 * M * M
    delta = _read_complex(buf, off, M * M).reshape(M, M)
    if len(buf) != off + 16 * M * M:
        raise FormatError("trailing bytes after DtN payload")
    return DtNMap(Grid2D(nx, ny, xmin, xmax, ymin, ymax), basis, M, mat, delta)


def write_dtn(path: PathLike, dtn) -> None:
    Path(path).write_bytes(dtn_to_bytes(dtn))


def read_dtn(path: PathLike):
    return dtn_from_bytes(Path(path).read_bytes())
