"""
Binary grid dump for SpaceTimeField samples.

Layout (little-endian):
    magic   4 bytes  b"CITL"
    version u32
    d       u32
    n_x     u32
    n_t     u32
    rank    u32      component count (1 for scalars, d for vectors)
followed by n_t·n_x^d·rank float64 values in (t, x₁..x_d, component) order.
See docs/field-dump.md.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from spectral_core import Grid, SpaceTimeField


logger = logging.getLogger(__name__)

MAGIC = b"CITL"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")


def write_field(path: Union[str, Path], field: SpaceTimeField) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    rank = grid.d if field.is_vector else 1
    with path.open("wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, grid.d, grid.n_x, grid.n_t, rank))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    logger.info(f"[DUMP] ✓ Wrote {path.name} ({'vector' if rank > 1 else 'scalar'}, {path.stat().st_size} bytes)")
    return path


def read_field(path: Union[str, Path]) -> SpaceTimeField:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, d, n_x, n_t, rank = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dump version {version}")
    grid = Grid(d=d, n_x=n_x, n_t=n_t)
    values = np.frombuffer(data, dtype="<f8", offset=HEADER.size)
    shape = grid.scalar_shape if rank == 1 else grid.vector_shape
    if values.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {values.size}")
    return SpaceTimeField(grid, values.reshape(shape).astype(float))
