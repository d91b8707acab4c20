"""Tests for the binary field dump."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from errors import GridError
from field_dump import HEADER, MAGIC, read_field, write_field
from spectral_core import Grid, SpaceTimeField


class TestFieldDump:
    def test_vector_field_survives(self, tmp_path, grid16):
        rng = np.random.default_rng(0)
        field = SpaceTimeField(grid16, rng.standard_normal(grid16.vector_shape))
        back = read_field(write_field(tmp_path / "w.bin", field))
        assert back.grid == grid16
        assert back.is_vector
        assert_array_equal(back.values, field.values)

    def test_header_layout(self, tmp_path):
        grid = Grid(d=2, n_x=8, n_t=9)
        path = write_field(tmp_path / "theta.bin", SpaceTimeField.zeros(grid))
        data = path.read_bytes()
        assert HEADER.unpack_from(data) == (MAGIC, 1, 2, 8, 9, 1)
        assert len(data) == HEADER.size + 8 * 9 * 8 * 8

    def test_bad_magic(self, tmp_path):
        grid = Grid(d=2, n_x=8, n_t=9)
        path = write_field(tmp_path / "R.bin", SpaceTimeField.zeros(grid))
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="magic"):
            read_field(path)

    def test_truncated(self, tmp_path):
        grid = Grid(d=2, n_x=8, n_t=9)
        path = write_field(tmp_path / "R.bin", SpaceTimeField.zeros(grid))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="expected"):
            read_field(path)
        path.write_bytes(b"CIT")
        with pytest.raises(ValueError, match="header"):
            read_field(path)

    def test_header_with_odd_grid(self, tmp_path):
        path = tmp_path / "odd.bin"
        path.write_bytes(HEADER.pack(MAGIC, 1, 2, 9, 9, 1) + b"\0" * 8 * 9 * 9 * 9)
        with pytest.raises(GridError, match="n_x"):
            read_field(path)
