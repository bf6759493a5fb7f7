from pathlib import Path

import numpy as np
import pytest

from agricube.errors import FormatError, UsageError
from agricube.grid import BandId, GridSpec, Raster
from agricube.tiles import HEADER, IOCounter, TileFile, read_tiled, write_tiled


def raster(w=10, h=7, band=BandId.B04):
    g = GridSpec(100.0, 200.0, w, h, 10.0)
    vals = (np.arange(w * h, dtype=np.float32) / 100).reshape(h, w)
    vals[0, 0] = np.nan
    return Raster(g, vals, band=band)


def test_write_read_whole_raster(tmp_path: Path):
    r = raster()
    p = write_tiled(r, tmp_path / "b.tiles", tile_size=4)
    back = read_tiled(p, band=BandId.B04)
    assert back.grid == r.grid
    assert not back.valid_mask()[0, 0]
    np.testing.assert_array_equal(back.values[r.valid_mask()], r.values[r.valid_mask()])
    assert not list(tmp_path.glob("*.part"))


def test_window_reads_only_overlapping_tiles(tmp_path: Path):
    p = write_tiled(raster(), tmp_path / "b.tiles", tile_size=4)
    counter = IOCounter()
    part = read_tiled(p, (100, 200, 130, 230), counter=counter)
    assert part.values.shape == (3, 3)
    assert counter.tiles_read == 1
    assert part.grid.origin_x == 100.0


def test_categorical_band_stored_as_int16(tmp_path: Path):
    g = GridSpec(0, 0, 3, 3)
    scl = Raster(g, np.array([[0, 1, 2], [3, 4, 5], [1, 1, -1]], dtype=np.int16), nodata=-1, band=BandId.SCL)
    tf = TileFile(write_tiled(scl, tmp_path / "scl.tiles"))
    assert tf.dtype_name == "i16"
    out = tf.read()
    assert out.values.dtype == np.int16
    assert out.values[2, 2] == out.nodata


def test_bbox_outside_raster(tmp_path: Path):
    p = write_tiled(raster(), tmp_path / "b.tiles")
    with pytest.raises(UsageError):
        read_tiled(p, (0, 0, 10, 10))


@pytest.mark.parametrize("mutate", ["magic", "truncate", "empty"])
def test_corrupt_files_are_format_errors(tmp_path: Path, mutate):
    p = write_tiled(raster(), tmp_path / "b.tiles", tile_size=4)
    data = p.read_bytes()
    if mutate == "magic":
        data = b"XXXX" + data[4:]
    elif mutate == "truncate":
        data = data[: HEADER.size + 10]
    else:
        data = b""
    p.write_bytes(data)
    with pytest.raises(FormatError):
        read_tiled(p)


def test_missing_file(tmp_path: Path):
    with pytest.raises(FormatError):
        TileFile(tmp_path / "nope.tiles")


def test_bad_tile_size(tmp_path: Path):
    with pytest.raises(UsageError):
        write_tiled(raster(), tmp_path / "b.tiles", tile_size=0)
