from __future__ import annotations

"""Tiled raster files.

Layout (little-endian):
  header  magic b"ADC1", version u16, dtype code u8, tile rows u16,
          tile cols u16, origin x f64, origin y f64, pixel size f64,
          width u32, height u32, nodata f64
  payload full tiles (edge tiles padded with nodata) in row-then-column
          tile order, each tile row-major.

Files are written to a temporary sibling and renamed into place, so a
failed write never leaves a partial tile file behind.
"""

from dataclasses import dataclass, field
import logging
import math
import os
from pathlib import Path
import struct
import threading
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import FormatError, UsageError
from .grid import BandId, BBox, GridSpec, Raster, Window

log = logging.getLogger(__name__)

MAGIC = b"ADC1"
VERSION = 1
HEADER = struct.Struct("<4sHBHHdddIId")
DEFAULT_TILE_SIZE = 256

DTYPES: Dict[str, Tuple[int, np.dtype]] = {
    "f32": (1, np.dtype("<f4")),
    "i16": (2, np.dtype("<i2")),
    "i32": (3, np.dtype("<i4")),
    "u8": (4, np.dtype("u1")),
}
_BY_CODE = {code: (name, dt) for name, (code, dt) in DTYPES.items()}


@dataclass
class IOCounter:
    tiles_read: int = 0
    bytes_read: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, nbytes: int) -> None:
        with self._lock:
            self.tiles_read += 1
            self.bytes_read += nbytes


def _default_dtype(raster: Raster) -> str:
    if raster.band is not None:
        return raster.band.storage_dtype
    kind = raster.values.dtype
    if kind == np.bool_ or kind == np.uint8:
        return "u8"
    if kind == np.int16:
        return "i16"
    if np.issubdtype(kind, np.integer):
        return "i32"
    return "f32"


def _storable_nodata(nodata: float, dt: np.dtype) -> float:
    if np.issubdtype(dt, np.integer):
        info = np.iinfo(dt)
        if math.isnan(nodata) or not (info.min <= nodata <= info.max) or nodata != int(nodata):
            return float(info.min) if info.min < 0 else float(info.max)
    return float(nodata)


def write_tiled(raster: Raster, path: str | Path, tile_size: int = DEFAULT_TILE_SIZE,
                dtype: Optional[str] = None) -> Path:
    if tile_size < 1 or tile_size > 0xFFFF:
        raise UsageError(f"tile size out of range: {tile_size}")
    name = dtype or _default_dtype(raster)
    if name not in DTYPES:
        raise UsageError(f"unknown tile dtype {name!r}")
    code, dt = DTYPES[name]
    g = raster.grid
    nodata = _storable_nodata(raster.nodata, dt)
    ntr = -(-g.height // tile_size)
    ntc = -(-g.width // tile_size)
    ok = raster.valid_mask()
    data = np.where(ok, raster.values, nodata).astype(dt)
    padded = np.full((ntr * tile_size, ntc * tile_size), nodata, dtype=dt)
    padded[: g.height, : g.width] = data
    payload = padded.reshape(ntr, tile_size, ntc, tile_size).transpose(0, 2, 1, 3)
    header = HEADER.pack(MAGIC, VERSION, code, tile_size, tile_size, g.origin_x, g.origin_y,
                         g.pixel_size, g.width, g.height, nodata)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_name(p.name + ".part")
    try:
        with tmp.open("wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(payload).tobytes())
        os.replace(tmp, p)
    finally:
        if tmp.exists():
            tmp.unlink()
    log.debug("wrote %s (%dx%d, %d tiles, %s)", p, g.width, g.height, ntr * ntc, name)
    return p


class TileFile:
    """Random access to one tiled raster file."""

    def __init__(self, path: str | Path, crs_id: str = "LOCAL", band: Optional[BandId] = None):
        self.path = Path(path)
        self.band = band
        try:
            size = self.path.stat().st_size
            with self.path.open("rb") as f:
                raw = f.read(HEADER.size)
        except OSError as exc:
            raise FormatError(f"{self.path}: cannot read tile file ({exc})") from exc
        if len(raw) < HEADER.size:
            raise FormatError(f"{self.path}: truncated header")
        magic, version, code, trows, tcols, ox, oy, ps, width, height, nodata = HEADER.unpack(raw)
        if magic != MAGIC:
            raise FormatError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{self.path}: unsupported version {version}")
        if code not in _BY_CODE:
            raise FormatError(f"{self.path}: unknown dtype code {code}")
        if trows < 1 or tcols < 1 or width < 1 or height < 1 or not ps > 0:
            raise FormatError(f"{self.path}: invalid header geometry")
        self.dtype_name, self.dtype = _BY_CODE[code]
        self.tile_rows, self.tile_cols = trows, tcols
        self.nodata = nodata
        self.grid = GridSpec(ox, oy, width, height, ps, crs_id)
        self.n_tile_rows = -(-height // trows)
        self.n_tile_cols = -(-width // tcols)
        self.tile_bytes = trows * tcols * self.dtype.itemsize
        expected = HEADER.size + self.n_tile_rows * self.n_tile_cols * self.tile_bytes
        if size < expected:
            raise FormatError(f"{self.path}: truncated payload ({size} < {expected} bytes)")

    def tiles_for(self, window: Window) -> list:
        r0, r1, c0, c1 = window
        if r1 <= r0 or c1 <= c0:
            return []
        return [
            (tr, tc)
            for tr in range(r0 // self.tile_rows, (r1 - 1) // self.tile_rows + 1)
            for tc in range(c0 // self.tile_cols, (c1 - 1) // self.tile_cols + 1)
        ]

    def read_window(self, window: Window, counter: Optional[IOCounter] = None) -> np.ndarray:
        r0, r1, c0, c1 = window
        out = np.empty((r1 - r0, c1 - c0), dtype=self.dtype)
        with self.path.open("rb") as f:
            for tr, tc in self.tiles_for(window):
                f.seek(HEADER.size + (tr * self.n_tile_cols + tc) * self.tile_bytes)
                buf = f.read(self.tile_bytes)
                if len(buf) != self.tile_bytes:
                    raise FormatError(f"{self.path}: truncated tile ({tr}, {tc})")
                if counter is not None:
                    counter.add(len(buf))
                tile = np.frombuffer(buf, dtype=self.dtype).reshape(self.tile_rows, self.tile_cols)
                ty, tx = tr * self.tile_rows, tc * self.tile_cols
                a0, a1 = max(r0, ty), min(r1, ty + self.tile_rows)
                b0, b1 = max(c0, tx), min(c1, tx + self.tile_cols)
                out[a0 - r0:a1 - r0, b0 - c0:b1 - c0] = tile[a0 - ty:a1 - ty, b0 - tx:b1 - tx]
        return out

    def read(self, bbox: Optional[BBox] = None, counter: Optional[IOCounter] = None) -> Raster:
        window = self.grid.window(bbox)
        r0, r1, c0, c1 = window
        if r1 <= r0 or c1 <= c0:
            raise UsageError(f"{self.path}: bbox {bbox} does not intersect the raster")
        values = self.read_window(window, counter)
        grid = self.grid if window == (0, self.grid.height, 0, self.grid.width) else self.grid.subgrid(window)
        return Raster(grid, values, self.nodata, self.band)


def read_tiled(path: str | Path, bbox: Optional[BBox] = None, *, crs_id: str = "LOCAL",
               band: Optional[BandId] = None, counter: Optional[IOCounter] = None) -> Raster:
    return TileFile(path, crs_id=crs_id, band=band).read(bbox, counter)


__all__ = ["IOCounter", "TileFile", "write_tiled", "read_tiled", "MAGIC", "VERSION", "DEFAULT_TILE_SIZE"]
