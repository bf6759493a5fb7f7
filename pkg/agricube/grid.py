from __future__ import annotations

"""Grids, rasters and the multidimensional cube.

Conventions shared by every module:
  - pixel (r, c) has its centre at (origin_x + (c + 0.5) * pixel_size,
    origin_y + (r + 0.5) * pixel_size); y grows downward with the row index.
  - timestamps are integer days since 1970-01-01 (UTC).
  - bounding boxes are (xmin, ymin, xmax, ymax) in CRS metres; a pixel is
    inside a bbox when its centre is (closed interval).
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    CategoricalResampleError,
    DuplicateError,
    GridMismatchError,
    UsageError,
)
from .periods import DateLike, to_day

log = logging.getLogger(__name__)

BBox = Tuple[float, float, float, float]
Window = Tuple[int, int, int, int]  # row0, row1, col0, col1 (half-open)

DEFAULT_NODATA = -9999.0
RESAMPLE_METHODS = ("nearest", "bilinear")


class BandId(str, Enum):
    B02 = "B02"
    B03 = "B03"
    B04 = "B04"
    B08 = "B08"
    NDVI = "NDVI"
    SIGMA0_VV = "SIGMA0_VV"
    SIGMA0_VH = "SIGMA0_VH"
    COHERENCE_VV = "COHERENCE_VV"
    SCL = "SCL"

    @property
    def unit(self) -> str:
        return _BAND_META[self][0]

    @property
    def valid_range(self) -> Tuple[float, float]:
        return _BAND_META[self][1]

    @property
    def categorical(self) -> bool:
        return self is BandId.SCL

    @property
    def sensor(self) -> str:
        return _BAND_META[self][2]

    @property
    def storage_dtype(self) -> str:
        return "i16" if self.categorical else "f32"

    @classmethod
    def parse(cls, name: "str | BandId") -> "BandId":
        if isinstance(name, BandId):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise UsageError(f"unknown band {name!r} (expected one of {', '.join(b.value for b in cls)})") from None


_BAND_META: Dict[BandId, Tuple[str, Tuple[float, float], str]] = {
    BandId.B02: ("reflectance", (0.0, 1.0), "S2"),
    BandId.B03: ("reflectance", (0.0, 1.0), "S2"),
    BandId.B04: ("reflectance", (0.0, 1.0), "S2"),
    BandId.B08: ("reflectance", (0.0, 1.0), "S2"),
    BandId.NDVI: ("index", (-1.0, 1.0), "S2"),
    BandId.SIGMA0_VV: ("dB", (-50.0, 10.0), "S1"),
    BandId.SIGMA0_VH: ("dB", (-50.0, 10.0), "S1"),
    BandId.COHERENCE_VV: ("coherence", (0.0, 1.0), "S1"),
    BandId.SCL: ("class", (0.0, 5.0), "S2"),
}

BAND_ORDER = {b: i for i, b in enumerate(BandId)}


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    width: int
    height: int
    pixel_size: float = 10.0
    crs_id: str = "LOCAL"

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise UsageError(f"pixel_size must be positive, got {self.pixel_size}")
        if self.width < 1 or self.height < 1:
            raise UsageError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def bounds(self) -> BBox:
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.width * self.pixel_size,
            self.origin_y + self.height * self.pixel_size,
        )

    def x_centers(self) -> np.ndarray:
        return self.origin_x + (np.arange(self.width) + 0.5) * self.pixel_size

    def y_centers(self) -> np.ndarray:
        return self.origin_y + (np.arange(self.height) + 0.5) * self.pixel_size

    def aligned(self, other: "GridSpec") -> bool:
        return self == other

    def window(self, bbox: Optional[BBox]) -> Window:
        """Pixel window whose centres fall inside bbox, clipped to the grid."""
        if bbox is None:
            return (0, self.height, 0, self.width)
        xmin, ymin, xmax, ymax = bbox
        ps = self.pixel_size
        c0 = max(0, math.ceil((xmin - self.origin_x) / ps - 0.5))
        c1 = min(self.width, math.floor((xmax - self.origin_x) / ps - 0.5) + 1)
        r0 = max(0, math.ceil((ymin - self.origin_y) / ps - 0.5))
        r1 = min(self.height, math.floor((ymax - self.origin_y) / ps - 0.5) + 1)
        return (r0, max(r0, r1), c0, max(c0, c1))

    def window_bbox(self, window: Window) -> BBox:
        r0, r1, c0, c1 = window
        ps = self.pixel_size
        return (self.origin_x + c0 * ps, self.origin_y + r0 * ps,
                self.origin_x + c1 * ps, self.origin_y + r1 * ps)

    def subgrid(self, window: Window) -> "GridSpec":
        r0, r1, c0, c1 = window
        if r1 <= r0 or c1 <= c0:
            raise UsageError(f"empty window {window}")
        return replace(
            self,
            origin_x=self.origin_x + c0 * self.pixel_size,
            origin_y=self.origin_y + r0 * self.pixel_size,
            width=c1 - c0,
            height=r1 - r0,
        )

    def pad_window(self, window: Window, pixels: int) -> Window:
        r0, r1, c0, c1 = window
        return (max(0, r0 - pixels), min(self.height, r1 + pixels),
                max(0, c0 - pixels), min(self.width, c1 + pixels))

    def to_dict(self) -> Dict[str, object]:
        return {
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "width": self.width,
            "height": self.height,
            "pixel_size": self.pixel_size,
            "crs_id": self.crs_id,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "GridSpec":
        return cls(
            origin_x=float(data["origin_x"]),  # type: ignore[arg-type]
            origin_y=float(data["origin_y"]),  # type: ignore[arg-type]
            width=int(data["width"]),  # type: ignore[arg-type]
            height=int(data["height"]),  # type: ignore[arg-type]
            pixel_size=float(data.get("pixel_size", 10.0)),  # type: ignore[arg-type]
            crs_id=str(data.get("crs_id", "LOCAL")),
        )


@dataclass(frozen=True)
class Raster:
    grid: GridSpec
    values: np.ndarray
    nodata: float = DEFAULT_NODATA
    band: Optional[BandId] = None

    def __post_init__(self):
        v = _freeze(self.values)
        if v.shape != self.grid.shape:
            raise GridMismatchError(f"raster values {v.shape} do not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def valid_mask(self) -> np.ndarray:
        v = self.values
        if np.issubdtype(v.dtype, np.floating):
            ok = np.isfinite(v)
            if not math.isnan(self.nodata):
                ok &= v != self.nodata
            return ok
        return v != self.nodata


def resample_to_grid(src: Raster, target: GridSpec, method: str = "nearest") -> Raster:
    """Sample src at every target pixel centre (nearest or bilinear)."""
    if method not in RESAMPLE_METHODS:
        raise UsageError(f"unknown resampling method {method!r}")
    if src.grid.crs_id != target.crs_id:
        raise GridMismatchError(f"CRS mismatch: {src.grid.crs_id} vs {target.crs_id}")
    if method == "bilinear" and src.band is not None and src.band.categorical:
        raise CategoricalResampleError(f"bilinear resampling is not defined for categorical band {src.band.value}")
    if src.grid.aligned(target):
        return Raster(target, np.array(src.values, copy=True), src.nodata, src.band)

    sg = src.grid
    u = (target.x_centers() - sg.origin_x) / sg.pixel_size - 0.5
    v = (target.y_centers() - sg.origin_y) / sg.pixel_size - 0.5
    in_x = (u >= -0.5) & (u < sg.width - 0.5)
    in_y = (v >= -0.5) & (v < sg.height - 0.5)
    inside = in_y[:, None] & in_x[None, :]
    src_ok = src.valid_mask()

    if method == "nearest":
        ci = np.clip(np.floor(u + 0.5).astype(np.int64), 0, sg.width - 1)
        ri = np.clip(np.floor(v + 0.5).astype(np.int64), 0, sg.height - 1)
        out = src.values[ri[:, None], ci[None, :]].copy()
        ok = inside & src_ok[ri[:, None], ci[None, :]]
        out[~ok] = src.nodata
        return Raster(target, out, src.nodata, src.band)

    c0 = np.floor(u).astype(np.int64)
    fx = u - c0
    r0 = np.floor(v).astype(np.int64)
    fy = v - r0
    c0c, c1c = np.clip(c0, 0, sg.width - 1), np.clip(c0 + 1, 0, sg.width - 1)
    r0c, r1c = np.clip(r0, 0, sg.height - 1), np.clip(r0 + 1, 0, sg.height - 1)
    vals = np.where(src_ok, src.values, 0).astype(np.result_type(src.values.dtype, np.float32))
    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]
    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    corners = (
        (r0c, c0c, wy0 * wx0),
        (r0c, c1c, wy0 * wx1),
        (r1c, c0c, wy1 * wx0),
        (r1c, c1c, wy1 * wx1),
    )
    out = np.zeros(target.shape, dtype=np.float64)
    bad = ~inside
    for rr, cc, w in corners:
        out += w * vals[rr[:, None], cc[None, :]]
        bad |= (w > 0) & ~src_ok[rr[:, None], cc[None, :]]
    out = out.astype(vals.dtype)
    out[bad] = src.nodata
    return Raster(target, out, src.nodata, src.band)


@dataclass(frozen=True)
class CubeArray:
    grid: GridSpec
    times: np.ndarray
    bands: Tuple[BandId, ...]
    values: np.ndarray
    valid: np.ndarray
    attrs: Dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = _freeze(np.asarray(self.times, dtype=np.int64))
        bands = tuple(BandId.parse(b) for b in self.bands)
        values = _freeze(self.values)
        valid = _freeze(np.asarray(self.valid, dtype=bool))
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise UsageError("cube times must be strictly increasing")
        if len(set(bands)) != len(bands):
            raise DuplicateError(f"cube bands must be unique: {[b.value for b in bands]}")
        if values.ndim != 4 or values.shape[:2] != (times.size, len(bands)) or valid.shape != values.shape:
            raise GridMismatchError(f"cube arrays have inconsistent shapes {values.shape} / {valid.shape}")
        if values.shape[2:] != self.grid.shape and values.size:
            raise GridMismatchError(f"cube spatial shape {values.shape[2:]} does not match grid {self.grid.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    def band_index(self, band: "BandId | str") -> int:
        b = BandId.parse(band)
        try:
            return self.bands.index(b)
        except ValueError:
            from .errors import UnknownAttributeError
            raise UnknownAttributeError(f"band {b.value} not present in cube") from None

    def band(self, band: "BandId | str") -> Tuple[np.ndarray, np.ndarray]:
        i = self.band_index(band)
        return self.values[:, i], self.valid[:, i]

    def masked(self, band: "BandId | str") -> np.ndarray:
        """Band values as float64 with NaN wherever invalid."""
        v, ok = self.band(band)
        return np.where(ok, v, np.nan).astype(np.float64)

    def with_valid(self, valid: np.ndarray) -> "CubeArray":
        return CubeArray(self.grid, self.times, self.bands, self.values, valid, dict(self.attrs))

    def with_band(self, band: "BandId | str", values: np.ndarray, valid: np.ndarray) -> "CubeArray":
        b = BandId.parse(band)
        if b in self.bands:
            raise DuplicateError(f"band {b.value} already in cube")
        vals = np.concatenate([self.values, values[:, None].astype(self.values.dtype)], axis=1)
        ok = np.concatenate([self.valid, valid[:, None]], axis=1)
        return CubeArray(self.grid, self.times, self.bands + (b,), vals, ok, dict(self.attrs))

    def select(self, time_range=None, bands=None, bbox: Optional[BBox] = None) -> "CubeArray":
        return select(self, time_range, bands, bbox)

    def to_xarray(self):
        import xarray as xr

        data = np.where(self.valid, self.values, np.nan)
        return xr.DataArray(
            data,
            dims=("time", "band", "y", "x"),
            coords={
                "time": self.times.astype("datetime64[D]").astype("datetime64[ns]"),
                "band": [b.value for b in self.bands],
                "y": self.grid.y_centers(),
                "x": self.grid.x_centers(),
            },
            attrs={"crs": self.grid.crs_id, "pixel_size": self.grid.pixel_size},
        )


def _time_slice(times: np.ndarray, time_range) -> slice:
    if time_range is None:
        return slice(0, times.size)
    start, end = time_range
    lo = 0 if start is None else int(np.searchsorted(times, to_day(start), side="left"))
    hi = times.size if end is None else int(np.searchsorted(times, to_day(end), side="left"))
    return slice(lo, max(lo, hi))


def select(cube: CubeArray, time_range: Optional[Tuple[Optional[DateLike], Optional[DateLike]]] = None,
           bands: Optional[Iterable["BandId | str"]] = None, bbox: Optional[BBox] = None) -> CubeArray:
    """Sub-cube over the half-open time interval [start, end), bands and bbox.

    Empty selections give a cube with a zero-length axis.
    """
    ts = _time_slice(cube.times, time_range)
    if bands is None:
        bidx = list(range(len(cube.bands)))
    else:
        bidx = [cube.band_index(b) for b in bands]
    r0, r1, c0, c1 = cube.grid.window(bbox)
    if r1 <= r0 or c1 <= c0:
        # zero-extent spatial axes keep the parent grid (a GridSpec is at least 1x1)
        empty = np.zeros((ts.stop - ts.start, len(bidx), 0, 0), dtype=cube.values.dtype)
        return CubeArray(cube.grid, cube.times[ts], tuple(cube.bands[i] for i in bidx), empty,
                         np.zeros(empty.shape, dtype=bool), {"empty": True})
    grid = cube.grid if (r0, r1, c0, c1) == (0, cube.grid.height, 0, cube.grid.width) else cube.grid.subgrid((r0, r1, c0, c1))
    if bidx == list(range(len(cube.bands))):
        vals = cube.values[ts, :, r0:r1, c0:c1]
        ok = cube.valid[ts, :, r0:r1, c0:c1]
    else:
        vals = cube.values[ts][:, bidx, r0:r1, c0:c1]
        ok = cube.valid[ts][:, bidx, r0:r1, c0:c1]
    return CubeArray(grid, cube.times[ts], tuple(cube.bands[i] for i in bidx), vals, ok, dict(cube.attrs))


def stack_cube(rasters: Sequence[Tuple[DateLike, "BandId | str", Raster]], target: GridSpec,
               method: str = "nearest", bands: Optional[Sequence["BandId | str"]] = None) -> CubeArray:
    """Dense cube from (timestamp, band, raster) triples resampled onto target.

    Absent (time, band) slices and nodata pixels are invalid. Duplicate
    (time, band) pairs must carry identical data.
    """
    slices: Dict[Tuple[int, BandId], Raster] = {}
    for ts, band, raster in rasters:
        t = to_day(ts)
        b = BandId.parse(band)
        if raster.band is None:
            raster = replace(raster, band=b)
        m = "nearest" if b.categorical else method
        r = raster if raster.grid.aligned(target) else resample_to_grid(raster, target, m)
        key = (t, b)
        prev = slices.get(key)
        if prev is not None:
            same = np.array_equal(prev.valid_mask(), r.valid_mask()) and np.array_equal(
                np.where(prev.valid_mask(), prev.values, 0), np.where(r.valid_mask(), r.values, 0))
            if not same:
                raise DuplicateError(f"conflicting data for ({t}, {b.value})")
            log.debug("dropping identical duplicate slice (%s, %s)", t, b.value)
            continue
        slices[key] = r
    times = np.array(sorted({t for t, _ in slices}), dtype=np.int64)
    if bands is None:
        band_list = sorted({b for _, b in slices}, key=lambda b: BAND_ORDER[b])
    else:
        band_list = [BandId.parse(b) for b in bands]
    t_index = {int(t): i for i, t in enumerate(times)}
    b_index = {b: i for i, b in enumerate(band_list)}
    shape = (times.size, len(band_list)) + target.shape
    values = np.full(shape, np.nan, dtype=np.float32)
    valid = np.zeros(shape, dtype=bool)
    for (t, b), r in slices.items():
        if b not in b_index:
            continue
        ti, bi = t_index[t], b_index[b]
        ok = r.valid_mask()
        values[ti, bi] = np.where(ok, r.values, np.nan)
        valid[ti, bi] = ok
    return CubeArray(target, times, tuple(band_list), values, valid)


__all__ = [
    "BandId",
    "BBox",
    "Window",
    "GridSpec",
    "Raster",
    "CubeArray",
    "resample_to_grid",
    "stack_cube",
    "select",
    "DEFAULT_NODATA",
]
