from __future__ import annotations

"""Vegetation index, temporal composites, feature spaces and patch datasets."""

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import check_keys, dataclass_keys
from .errors import ConfigError, InsufficientDataError, UsageError
from .grid import BandId, CubeArray, GridSpec
from .masking import DEFAULT_CLOUD_BUFFER_M, DEFAULT_INWARD_BUFFER_M
from .parcels import LabelRaster
from .periods import DEFAULT_SEASON_START_MONTH, check_unit, day_to_iso, period_keys, period_label, period_range, \
    to_day, year_of, year_start
from .phenology import DEFAULT_FEATURE_METRICS, METRIC_NAMES, phenology
from .sits import PipelineConfig, TimeSeries, prepare

log = logging.getLogger(__name__)

COMPOSITE_STATS = ("mean", "median", "min", "max", "std", "count")
LEVELS = ("pixel", "parcel")
MISSING_SUFFIX = "__missing"


# --- NDVI ---------------------------------------------------------------------

def ndvi(nir: float, red: float) -> Optional[float]:
    """(nir - red) / (nir + red) clamped to [-1, 1]; None when undefined."""
    if nir is None or red is None:
        return None
    nir, red = float(nir), float(red)
    if not (math.isfinite(nir) and math.isfinite(red)) or nir < 0 or red < 0 or nir + red <= 0:
        return None
    return max(-1.0, min(1.0, (nir - red) / (nir + red)))


def ndvi_values(nir: np.ndarray, red: np.ndarray, nir_ok: Optional[np.ndarray] = None,
                red_ok: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    n = np.asarray(nir, dtype=np.float64)
    r = np.asarray(red, dtype=np.float64)
    ok = np.isfinite(n) & np.isfinite(r) & (n >= 0) & (r >= 0) & (n + r > 0)
    if nir_ok is not None:
        ok &= np.asarray(nir_ok, dtype=bool)
    if red_ok is not None:
        ok &= np.asarray(red_ok, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.clip((n - r) / np.where(ok, n + r, 1.0), -1.0, 1.0)
    return np.where(ok, v, np.nan), ok


def ndvi_cube(cube: CubeArray) -> CubeArray:
    """Cube with an NDVI band derived from B08 and B04."""
    if BandId.NDVI in cube.bands:
        return cube
    nir, nir_ok = cube.band(BandId.B08)
    red, red_ok = cube.band(BandId.B04)
    v, ok = ndvi_values(nir, red, nir_ok, red_ok)
    return cube.with_band(BandId.NDVI, v.astype(cube.values.dtype), ok)


# --- composites ------------------------------------------------------------------

def temporal_composite(cube: CubeArray, unit: str = "month", stat: str = "mean",
                       season_start_month: int = DEFAULT_SEASON_START_MONTH,
                       anchor: Optional[int] = None) -> CubeArray:
    """One timestep per calendar period present in the cube, per-pixel stat over valid observations."""
    check_unit(unit)
    if stat not in COMPOSITE_STATS:
        raise UsageError(f"unknown composite statistic {stat!r}")
    if cube.times.size == 0 or cube.values.size == 0:
        raise UsageError("cannot composite an empty cube")
    keys = period_keys(cube.times, unit, anchor=anchor, season_start_month=season_start_month)
    da = cube.to_xarray().astype("float64").assign_coords(period=("time", keys))
    grouped = da.groupby("period")
    if stat == "count":
        out = grouped.count(dim="time")
    elif stat == "std":
        out = grouped.std(dim="time", ddof=0)
    else:
        out = getattr(grouped, stat)(dim="time", skipna=True)
    counts = grouped.count(dim="time").transpose("period", "band", "y", "x").values
    values = out.transpose("period", "band", "y", "x").values.astype(np.float64)
    valid = counts > 0
    values = np.where(valid, values, np.nan)
    periods = out["period"].values.astype(np.int64)
    return CubeArray(cube.grid, periods, cube.bands, values, valid,
                     {"composite": unit, "stat": stat})


# --- feature spaces --------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    bands: Tuple[BandId, ...] = (BandId.NDVI,)
    unit: str = "month"
    stats: Tuple[str, ...] = ("mean",)
    time_range: Optional[Tuple[int, int]] = None
    phenology: bool = False
    phenology_band: BandId = BandId.NDVI
    phenology_metrics: Tuple[str, ...] = DEFAULT_FEATURE_METRICS
    amplitude_fraction: float = 0.5
    buffer_inward_m: float = DEFAULT_INWARD_BUFFER_M
    cloud_buffer_m: float = DEFAULT_CLOUD_BUFFER_M
    max_cloud_cover_fraction: float = 1.0
    season_start_month: int = DEFAULT_SEASON_START_MONTH
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        bands = (self.bands,) if isinstance(self.bands, (str, BandId)) else tuple(self.bands)
        object.__setattr__(self, "bands", tuple(dict.fromkeys(BandId.parse(b) for b in bands)))
        stats = (self.stats,) if isinstance(self.stats, str) else tuple(self.stats)
        for s in stats:
            if s not in COMPOSITE_STATS:
                raise ConfigError(f"unknown feature statistic {s!r}")
        object.__setattr__(self, "stats", tuple(dict.fromkeys(stats)))
        check_unit(self.unit)
        object.__setattr__(self, "phenology_band", BandId.parse(self.phenology_band))
        metrics = tuple(self.phenology_metrics)
        unknown = [m for m in metrics if m not in METRIC_NAMES]
        if unknown:
            raise ConfigError(f"unknown phenology metrics {unknown}")
        object.__setattr__(self, "phenology_metrics", metrics)
        if self.time_range is not None:
            a, b = self.time_range
            object.__setattr__(self, "time_range", (to_day(a), to_day(b)))
        if not self.bands:
            raise ConfigError("feature spec needs at least one band")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureSpec":
        check_keys("feature spec", data, dataclass_keys(cls))
        kw = dict(data)
        if isinstance(kw.get("pipeline"), Mapping):
            kw["pipeline"] = PipelineConfig.from_dict(kw["pipeline"])
        for k in ("bands", "stats", "phenology_metrics", "time_range"):
            if isinstance(kw.get(k), list):
                kw[k] = tuple(kw[k])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"feature spec: {exc}") from None

    def periods(self, window: Tuple[int, int]) -> np.ndarray:
        return period_range(window[0], window[1], self.unit, anchor=window[0],
                            season_start_month=self.season_start_month)

    def column_names(self, window: Tuple[int, int]) -> List[str]:
        """band-period-stat order, phenology columns (per year) last."""
        cols = []
        periods = self.periods(window)
        for band in sorted(self.bands, key=lambda b: b.value):
            for p in periods:
                for s in sorted(self.stats):
                    cols.append(f"{band.value}_{period_label(int(p), self.unit)}_{s}")
        if self.phenology:
            for year in _years(window):
                for m in self.phenology_metrics:
                    cols.append(f"{self.phenology_band.value}_{year}_{m}")
        return cols


def _years(window: Tuple[int, int]) -> List[int]:
    return list(range(year_of(window[0]), year_of(window[1] - 1) + 1))


@dataclass
class FeatureSpace:
    level: str
    keys: np.ndarray
    columns: List[str]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.keys), len(self.columns)) or self.missing.shape != self.values.shape:
            raise UsageError("feature matrix shape does not match keys x columns")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def to_frame(self) -> pd.DataFrame:
        key = "parcel_id" if self.level == "parcel" else "pixel_id"
        data: Dict[str, Any] = {key: self.keys}
        for j, c in enumerate(self.columns):
            data[c] = self.values[:, j]
        for j, c in enumerate(self.columns):
            data[c + MISSING_SUFFIX] = self.missing[:, j].astype(np.int8)
        return pd.DataFrame(data)

    def to_csv(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(p, index=False, float_format="%.9g", lineterminator="\n")
        return p


def _window(spec: FeatureSpec, cube: CubeArray) -> Tuple[int, int]:
    if spec.time_range is not None:
        return spec.time_range
    if cube.times.size == 0:
        raise InsufficientDataError("cube has no timesteps")
    return int(cube.times[0]), int(cube.times[-1]) + 1


def _phenology_row(times: np.ndarray, values: np.ndarray, valid: np.ndarray, spec: FeatureSpec,
                   years: Sequence[int]) -> List[float]:
    row: List[float] = []
    for year in years:
        sel = (times >= year_start(year)) & (times < year_start(year + 1))
        try:
            series = prepare(TimeSeries(times[sel], values[sel], valid[sel]), spec.pipeline)
            metrics = phenology(series, spec.amplitude_fraction)
            row.extend(math.nan if metrics.get(m) is None else float(metrics.get(m)) for m in spec.phenology_metrics)
        except InsufficientDataError:
            row.extend([math.nan] * len(spec.phenology_metrics))
    return row


def build_feature_space(level: str, spec: FeatureSpec, cube: CubeArray, labels: Optional[LabelRaster] = None,
                        keys: Optional[Iterable[int]] = None, threads: int = 1) -> FeatureSpace:
    """Fixed-width rows per parcel (from zonal statistics) or per pixel (from composites).

    Missing features stay NaN and are flagged in the mask, never imputed.
    """
    if level not in LEVELS:
        raise UsageError(f"unknown feature level {level!r} (expected pixel or parcel)")
    if BandId.NDVI in spec.bands + (spec.phenology_band,):
        cube = ndvi_cube(cube) if BandId.B08 in cube.bands and BandId.B04 in cube.bands else cube
    for b in spec.bands:
        cube.band_index(b)
    if spec.phenology:
        cube.band_index(spec.phenology_band)
    window = _window(spec, cube)
    columns = spec.column_names(window)
    periods = spec.periods(window)
    years = _years(window)
    if level == "parcel":
        if labels is None:
            raise UsageError("parcel-level features need a label raster")
        return _parcel_features(spec, cube, labels, keys, window, columns, periods, years, threads)
    return _pixel_features(spec, cube, keys, window, columns, periods, years)


def _parcel_features(spec, cube, labels, keys, window, columns, periods, years, threads) -> FeatureSpace:
    from .zonal import StatRequest, zonal_stats_grouped

    row_keys = np.array(sorted(int(k) for k in keys), dtype=np.int64) if keys is not None else \
        np.array(sorted(int(i) for i in labels.ids()), dtype=np.int64)
    req = StatRequest(statistics=spec.stats, period=spec.unit, bands=spec.bands,
                      buffer_inward_m=spec.buffer_inward_m, cloud_buffer_m=spec.cloud_buffer_m,
                      max_cloud_cover_fraction=spec.max_cloud_cover_fraction,
                      season_start_month=spec.season_start_month, anchor=window[0], time_range=window)
    table = zonal_stats_grouped(cube, labels, req, threads=threads).lookup()
    values = np.full((row_keys.size, len(columns)), np.nan)
    pos = {int(k): i for i, k in enumerate(row_keys)}
    col = 0
    for band in sorted(spec.bands, key=lambda b: b.value):
        for p in periods:
            for s in sorted(spec.stats):
                for pid, i in pos.items():
                    hit = table.get((pid, int(p), band.value, s))
                    if hit is not None:
                        values[i, col] = hit[0]
                col += 1
    if spec.phenology:
        preq = StatRequest(statistics=("mean",), period="day", bands=(spec.phenology_band,),
                           buffer_inward_m=spec.buffer_inward_m, cloud_buffer_m=spec.cloud_buffer_m,
                           max_cloud_cover_fraction=spec.max_cloud_cover_fraction, time_range=window)
        daily = zonal_stats_grouped(cube, labels, preq, threads=threads).frame
        for pid, i in pos.items():
            rows = daily[daily["parcel_id"] == pid]
            t = rows["period_start"].to_numpy(dtype=np.int64)
            v = rows["value"].to_numpy(dtype=np.float64)
            values[i, col:] = _phenology_row(t, v, np.ones(t.size, dtype=bool), spec, years)
    log.info("parcel feature space: %d rows x %d columns", row_keys.size, len(columns))
    return FeatureSpace("parcel", row_keys, columns, values, np.isnan(values))


def _pixel_features(spec, cube, keys, window, columns, periods, years) -> FeatureSpace:
    h, w = cube.grid.shape
    row_keys = np.arange(h * w, dtype=np.int64) if keys is None else np.array(sorted(int(k) for k in keys), np.int64)
    if row_keys.size and (row_keys.min() < 0 or row_keys.max() >= h * w):
        raise UsageError("pixel keys out of range")
    rr, cc = np.divmod(row_keys, w)
    sub = cube.select(window, bands=sorted(set(spec.bands) | ({spec.phenology_band} if spec.phenology else set()),
                                             key=lambda b: b.value))
    values = np.full((row_keys.size, len(columns)), np.nan)
    stats = sorted(spec.stats)
    width = len(periods) * len(stats)
    if sub.times.size:
        for bi, band in enumerate(sorted(spec.bands, key=lambda b: b.value)):
            one = sub.select(bands=[band])
            for si, s in enumerate(stats):
                comp = temporal_composite(one, spec.unit, s, spec.season_start_month, anchor=window[0])
                index = {int(t): i for i, t in enumerate(comp.times)}
                for j, p in enumerate(periods):
                    ti = index.get(int(p))
                    if ti is not None:
                        ok = comp.valid[ti, 0, rr, cc]
                        values[:, bi * width + j * len(stats) + si] = np.where(ok, comp.values[ti, 0, rr, cc], np.nan)
    col = len(spec.bands) * width
    if spec.phenology and sub.times.size:
        v, ok = sub.band(spec.phenology_band)
        for i, (r, c) in enumerate(zip(rr, cc)):
            values[i, col:] = _phenology_row(sub.times, v[:, r, c].astype(np.float64), ok[:, r, c], spec, years)
    log.info("pixel feature space: %d rows x %d columns", row_keys.size, len(columns))
    return FeatureSpace("pixel", row_keys, columns, values, np.isnan(values))


# --- patches -------------------------------------------------------------------------

@dataclass
class PatchSet:
    patches: np.ndarray
    valid: np.ndarray
    anchors: List[Tuple[int, int]]
    h: int
    w: int
    stride: int
    grid: GridSpec
    times: np.ndarray
    bands: Tuple[BandId, ...]

    def __len__(self) -> int:
        return len(self.anchors)

    def manifest(self) -> Dict[str, Any]:
        ps = self.grid.pixel_size
        return {
            "grid": self.grid.to_dict(),
            "bands": [b.value for b in self.bands],
            "times": [day_to_iso(int(t)) for t in self.times],
            "patch": {"h": self.h, "w": self.w, "stride": self.stride},
            "patches": [
                {
                    "index": i,
                    "anchor": [r, c],
                    "size": [self.h, self.w],
                    "bbox": [self.grid.origin_x + c * ps, self.grid.origin_y + r * ps,
                             self.grid.origin_x + (c + self.w) * ps, self.grid.origin_y + (r + self.h) * ps],
                    "source": {"rows": [r, r + self.h], "cols": [c, c + self.w]},
                }
                for i, (r, c) in enumerate(self.anchors)
            ],
        }

    def save(self, out_dir: str | Path) -> Path:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "patches.npy", self.patches)
        np.save(d / "patches_valid.npy", self.valid)
        path = d / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def extract_patches(cube: CubeArray, h: int, w: int, stride: int) -> PatchSet:
    H, W = cube.grid.shape
    if h < 1 or w < 1 or h > H or w > W:
        raise UsageError(f"patch {h}x{w} does not fit a {H}x{W} cube")
    if stride < 1:
        raise UsageError("stride must be >= 1")
    anchors = [(r, c) for r in range(0, H - h + 1, stride) for c in range(0, W - w + 1, stride)]
    patches = np.stack([cube.values[:, :, r:r + h, c:c + w] for r, c in anchors])
    valid = np.stack([cube.valid[:, :, r:r + h, c:c + w] for r, c in anchors])
    return PatchSet(patches, valid, anchors, h, w, stride, cube.grid, np.array(cube.times), cube.bands)


__all__ = [
    "ndvi",
    "ndvi_values",
    "ndvi_cube",
    "temporal_composite",
    "FeatureSpec",
    "FeatureSpace",
    "build_feature_space",
    "PatchSet",
    "extract_patches",
    "MISSING_SUFFIX",
]
