from __future__ import annotations

"""Time-series preparation: outlier filtering, gap filling, resampling, smoothing.

Stages never drop timestamps; they only change values and validity. Points
filled by interpolation carry ``filled=True`` so downstream consumers can
tell them apart from observations.
"""

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from .config import check_keys, dataclass_keys
from .errors import ConfigError, FormatError, InsufficientDataError, UsageError
from .grid import CubeArray
from .parcels import LabelRaster
from .periods import day_to_iso, to_day

log = logging.getLogger(__name__)

INTERPOLATION_METHODS = ("linear", "cubic")
_MIN_POINTS = {"linear": 2, "cubic": 4}
_AGGREGATORS: Dict[str, Callable[[np.ndarray], float]] = {
    "mean": np.mean,
    "median": np.median,
    "min": np.min,
    "max": np.max,
}


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    valid: Optional[np.ndarray] = None
    filled: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64)
        ok = np.isfinite(v) if self.valid is None else np.asarray(self.valid, dtype=bool)
        fl = np.zeros(t.shape, dtype=bool) if self.filled is None else np.asarray(self.filled, dtype=bool)
        if not (t.ndim == 1 and t.shape == v.shape == ok.shape == fl.shape):
            raise UsageError("time series arrays must be one-dimensional and of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise UsageError("time series times must be strictly increasing")
        ok = ok & np.isfinite(v)
        for name, arr in (("times", t), ("values", v), ("valid", ok), ("filled", fl & ok)):
            view = arr.view()
            view.flags.writeable = False
            object.__setattr__(self, name, view)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def with_(self, values=None, valid=None, filled=None) -> "TimeSeries":
        return TimeSeries(
            self.times,
            self.values if values is None else values,
            self.valid if valid is None else valid,
            self.filled if filled is None else filled,
        )

    def canonical(self) -> "TimeSeries":
        """Invalid points set to NaN, so their stored values cannot leak."""
        return self.with_(values=np.where(self.valid, self.values, np.nan))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "date": [day_to_iso(t) for t in self.times],
            "value": np.where(self.valid, self.values, np.nan),
            "valid": self.valid,
            "provenance": np.where(self.filled, "filled", "observed"),
        })


@dataclass(frozen=True)
class PipelineConfig:
    value_min: float = -1.0
    value_max: float = 1.0
    spike_threshold: Optional[float] = None
    interpolation: str = "linear"
    step_days: int = 10
    aggregator: str = "mean"
    window_points: int = 3
    do_filter: bool = True
    do_interpolate: bool = True
    do_resample: bool = False
    do_smooth: bool = True

    def __post_init__(self):
        if not self.value_min < self.value_max:
            raise ConfigError(f"value_min must be < value_max ({self.value_min} >= {self.value_max})")
        if self.window_points < 1 or self.window_points % 2 == 0:
            raise ConfigError(f"window_points must be odd and >= 1, got {self.window_points}")
        if self.interpolation not in INTERPOLATION_METHODS:
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        if self.step_days < 1:
            raise ConfigError("step_days must be >= 1")
        if self.spike_threshold is not None and not self.spike_threshold > 0:
            raise ConfigError("spike_threshold must be positive")
        if self.aggregator not in _AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        check_keys("pipeline config", data, dataclass_keys(cls))
        return cls(**dict(data))


def filter_outliers(ts: TimeSeries, cfg: PipelineConfig) -> TimeSeries:
    with np.errstate(invalid="ignore"):
        ok = ts.valid & (ts.values >= cfg.value_min) & (ts.values <= cfg.value_max)
    if cfg.spike_threshold is not None and ok.sum() >= 3:
        idx = np.flatnonzero(ok)
        t = ts.times[idx].astype(np.float64)
        v = ts.values[idx]
        rate = np.abs(np.diff(v)) / np.diff(t)
        spike = np.zeros(idx.size, dtype=bool)
        spike[1:-1] = (rate[:-1] > cfg.spike_threshold) & (rate[1:] > cfg.spike_threshold)
        ok[idx[spike]] = False
    dropped = ts.n_valid - int(ok.sum())
    if dropped:
        log.debug("filter_outliers: %d point(s) invalidated", dropped)
    return ts.with_(valid=ok, filled=ts.filled & ok)


def interpolate(ts: TimeSeries, method: str = "linear") -> TimeSeries:
    """Fill invalid points between the first and last valid point."""
    if method not in INTERPOLATION_METHODS:
        raise UsageError(f"unknown interpolation {method!r}")
    need = _MIN_POINTS[method]
    if ts.n_valid < need:
        raise InsufficientDataError(f"{method} interpolation needs {need} valid points, got {ts.n_valid}")
    ok = ts.valid
    tv = ts.times[ok].astype(np.float64)
    vv = ts.values[ok]
    inside = (ts.times >= tv[0]) & (ts.times <= tv[-1])
    gaps = inside & ~ok
    if not gaps.any():
        return ts
    tg = ts.times[gaps].astype(np.float64)
    if method == "linear":
        fill = np.interp(tg, tv, vv)
    else:
        fill = CubicSpline(tv, vv, bc_type="natural")(tg)
    values = np.array(ts.values, copy=True)
    values[gaps] = fill
    return ts.with_(values=values, valid=ok | gaps, filled=ts.filled | gaps)


def _aggregator(name: Union[str, Callable[[np.ndarray], float]]) -> Callable[[np.ndarray], float]:
    if callable(name):
        return name
    try:
        return _AGGREGATORS[name]
    except KeyError:
        raise UsageError(f"unknown aggregator {name!r}") from None


def resample_series(ts: TimeSeries, step_days: int, aggregator: Union[str, Callable] = "mean",
                    interpolate_empty: bool = True) -> TimeSeries:
    """Regular series at start, start+step, ... <= end.

    Each sample aggregates the valid points of [t, t+step). Empty windows
    take the linear interpolation at t when enabled and t lies between
    valid points; otherwise they stay invalid.
    """
    if len(ts) == 0:
        raise InsufficientDataError("cannot resample an empty series")
    if step_days < 1:
        raise UsageError(f"step_days must be >= 1, got {step_days}")
    agg = _aggregator(aggregator)
    start, end = int(ts.times[0]), int(ts.times[-1])
    out_t = start + step_days * np.arange((end - start) // step_days + 1, dtype=np.int64)
    tv = ts.times[ts.valid]
    vv = ts.values[ts.valid]
    fv = ts.filled[ts.valid]
    lo = np.searchsorted(tv, out_t, side="left")
    hi = np.searchsorted(tv, out_t + step_days, side="left")
    values = np.full(out_t.shape, np.nan)
    valid = np.zeros(out_t.shape, dtype=bool)
    filled = np.zeros(out_t.shape, dtype=bool)
    for i in range(out_t.size):
        if hi[i] > lo[i]:
            values[i] = float(agg(vv[lo[i]:hi[i]]))
            valid[i] = True
            filled[i] = bool(fv[lo[i]:hi[i]].all())
        elif interpolate_empty and tv.size >= 2 and tv[0] <= out_t[i] <= tv[-1]:
            values[i] = float(np.interp(float(out_t[i]), tv.astype(np.float64), vv))
            valid[i] = True
            filled[i] = True
    return TimeSeries(out_t, values, valid, filled)


def smooth(ts: TimeSeries, window_points: int = 3) -> TimeSeries:
    """Centred rolling median over the valid points; incomplete edge windows keep their value."""
    if window_points < 1 or window_points % 2 == 0:
        raise UsageError(f"window_points must be odd and >= 1, got {window_points}")
    if window_points == 1 or ts.n_valid < window_points:
        return ts
    idx = np.flatnonzero(ts.valid)
    med = pd.Series(ts.values[idx]).rolling(window_points, center=True).median().to_numpy()
    keep = np.isnan(med)
    values = np.array(ts.values, copy=True)
    values[idx] = np.where(keep, ts.values[idx], med)
    return ts.with_(values=values)


def prepare(ts: TimeSeries, cfg: PipelineConfig) -> TimeSeries:
    """filter -> interpolate -> resample -> smooth, each stage behind its toggle."""
    out = ts.canonical()
    if cfg.do_filter:
        out = filter_outliers(out, cfg)
    if cfg.do_interpolate:
        out = interpolate(out, cfg.interpolation)
    if cfg.do_resample:
        out = resample_series(out, cfg.step_days, cfg.aggregator)
    if cfg.do_smooth:
        out = smooth(out, cfg.window_points)
    return out


# --- extraction from cubes ---------------------------------------------------

def pixel_series(cube: CubeArray, band, row: int, col: int) -> TimeSeries:
    v, ok = cube.band(band)
    return TimeSeries(cube.times, v[:, row, col].astype(np.float64), ok[:, row, col])


def parcel_series(cube: CubeArray, labels: LabelRaster, parcel_id: int, band) -> TimeSeries:
    """Per-timestep mean of the parcel's valid pixels (invalid where none)."""
    if not labels.grid.aligned(cube.grid):
        from .errors import GridMismatchError
        raise GridMismatchError("label raster is not aligned to the cube grid")
    sel = labels.labels == int(parcel_id)
    if not sel.any():
        raise InsufficientDataError(f"parcel {parcel_id} has no pixels on the label raster")
    v, ok = cube.band(band)
    vals = np.where(ok[:, sel], v[:, sel], 0.0).astype(np.float64)
    n = ok[:, sel].sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = vals.sum(axis=1) / n
    return TimeSeries(cube.times, np.where(n > 0, mean, np.nan), n > 0)


# --- CSV IO ------------------------------------------------------------------

def write_series_csv(ts: TimeSeries, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    ts.to_frame().to_csv(p, index=False, float_format="%.9g", lineterminator="\n")
    return p


def read_series_csv(path: str | Path) -> TimeSeries:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise FormatError(f"series file not found: {path}") from None
    missing = {"date", "value", "valid"} - set(df.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    times = np.array([to_day(d) for d in df["date"]], dtype=np.int64)
    valid = df["valid"].astype(str).str.lower().isin(("true", "1")).to_numpy()
    filled = (df["provenance"] == "filled").to_numpy() if "provenance" in df.columns else None
    return TimeSeries(times, df["value"].to_numpy(dtype=np.float64), valid, filled)


__all__ = [
    "TimeSeries",
    "PipelineConfig",
    "filter_outliers",
    "interpolate",
    "resample_series",
    "smooth",
    "prepare",
    "pixel_series",
    "parcel_series",
    "write_series_csv",
    "read_series_csv",
]
