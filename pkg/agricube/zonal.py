from __future__ import annotations

"""Zonal statistics over parcels.

Two engines produce the same table:

* ``zonal_stats_grouped`` walks every timestep once and accumulates
  per-label aggregates on a dense remapping of the parcel ids;
* ``zonal_stats_serial`` queries the cube once per parcel with the parcel's
  bounding box, rasterizes that parcel together with the lower-id parcels
  reaching into the window (so overlaps resolve as in the full raster) and
  aggregates it.

Both share the masking rules: scenes over the cloud-cover limit are dropped,
optical bands are masked with the buffered scene classification, labels are
inward-buffered, and background or invalid pixels never contribute.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
import shapely
from shapely.geometry import box

from .config import check_keys, dataclass_keys
from .errors import ConfigError, GridMismatchError, PreconditionError, UsageError
from .fingerprint import array_checksum, fingerprint
from .grid import BandId, BBox, CubeArray, GridSpec
from .masking import DEFAULT_CLOUD_BUFFER_M, DEFAULT_INWARD_BUFFER_M, DEFAULT_MASKED_CODES, cloud_mask_stack, erode_labels
from .parcels import BACKGROUND, LabelRaster, Parcel, rasterize_parcels
from .periods import DEFAULT_SEASON_START_MONTH, check_unit, day_to_iso, period_keys, to_day

log = logging.getLogger(__name__)

STATISTICS = ("mean", "median", "min", "max", "std", "count", "valid_fraction")
MEDIAN_METHODS = ("exact", "p2")
COLUMNS = ["parcel_id", "period_start", "band", "statistic", "value", "n_valid_pixels"]


class CubeSource(Protocol):
    grid: GridSpec

    def select(self, time_range=None, bands=None, bbox: Optional[BBox] = None) -> CubeArray: ...


@dataclass(frozen=True)
class StatRequest:
    statistics: Tuple[str, ...] = ("mean",)
    period: str = "month"
    bands: Tuple[BandId, ...] = (BandId.NDVI,)
    buffer_inward_m: float = DEFAULT_INWARD_BUFFER_M
    cloud_buffer_m: float = DEFAULT_CLOUD_BUFFER_M
    max_cloud_cover_fraction: float = 1.0
    cloud_mask: bool = True
    median_method: str = "exact"
    season_start_month: int = DEFAULT_SEASON_START_MONTH
    anchor: Optional[int] = None
    time_range: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        stats = (self.statistics,) if isinstance(self.statistics, str) else tuple(self.statistics)
        for s in stats:
            if s not in STATISTICS:
                raise UsageError(f"unknown statistic {s!r} (expected one of {', '.join(STATISTICS)})")
        if not stats:
            raise UsageError("at least one statistic is required")
        object.__setattr__(self, "statistics", tuple(dict.fromkeys(stats)))
        check_unit(self.period)
        bands = (self.bands,) if isinstance(self.bands, (str, BandId)) else tuple(self.bands)
        object.__setattr__(self, "bands", tuple(dict.fromkeys(BandId.parse(b) for b in bands)))
        if self.buffer_inward_m < 0 or self.cloud_buffer_m < 0:
            raise UsageError("buffers must be >= 0")
        if not 0.0 <= self.max_cloud_cover_fraction <= 1.0:
            raise UsageError("max_cloud_cover_fraction must be in [0, 1]")
        if self.median_method not in MEDIAN_METHODS:
            raise UsageError(f"unknown median method {self.median_method!r}")
        if not 1 <= self.season_start_month <= 12:
            raise UsageError("season_start_month must be in 1..12")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", to_day(self.anchor))
        if self.time_range is not None:
            a, b = self.time_range
            object.__setattr__(self, "time_range", (to_day(a), to_day(b)))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StatRequest":
        allowed = dataclass_keys(cls) + ["statistic"]
        check_keys("stat request", data, allowed)
        kw = dict(data)
        if "statistic" in kw:
            kw["statistics"] = kw.pop("statistic")
        if isinstance(kw.get("time_range"), (list, tuple)):
            kw["time_range"] = tuple(kw["time_range"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"stat request: {exc}") from None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "statistics": list(self.statistics),
            "period": self.period,
            "bands": [b.value for b in self.bands],
            "buffer_inward_m": self.buffer_inward_m,
            "cloud_buffer_m": self.cloud_buffer_m,
            "max_cloud_cover_fraction": self.max_cloud_cover_fraction,
            "cloud_mask": self.cloud_mask,
            "median_method": self.median_method,
            "season_start_month": self.season_start_month,
            "anchor": None if self.anchor is None else day_to_iso(self.anchor),
            "time_range": None if self.time_range is None else [day_to_iso(t) for t in self.time_range],
        }


@dataclass
class ZonalStatsTable:
    frame: pd.DataFrame
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    def records(self) -> List[Tuple[int, int, str, str, float, int]]:
        return [
            (int(r.parcel_id), int(r.period_start), str(r.band), str(r.statistic), float(r.value), int(r.n_valid_pixels))
            for r in self.frame.itertuples(index=False)
        ]

    def keys(self) -> set:
        return {(r[0], r[1], r[2], r[3]) for r in self.records()}

    def lookup(self) -> Dict[Tuple[int, int, str, str], Tuple[float, int]]:
        return {(r[0], r[1], r[2], r[3]): (r[4], r[5]) for r in self.records()}

    def value(self, parcel_id: int, period_start: int, band: "BandId | str", statistic: str) -> Optional[float]:
        hit = self.lookup().get((int(parcel_id), int(period_start), BandId.parse(band).value, statistic))
        return None if hit is None else hit[0]

    def to_csv(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        out = self.frame.copy()
        out["period_start"] = [day_to_iso(int(t)) for t in out["period_start"]]
        out.to_csv(p, index=False, float_format="%.12g", lineterminator="\n")
        return p


def _table(rows: List[Tuple], provenance: Dict[str, Any]) -> ZonalStatsTable:
    df = pd.DataFrame(rows, columns=COLUMNS)
    if len(df):
        df = df.sort_values(["parcel_id", "period_start", "band", "statistic"], kind="mergesort").reset_index(drop=True)
    df = df.astype({"parcel_id": np.int64, "period_start": np.int64, "n_valid_pixels": np.int64, "value": np.float64})
    return ZonalStatsTable(df, provenance)


def max_abs_difference(a: ZonalStatsTable, b: ZonalStatsTable) -> float:
    """Largest |value| difference over the shared keys; inf when the key sets differ."""
    la, lb = a.lookup(), b.lookup()
    if set(la) != set(lb):
        return math.inf
    diff = 0.0
    for k, (va, na) in la.items():
        vb, nb = lb[k]
        if na != nb:
            return math.inf
        diff = max(diff, abs(va - vb))
    return diff


# --- P-square streaming median ------------------------------------------------

class P2Median:
    """Streaming median estimate with five markers (P-square)."""

    def __init__(self) -> None:
        self._first: List[float] = []
        self.q: List[float] = []
        self.n: List[int] = []
        self.np_: List[float] = []
        self.dn = [0.0, 0.25, 0.5, 0.75, 1.0]
        self.count = 0

    def update(self, x: float) -> None:
        self.count += 1
        if len(self._first) < 5 and not self.q:
            self._first.append(float(x))
            if len(self._first) == 5:
                self.q = sorted(self._first)
                self.n = [0, 1, 2, 3, 4]
                self.np_ = [0.0, 1.0, 2.0, 3.0, 4.0]
            return
        q, n = self.q, self.n
        if x < q[0]:
            q[0] = x
            k = 0
        elif x >= q[4]:
            q[4] = x
            k = 3
        else:
            k = next(i for i in range(4) if q[i] <= x < q[i + 1])
        for i in range(k + 1, 5):
            n[i] += 1
        for i in range(5):
            self.np_[i] += self.dn[i]
        for i in (1, 2, 3):
            d = self.np_[i] - n[i]
            if (d >= 1 and n[i + 1] - n[i] > 1) or (d <= -1 and n[i - 1] - n[i] < -1):
                s = 1 if d > 0 else -1
                qp = q[i] + s / (n[i + 1] - n[i - 1]) * (
                    (n[i] - n[i - 1] + s) * (q[i + 1] - q[i]) / (n[i + 1] - n[i])
                    + (n[i + 1] - n[i] - s) * (q[i] - q[i - 1]) / (n[i] - n[i - 1])
                )
                if not q[i - 1] < qp < q[i + 1]:
                    qp = q[i] + s * (q[i + s] - q[i]) / (n[i + s] - n[i])
                q[i] = qp
                n[i] += s

    def value(self) -> float:
        if not self.q:
            return float(np.median(self._first)) if self._first else math.nan
        return self.q[2]


def p2_median(values: Iterable[float]) -> float:
    est = P2Median()
    for v in values:
        est.update(float(v))
    return est.value()


# --- shared preparation ----------------------------------------------------------

def _needed_bands(cube_bands: Optional[Sequence[BandId]], req: StatRequest) -> List[BandId]:
    bands = list(req.bands)
    if req.cloud_mask and any(b.sensor == "S2" and not b.categorical for b in bands):
        if cube_bands is None or BandId.SCL in cube_bands:
            bands.append(BandId.SCL)
    return list(dict.fromkeys(bands))


def _ensure_bands(cube: CubeArray, req: StatRequest) -> CubeArray:
    if BandId.NDVI in req.bands and BandId.NDVI not in cube.bands:
        from .features import ndvi_cube

        cube = ndvi_cube(cube)
    for b in req.bands:
        cube.band_index(b)
    return cube


def scene_cloud_fractions(cube: CubeArray, masked_codes: Iterable[int] = DEFAULT_MASKED_CODES) -> Dict[int, float]:
    """Unbuffered masked fraction per timestep carrying scene classification."""
    if BandId.SCL not in cube.bands:
        return {}
    from .masking import NODATA

    vals, ok = cube.band(BandId.SCL)
    codes = sorted(set(int(c) for c in masked_codes) | {NODATA})
    out = {}
    for i, t in enumerate(cube.times):
        if ok[i].any():
            scene = np.where(ok[i], vals[i], NODATA)
            out[int(t)] = float(np.isin(scene, codes).mean())
    return out


def _source_fractions(source, req: StatRequest) -> Dict[int, float]:
    if req.max_cloud_cover_fraction >= 1.0:
        return {}
    fractions = getattr(source, "cloud_fractions", None)
    if callable(fractions):
        return fractions(req.time_range)
    if isinstance(source, CubeArray):
        cube = source if req.time_range is None else source.select(req.time_range)
        return scene_cloud_fractions(cube)
    return scene_cloud_fractions(source.select(req.time_range, [BandId.SCL], None))


def _prepare_cube(cube: CubeArray, req: StatRequest, fractions: Mapping[int, float]) -> CubeArray:
    """Drop cloudy scenes and apply the buffered scene mask to optical bands."""
    cube = _ensure_bands(cube, req)
    valid = None
    optical = [i for i, b in enumerate(cube.bands) if b.sensor == "S2" and not b.categorical]
    for ti, t in enumerate(cube.times):
        frac = fractions.get(int(t))
        if frac is not None and frac > req.max_cloud_cover_fraction:
            if valid is None:
                valid = np.array(cube.valid, copy=True)
            valid[ti, optical] = False
            log.debug("scene %s dropped: cloud fraction %.3f", day_to_iso(int(t)), frac)
    if valid is not None:
        cube = cube.with_valid(valid)
    if req.cloud_mask and BandId.SCL in cube.bands:
        cube = cloud_mask_stack(cube, req.cloud_buffer_m).cube
    return cube


def masked_cube(source: "CubeArray | CubeSource", req: StatRequest) -> CubeArray:
    """The cube the grouped engine aggregates: windowed, cloudy scenes dropped, optical bands masked."""
    fractions = _source_fractions(source, req)
    if not isinstance(source, CubeArray):
        cube = source.select(req.time_range, _needed_bands(None, req), None)
    else:
        cube = source if req.time_range is None else source.select(req.time_range)
    if cube.times.size == 0:
        raise PreconditionError("no timesteps in the requested window: empty period set")
    return _prepare_cube(cube, req, fractions)


def _anchor(req: StatRequest, times: np.ndarray) -> Optional[int]:
    if req.anchor is not None:
        return req.anchor
    if req.time_range is not None:
        return req.time_range[0]
    return int(times.min()) if times.size else None


def _keys(req: StatRequest, times: np.ndarray, anchor: Optional[int]) -> np.ndarray:
    return period_keys(times, req.period, anchor=anchor, season_start_month=req.season_start_month)


def _provenance(method: str, req: StatRequest, grid: GridSpec, times: np.ndarray, labels_id: str) -> Dict[str, Any]:
    cube_id = fingerprint(
        repr(sorted(grid.to_dict().items())).encode("utf-8")
        + np.ascontiguousarray(np.asarray(times, dtype=np.int64)).tobytes()
    )
    return {
        "method": method,
        "request": req.to_dict(),
        "cube_id": cube_id,
        "labels_id": labels_id,
        "approximate_median": req.median_method == "p2" and "median" in req.statistics,
    }


def _stat_rows(pid: int, period: int, band: str, req: StatRequest, n: int, agg: Mapping[str, float]) -> List[Tuple]:
    return [(pid, period, band, s, float(agg[s]), n) for s in req.statistics]


# --- grouped engine -------------------------------------------------------------

@dataclass
class _Acc:
    count: np.ndarray
    total: np.ndarray
    m2: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls, p: int) -> "_Acc":
        return cls(np.zeros(p, np.int64), np.zeros(p), np.zeros(p), np.full(p, np.inf), np.full(p, -np.inf))

    def merge(self, other: "_Acc") -> None:
        n = self.count + other.count
        with np.errstate(invalid="ignore", divide="ignore"):
            ma = np.where(self.count > 0, self.total / np.maximum(self.count, 1), 0.0)
            mb = np.where(other.count > 0, other.total / np.maximum(other.count, 1), 0.0)
            delta = mb - ma
            cross = np.where(n > 0, delta * delta * self.count * other.count / np.maximum(n, 1), 0.0)
        self.m2 = self.m2 + other.m2 + cross
        self.count = n
        self.total = self.total + other.total
        self.lo = np.minimum(self.lo, other.lo)
        self.hi = np.maximum(self.hi, other.hi)


def _timestep_partial(values: np.ndarray, valid: np.ndarray, fg: np.ndarray, dense: np.ndarray, p: int,
                      keep_values: bool) -> Tuple[_Acc, Optional[Tuple[np.ndarray, np.ndarray]]]:
    ok = valid.ravel()[fg]
    d = dense[ok]
    x = values.ravel()[fg][ok].astype(np.float64)
    count = np.bincount(d, minlength=p)
    total = np.bincount(d, weights=x, minlength=p)
    mean = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    m2 = np.bincount(d, weights=(x - mean[d]) ** 2, minlength=p)
    lo = np.full(p, np.inf)
    hi = np.full(p, -np.inf)
    np.minimum.at(lo, d, x)
    np.maximum.at(hi, d, x)
    return _Acc(count.astype(np.int64), total, m2, lo, hi), ((d, x) if keep_values else None)


def _group_medians(d: np.ndarray, x: np.ndarray, p: int, method: str) -> np.ndarray:
    out = np.full(p, np.nan)
    if d.size == 0:
        return out
    if method == "p2":
        ests = [P2Median() for _ in range(p)]
        for di, xi in zip(d.tolist(), x.tolist()):
            ests[di].update(xi)
        return np.array([e.value() if e.count else np.nan for e in ests])
    order = np.lexsort((x, d))
    xs = x[order]
    counts = np.bincount(d, minlength=p)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    has = counts > 0
    c = counts[has]
    o = offsets[has]
    lo = xs[o + (c - 1) // 2]
    hi = xs[o + c // 2]
    out[has] = (lo + hi) / 2.0
    return out


def zonal_stats_grouped(cube: "CubeArray | CubeSource", labels: LabelRaster, req: StatRequest,
                        threads: int = 1) -> ZonalStatsTable:
    """Per-parcel statistics in one pass over the timesteps."""
    if not labels.grid.aligned(cube.grid):
        raise GridMismatchError("label raster is not aligned to the cube grid")
    cube = masked_cube(cube, req)
    lab = erode_labels(labels, req.buffer_inward_m) if req.buffer_inward_m > 0 else labels

    flat = lab.labels.ravel()
    fg = np.flatnonzero(flat != BACKGROUND)
    ids = np.unique(flat[fg])
    dense = np.searchsorted(ids, flat[fg])
    p = ids.size
    npix = np.bincount(dense, minlength=p)
    anchor = _anchor(req, cube.times)
    keys = _keys(req, cube.times, anchor)
    periods = np.unique(keys)
    steps_in_period = {int(k): int(np.count_nonzero(keys == k)) for k in periods}
    keep_values = "median" in req.statistics
    band_idx = [cube.band_index(b) for b in req.bands]

    def run(ti: int):
        return [_timestep_partial(cube.values[ti, bi], cube.valid[ti, bi], fg, dense, p, keep_values)
                for bi in band_idx]

    if threads > 1 and cube.times.size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run, range(cube.times.size)))
    else:
        partials = [run(ti) for ti in range(cube.times.size)]

    rows: List[Tuple] = []
    for period in periods:
        tis = np.flatnonzero(keys == period)
        for j, band in enumerate(req.bands):
            acc = _Acc.empty(p)
            ds, xs = [], []
            for ti in tis:  # fixed time order keeps the merge deterministic
                part, kept = partials[ti][j]
                acc.merge(part)
                if kept is not None:
                    ds.append(kept[0])
                    xs.append(kept[1])
            medians = None
            if keep_values:
                medians = _group_medians(np.concatenate(ds) if ds else np.zeros(0, np.int64),
                                         np.concatenate(xs) if xs else np.zeros(0), p, req.median_method)
            for k in np.flatnonzero(acc.count > 0):
                n = int(acc.count[k])
                agg = {
                    "mean": acc.total[k] / n,
                    "std": math.sqrt(max(acc.m2[k], 0.0) / n),
                    "min": acc.lo[k],
                    "max": acc.hi[k],
                    "count": float(n),
                    "valid_fraction": n / float(npix[k] * steps_in_period[int(period)]),
                    "median": medians[k] if medians is not None else math.nan,
                }
                rows.extend(_stat_rows(int(ids[k]), int(period), band.value, req, n, agg))
    log.info("grouped zonal stats: %d parcels, %d timesteps, %d records", p, cube.times.size, len(rows))
    return _table(rows, _provenance("grouped", req, cube.grid, cube.times, array_checksum(lab.labels)[:12]))


# --- serial engine ----------------------------------------------------------------

def _aggregate_values(x: np.ndarray, npix: int, nsteps: int, method: str) -> Dict[str, float]:
    return {
        "mean": float(np.mean(x)),
        "std": float(np.std(x)),
        "min": float(np.min(x)),
        "max": float(np.max(x)),
        "count": float(x.size),
        "valid_fraction": x.size / float(npix * nsteps),
        "median": float(np.median(x)) if method == "exact" else p2_median(x),
    }


def zonal_stats_serial(source: "CubeArray | CubeSource", parcels: Sequence[Parcel], req: StatRequest,
                       grid: Optional[GridSpec] = None) -> ZonalStatsTable:
    """Reference engine: one bounding-box query and rasterization per parcel."""
    grid = grid or source.grid
    fractions = _source_fractions(source, req)
    full_times = source.times if isinstance(source, CubeArray) else getattr(source, "times", np.zeros(0, np.int64))
    if req.time_range is not None:
        full_times = full_times[(full_times >= req.time_range[0]) & (full_times < req.time_range[1])]
    if isinstance(source, CubeArray) and full_times.size == 0:
        raise PreconditionError("no timesteps in the requested window: empty period set")
    anchor = _anchor(req, np.asarray(full_times))
    pad = int(math.ceil(max(req.buffer_inward_m, req.cloud_buffer_m) / grid.pixel_size)) + 1
    load_bands = _needed_bands(source.bands if isinstance(source, CubeArray) else None, req)
    if isinstance(source, CubeArray) and BandId.NDVI in load_bands and BandId.NDVI not in source.bands:
        load_bands = [b for b in load_bands if b is not BandId.NDVI] + [BandId.B04, BandId.B08]
    rows: List[Tuple] = []
    plist = sorted(parcels, key=lambda q: q.id)
    tree = shapely.STRtree([q.geometry for q in plist])
    for parcel in plist:
        win = grid.window(parcel.bounds)
        if win[1] <= win[0] or win[3] <= win[2]:
            log.debug("parcel %d outside the cube extent", parcel.id)
            continue
        bbox = grid.window_bbox(grid.pad_window(win, pad))
        sub = source.select(req.time_range, list(dict.fromkeys(load_bands)), bbox)
        if sub.attrs.get("empty") or sub.times.size == 0:
            continue
        sub = _prepare_cube(sub, req, fractions)
        # lower ids win contested pixels; higher ids only matter as "different label"
        near = [plist[i] for i in sorted(tree.query(box(*sub.grid.bounds), predicate="intersects"))
                if plist[i].id <= parcel.id]
        lab = rasterize_parcels(near, sub.grid, warn_overlaps=False)
        if req.buffer_inward_m > 0:
            lab = erode_labels(lab, req.buffer_inward_m)
        sel = lab.labels == parcel.id
        npix = int(sel.sum())
        if npix == 0:
            continue
        keys = _keys(req, sub.times, anchor)
        for period in np.unique(keys):
            tis = np.flatnonzero(keys == period)
            for band in req.bands:
                v, ok = sub.band(band)
                x = np.concatenate([v[ti][sel & ok[ti]].astype(np.float64) for ti in tis])
                if x.size == 0:
                    continue
                agg = _aggregate_values(x, npix, tis.size, req.median_method)
                rows.extend(_stat_rows(parcel.id, int(period), band.value, req, int(x.size), agg))
    log.info("serial zonal stats: %d parcels, %d records", len(parcels), len(rows))
    labels_id = fingerprint(repr(sorted(p.id for p in parcels)).encode("ascii")) or ""
    return _table(rows, _provenance("serial", req, grid, np.asarray(full_times), labels_id))


__all__ = [
    "STATISTICS",
    "StatRequest",
    "ZonalStatsTable",
    "P2Median",
    "p2_median",
    "scene_cloud_fractions",
    "masked_cube",
    "max_abs_difference",
    "zonal_stats_grouped",
    "zonal_stats_serial",
]
