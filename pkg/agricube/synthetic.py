from __future__ import annotations

"""Seeded synthetic scenes, parcels and declarations.

Stands in for a real data hub: every S2 scene carries B02/B03/B04/B08 and a
scene classification band, every S1 scene carries backscatter and coherence
on a coarser grid. Parcel NDVI follows crop-specific seasonal curves; cloud
blobs, wrong declarations and grassland mowing events are planted on top.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import box

from .catalog import ProductRecord
from .config import check_keys, dataclass_keys
from .errors import ConfigError
from .grid import BandId, GridSpec, Raster
from .masking import CLEAR, CLOUD, SHADOW
from .parcels import BACKGROUND, LabelRaster, Parcel, rasterize_parcels
from .periods import day_to_iso, to_day, year_of, year_start

log = logging.getLogger(__name__)

REFLECTANCE_SUM = 0.4
CROP_BACKGROUND_NDVI = 0.12
_REGROWTH_DAYS = 30


@dataclass(frozen=True)
class CropProfile:
    """Seasonal NDVI shape in day-of-year terms."""

    base: float
    amplitude: float
    green_up: float
    senescence: float
    peak: float
    slope: float = 8.0
    peak_width: float = 35.0
    vigor_spread: float = 0.08


CROP_PROFILES: Dict[str, CropProfile] = {
    "maize": CropProfile(base=0.18, amplitude=0.66, green_up=150, senescence=262, peak=212),
    "spring_cereal": CropProfile(base=0.2, amplitude=0.6, green_up=98, senescence=196, peak=150),
    "winter_cereal": CropProfile(base=0.22, amplitude=0.58, green_up=62, senescence=178, peak=122),
    "grassland": CropProfile(base=0.24, amplitude=0.42, green_up=85, senescence=300, peak=180,
                             slope=14.0, peak_width=90.0, vigor_spread=0.3),
}
GRASSLAND = "grassland"


@dataclass(frozen=True)
class MismatchSpec:
    parcel_id: Optional[int] = None
    declared: str = "maize"
    actual: str = "spring_cereal"


@dataclass(frozen=True)
class MowingSpec:
    date: str
    parcel_id: Optional[int] = None
    depth: float = 0.4
    drop_days: int = 10


@dataclass(frozen=True)
class MowingEventTruth:
    parcel_id: int
    day: int
    depth: float
    drop_days: int = 10

    def to_json(self) -> Dict[str, Any]:
        return {"parcel_id": self.parcel_id, "date": day_to_iso(self.day), "depth": self.depth,
                "drop_days": self.drop_days}


@dataclass(frozen=True)
class SyntheticConfig:
    grid: GridSpec = GridSpec(500000.0, 4000000.0, 64, 64, 10.0, "LOCAL")
    n_parcels: int = 40
    start: str = "2020-01-01"
    end: str = "2021-01-01"
    revisit_days: int = 5
    s1_revisit_days: int = 12
    s1_pixel_size: float = 20.0
    crop_mix: Mapping[str, float] = field(default_factory=lambda: {
        "maize": 0.3, "spring_cereal": 0.2, "winter_cereal": 0.2, "grassland": 0.3})
    cloud_probability: float = 0.2
    cloud_blobs: int = 2
    cloud_radius_frac: Tuple[float, float] = (0.08, 0.2)
    forced_cloud_windows: Tuple[Tuple[str, str], ...] = ()
    noise_sigma: float = 0.02
    mismatches: Tuple[MismatchSpec, ...] = ()
    mowing: Tuple[MowingSpec, ...] = ()
    grassland_mowing: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_parcels < 0:
            raise ConfigError("n_parcels must be >= 0")
        if to_day(self.end) <= to_day(self.start):
            raise ConfigError(f"empty date range {self.start} .. {self.end}")
        if self.revisit_days < 1 or self.s1_revisit_days < 0:
            raise ConfigError("revisit intervals must be positive (s1_revisit_days 0 disables S1)")
        if not self.s1_pixel_size > 0:
            raise ConfigError("s1_pixel_size must be positive")
        unknown = sorted(set(self.crop_mix) - set(CROP_PROFILES))
        if unknown:
            raise ConfigError(f"unknown crop codes in crop_mix: {unknown}")
        total = sum(float(v) for v in self.crop_mix.values())
        if abs(total - 1.0) > 1e-9 or any(float(v) < 0 for v in self.crop_mix.values()):
            raise ConfigError(f"crop_mix fractions must be non-negative and sum to 1 (got {total})")
        if not 0.0 <= self.cloud_probability <= 1.0:
            raise ConfigError("cloud_probability must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for m in self.mismatches:
            if m.actual not in CROP_PROFILES or m.declared not in CROP_PROFILES or m.actual == m.declared:
                raise ConfigError(f"invalid mismatch spec {m}")
        pinned = [m.parcel_id for m in self.mismatches if m.parcel_id is not None]
        if len(set(pinned)) != len(pinned):
            dup = sorted({p for p in pinned if pinned.count(p) > 1})
            raise ConfigError(f"mismatch specs name parcel id(s) {dup} more than once")
        for w in self.mowing:
            if not w.depth > 0 or w.drop_days < 1:
                raise ConfigError(f"invalid mowing spec {w}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticConfig":
        check_keys("synthetic config", data, dataclass_keys(cls))
        kw: Dict[str, Any] = dict(data)
        if "grid" in kw and not isinstance(kw["grid"], GridSpec):
            g = kw["grid"]
            check_keys("grid", g, ("origin_x", "origin_y", "width", "height", "pixel_size", "crs_id"))
            kw["grid"] = GridSpec.from_dict(g)
        if "cloud_radius_frac" in kw:
            kw["cloud_radius_frac"] = tuple(float(v) for v in kw["cloud_radius_frac"])
        if "forced_cloud_windows" in kw:
            kw["forced_cloud_windows"] = tuple((str(a), str(b)) for a, b in kw["forced_cloud_windows"])
        if "mismatches" in kw:
            items = []
            for m in kw["mismatches"]:
                check_keys("mismatch", m, dataclass_keys(MismatchSpec))
                items.append(MismatchSpec(**m))
            kw["mismatches"] = tuple(items)
        if "mowing" in kw:
            items = []
            for m in kw["mowing"]:
                check_keys("mowing", m, dataclass_keys(MowingSpec))
                items.append(MowingSpec(**m))
            kw["mowing"] = tuple(items)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"synthetic config: {exc}") from None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grid": self.grid.to_dict(),
            "n_parcels": self.n_parcels,
            "start": self.start,
            "end": self.end,
            "revisit_days": self.revisit_days,
            "s1_revisit_days": self.s1_revisit_days,
            "s1_pixel_size": self.s1_pixel_size,
            "crop_mix": dict(sorted(self.crop_mix.items())),
            "cloud_probability": self.cloud_probability,
            "cloud_blobs": self.cloud_blobs,
            "cloud_radius_frac": list(self.cloud_radius_frac),
            "forced_cloud_windows": [list(w) for w in self.forced_cloud_windows],
            "noise_sigma": self.noise_sigma,
            "mismatches": [vars(m) for m in self.mismatches],
            "mowing": [vars(m) for m in self.mowing],
            "grassland_mowing": self.grassland_mowing,
            "seed": self.seed,
        }


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def _logistic(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def day_of_year(days) -> np.ndarray:
    d = np.asarray(days, dtype=np.int64)
    years = d.astype("datetime64[D]").astype("datetime64[Y]").astype("datetime64[D]").astype(np.int64)
    return d - years


@dataclass(frozen=True)
class ParcelCurve:
    """Per-parcel seasonal curve parameters (vectorized over parcels)."""

    base: np.ndarray
    amplitude: np.ndarray
    green_up: np.ndarray
    senescence: np.ndarray
    peak: np.ndarray
    slope: np.ndarray
    peak_width: np.ndarray

    def seasonal(self, day: int) -> np.ndarray:
        doy = float(day_of_year([day])[0])
        up = _logistic((doy - self.green_up) / self.slope)
        down = _logistic((self.senescence - doy) / self.slope)
        hump = 0.7 + 0.3 * np.exp(-0.5 * ((doy - self.peak) / self.peak_width) ** 2)
        return self.base + self.amplitude * up * down * hump


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    grid: GridSpec
    s1_grid: GridSpec
    parcels: List[Parcel]
    actual_crop: Dict[int, str]
    mismatch_ids: List[int]
    mowing_events: List[MowingEventTruth]
    s2_days: np.ndarray
    s1_days: np.ndarray
    labels: LabelRaster
    _curve: ParcelCurve = field(repr=False)
    _s1_labels: LabelRaster = field(repr=False)

    @property
    def parcel_ids(self) -> np.ndarray:
        return np.array([p.id for p in self.parcels], dtype=np.int64)

    def _pos(self, parcel_id: int) -> int:
        try:
            return [p.id for p in self.parcels].index(int(parcel_id))
        except ValueError:
            raise ConfigError(f"unknown synthetic parcel {parcel_id}") from None

    def _mowing_penalty(self, day: int) -> np.ndarray:
        pen = np.zeros(len(self.parcels), dtype=np.float64)
        pos = {p.id: i for i, p in enumerate(self.parcels)}
        for ev in self.mowing_events:
            dt = day - ev.day
            if 0 <= dt < ev.drop_days:
                v = ev.depth * dt / ev.drop_days
            elif ev.drop_days <= dt < ev.drop_days + _REGROWTH_DAYS:
                v = ev.depth * (1.0 - (dt - ev.drop_days) / _REGROWTH_DAYS)
            else:
                continue
            i = pos[ev.parcel_id]
            pen[i] = max(pen[i], v)
        return pen

    def clean_ndvi(self, day: int) -> np.ndarray:
        """Noise-free NDVI of every parcel (in parcel order) on one day."""
        v = self._curve.seasonal(int(day)) - self._mowing_penalty(int(day))
        return np.clip(v, -1.0, 1.0)

    def clean_series(self, parcel_id: int, days: Sequence[int]) -> np.ndarray:
        i = self._pos(parcel_id)
        return np.array([self.clean_ndvi(int(d))[i] for d in days], dtype=np.float64)

    def true_phenology(self, parcel_id: int, year: int, amplitude_fraction: float = 0.5):
        from .phenology import phenology
        from .sits import TimeSeries

        days = np.arange(year_start(year), year_start(year + 1), dtype=np.int64)
        series = self.clean_series(parcel_id, days)
        return phenology(TimeSeries(days, series), amplitude_fraction=amplitude_fraction)

    def _forced_cloud(self, day: int) -> bool:
        return any(to_day(a) <= day < to_day(b) for a, b in self.config.forced_cloud_windows)

    def _scl(self, k: int, day: int) -> np.ndarray:
        cfg = self.config
        h, w = self.grid.shape
        scl = np.full((h, w), CLEAR, dtype=np.int16)
        if self._forced_cloud(day):
            scl[:] = CLOUD
            return scl
        rng = _rng(cfg.seed, 3, k)
        if rng.random() >= cfg.cloud_probability:
            return scl
        yy, xx = np.mgrid[0:h, 0:w]
        lo, hi = cfg.cloud_radius_frac
        for _ in range(1 + int(rng.integers(0, max(1, cfg.cloud_blobs)))):
            r = rng.uniform(lo, hi) * min(h, w)
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            cloud = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            shadow = (yy - cy - 0.8 * r) ** 2 + (xx - cx - 0.8 * r) ** 2 <= r * r
            scl[shadow & (scl == CLEAR)] = SHADOW
            scl[cloud] = CLOUD
        return scl

    def _pixel_ndvi(self, clean: np.ndarray, labels: LabelRaster, rng: np.random.Generator) -> np.ndarray:
        lookup = np.append(clean, CROP_BACKGROUND_NDVI)
        index = _label_index(labels, self.parcel_ids)
        v = lookup[index]
        if self.config.noise_sigma > 0:
            v = v + rng.normal(0.0, self.config.noise_sigma, v.shape)
        return np.clip(v, -1.0, 1.0)

    def s2_product(self, k: int) -> Tuple[ProductRecord, Dict[BandId, Raster]]:
        day = int(self.s2_days[k])
        v = self._pixel_ndvi(self.clean_ndvi(day), self.labels, _rng(self.config.seed, 2, k))
        nir = REFLECTANCE_SUM * (1.0 + v) / 2.0
        red = REFLECTANCE_SUM * (1.0 - v) / 2.0
        blue = 0.04 + 0.03 * (1.0 - v) / 2.0
        green = 0.06 + 0.04 * (1.0 - v) / 2.0
        scl = self._scl(k, day)
        cloud, shadow = scl == CLOUD, scl == SHADOW
        bands = {BandId.B02: blue, BandId.B03: green, BandId.B04: red, BandId.B08: nir}
        out: Dict[BandId, Raster] = {}
        bright = {BandId.B02: 0.42, BandId.B03: 0.44, BandId.B04: 0.45, BandId.B08: 0.5}
        for band, arr in bands.items():
            arr = np.where(cloud, bright[band], np.where(shadow, arr * 0.35, arr))
            out[band] = Raster(self.grid, np.clip(arr, 0.0, 1.0).astype(np.float32), band=band)
        out[BandId.SCL] = Raster(self.grid, scl, band=BandId.SCL)
        rec = ProductRecord(
            product_id=f"S2_{day_to_iso(day).replace('-', '')}_T00",
            sensor="S2",
            acquisition_time=day_to_iso(day),
            footprint=self.grid.bounds,
            tile_id="T00",
        )
        return rec, out

    def s1_product(self, k: int) -> Tuple[ProductRecord, Dict[BandId, Raster]]:
        day = int(self.s1_days[k])
        rng = _rng(self.config.seed, 4, k)
        lookup = np.append(self.clean_ndvi(day), CROP_BACKGROUND_NDVI)
        v = lookup[_label_index(self._s1_labels, self.parcel_ids)]
        veg = np.clip(v, 0.0, 1.0)
        coh = np.clip(0.7 - 0.6 * veg + rng.normal(0.0, 0.03, veg.shape), 0.0, 1.0)
        vv = -20.0 + 10.0 * veg + rng.normal(0.0, 0.5, veg.shape)
        vh = vv - 6.0 + rng.normal(0.0, 0.5, veg.shape)
        g = self.s1_grid
        out = {
            BandId.SIGMA0_VV: Raster(g, vv.astype(np.float32), band=BandId.SIGMA0_VV),
            BandId.SIGMA0_VH: Raster(g, vh.astype(np.float32), band=BandId.SIGMA0_VH),
            BandId.COHERENCE_VV: Raster(g, coh.astype(np.float32), band=BandId.COHERENCE_VV),
        }
        rec = ProductRecord(
            product_id=f"S1_{day_to_iso(day).replace('-', '')}_T00",
            sensor="S1",
            acquisition_time=day_to_iso(day),
            footprint=g.bounds,
            tile_id="T00",
        )
        return rec, out

    def products(self) -> Iterator[Tuple[ProductRecord, Dict[BandId, Raster]]]:
        """All products in acquisition order (S2 before S1 on shared days)."""
        items = [(int(d), 0, k) for k, d in enumerate(self.s2_days)]
        items += [(int(d), 1, k) for k, d in enumerate(self.s1_days)]
        for _, kind, k in sorted(items):
            yield self.s2_product(k) if kind == 0 else self.s1_product(k)

    def truth_json(self) -> Dict[str, Any]:
        return {
            "actual_crop": {str(k): v for k, v in sorted(self.actual_crop.items())},
            "mismatches": list(self.mismatch_ids),
            "mowing": [e.to_json() for e in self.mowing_events],
        }


def _label_index(labels: LabelRaster, ids: np.ndarray) -> np.ndarray:
    """Map label ids to positions in ids; background maps to len(ids)."""
    lab = labels.labels
    out = np.full(lab.shape, ids.size, dtype=np.int64)
    if ids.size == 0:
        return out
    order = np.argsort(ids)
    sorted_ids = ids[order]
    fg = lab != BACKGROUND
    pos = np.searchsorted(sorted_ids, lab[fg])
    out[fg] = order[np.clip(pos, 0, ids.size - 1)]
    return out


def layout_parcels(cfg: SyntheticConfig, rng: np.random.Generator) -> List[Tuple[float, float, float, float]]:
    """Rectangles on a lattice of square cells, one parcel per chosen cell, 1 px gaps."""
    g = cfg.grid
    n = cfg.n_parcels
    if n == 0:
        return []
    cell = int(math.floor(math.sqrt(g.width * g.height / n)))
    if cell < 3:
        raise ConfigError(f"{n} parcels do not fit on a {g.width}x{g.height} grid (cell size {cell} px < 3)")
    rows, cols = g.height // cell, g.width // cell
    if rows * cols < n:
        cell -= 1
        rows, cols = g.height // cell, g.width // cell
        if cell < 3 or rows * cols < n:
            raise ConfigError(f"{n} parcels exceed grid capacity {rows * cols} for a {g.width}x{g.height} grid")
    cells = np.sort(rng.choice(rows * cols, size=n, replace=False))
    ps = g.pixel_size
    out = []
    for c in cells:
        r, q = divmod(int(c), cols)
        j = rng.uniform(-0.25, 0.25, size=4)
        x0 = g.origin_x + (q * cell + 0.5 + j[0]) * ps
        x1 = g.origin_x + ((q + 1) * cell - 0.5 + j[1]) * ps
        y0 = g.origin_y + (r * cell + 0.5 + j[2]) * ps
        y1 = g.origin_y + ((r + 1) * cell - 0.5 + j[3]) * ps
        out.append((x0, y0, x1, y1))
    return out


def _assign_crops(cfg: SyntheticConfig, n: int, rng: np.random.Generator) -> List[str]:
    codes = sorted(cfg.crop_mix)
    p = np.array([float(cfg.crop_mix[c]) for c in codes])
    return [codes[i] for i in rng.choice(len(codes), size=n, p=p / p.sum())] if n else []


def _curve_params(crops: Sequence[str], rng: np.random.Generator) -> ParcelCurve:
    n = len(crops)
    cols: Dict[str, List[float]] = {k: [] for k in ("base", "amplitude", "green_up", "senescence", "peak",
                                                    "slope", "peak_width")}
    shifts = rng.uniform(-6.0, 6.0, size=n)
    vigor = rng.uniform(-1.0, 1.0, size=n)
    for i, crop in enumerate(crops):
        prof = CROP_PROFILES[crop]
        cols["base"].append(prof.base)
        cols["amplitude"].append(max(0.05, prof.amplitude * (1.0 + prof.vigor_spread * vigor[i])))
        cols["green_up"].append(prof.green_up + shifts[i])
        cols["senescence"].append(prof.senescence + shifts[i])
        cols["peak"].append(prof.peak + shifts[i])
        cols["slope"].append(prof.slope)
        cols["peak_width"].append(prof.peak_width)
    return ParcelCurve(**{k: np.asarray(v, dtype=np.float64) for k, v in cols.items()})


def _grassland_schedule(cfg: SyntheticConfig, pid: int, years: Sequence[int]) -> List[MowingEventTruth]:
    out = []
    for year in years:
        rng = _rng(cfg.seed, 5, pid, year)
        k = int(rng.integers(0, 4))
        for i in range(k):
            doy = 125 + 50 * i + int(rng.integers(0, 12))
            out.append(MowingEventTruth(pid, year_start(year) + doy, round(float(rng.uniform(0.3, 0.42)), 3)))
    return out


def generate_synthetic_dataset(cfg: SyntheticConfig) -> SyntheticDataset:
    """Deterministic dataset for cfg.seed. Products are generated lazily."""
    layout_rng = _rng(cfg.seed, 1)
    rects = layout_parcels(cfg, layout_rng)
    crops = _assign_crops(cfg, len(rects), layout_rng)
    ids = list(range(1, len(rects) + 1))

    mismatch_ids: List[int] = []
    declared = dict(zip(ids, crops))
    actual = dict(zip(ids, crops))
    candidates = [i for i in ids if actual[i] != GRASSLAND]
    for m in cfg.mismatches:
        if m.parcel_id is not None:
            pid = int(m.parcel_id)
            if pid not in actual:
                raise ConfigError(f"mismatch spec names unknown parcel {pid}")
        else:
            free = [i for i in candidates if i not in mismatch_ids]
            if not free:
                raise ConfigError("not enough parcels to plant the requested mismatches")
            pid = free[int(layout_rng.integers(0, len(free)))]
        actual[pid] = m.actual
        declared[pid] = m.declared
        mismatch_ids.append(pid)
    mismatch_ids.sort()

    parcels = [
        Parcel(id=pid, geometry=box(*rect), crop_declared=declared[pid], crop_predicted=actual[pid])
        for pid, rect in zip(ids, rects)
    ]
    curve = _curve_params([actual[i] for i in ids], layout_rng)

    start, end = to_day(cfg.start), to_day(cfg.end)
    years = list(range(year_of(start), year_of(end - 1) + 1))
    grass = [i for i in ids if actual[i] == GRASSLAND]
    events: List[MowingEventTruth] = []
    explicit = set()
    for m in cfg.mowing:
        if m.parcel_id is not None:
            pid = int(m.parcel_id)
            if pid not in actual:
                raise ConfigError(f"mowing spec names unknown parcel {pid}")
        elif grass:
            pid = grass[0]
        else:
            raise ConfigError("mowing spec without parcel_id needs at least one grassland parcel")
        explicit.add(pid)
        events.append(MowingEventTruth(pid, to_day(m.date), float(m.depth), int(m.drop_days)))
    if cfg.grassland_mowing:
        for pid in grass:
            if pid not in explicit:
                events.extend(e for e in _grassland_schedule(cfg, pid, years) if start <= e.day < end)
    events.sort(key=lambda e: (e.parcel_id, e.day))

    g = cfg.grid
    s1_grid = GridSpec(g.origin_x, g.origin_y,
                       max(1, math.ceil(g.width * g.pixel_size / cfg.s1_pixel_size)),
                       max(1, math.ceil(g.height * g.pixel_size / cfg.s1_pixel_size)),
                       cfg.s1_pixel_size, g.crs_id)
    labels = rasterize_parcels(parcels, g)
    s1_labels = rasterize_parcels(parcels, s1_grid)
    s2_days = np.arange(start, end, cfg.revisit_days, dtype=np.int64)
    s1_days = (np.arange(start + 2, end, cfg.s1_revisit_days, dtype=np.int64)
               if cfg.s1_revisit_days > 0 else np.zeros(0, dtype=np.int64))
    log.info("synthetic dataset: %d parcels, %d S2 and %d S1 scenes, %d mowing events, %d mismatches",
             len(parcels), s2_days.size, s1_days.size, len(events), len(mismatch_ids))
    return SyntheticDataset(
        config=cfg,
        grid=g,
        s1_grid=s1_grid,
        parcels=parcels,
        actual_crop=actual,
        mismatch_ids=mismatch_ids,
        mowing_events=events,
        s2_days=s2_days,
        s1_days=s1_days,
        labels=labels,
        _curve=curve,
        _s1_labels=s1_labels,
    )


__all__ = [
    "CropProfile",
    "CROP_PROFILES",
    "MismatchSpec",
    "MowingSpec",
    "MowingEventTruth",
    "SyntheticConfig",
    "SyntheticDataset",
    "generate_synthetic_dataset",
    "layout_parcels",
    "day_of_year",
]
