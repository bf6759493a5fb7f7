from __future__ import annotations

"""Product catalog, processing flags and the tile-backed cube.

The catalog is a JSON-lines journal: every change appends the full record,
and the in-memory index is rebuilt on open (latest line per product wins).
"""

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import tiles
from .errors import (
    DuplicateError,
    FormatError,
    GridMismatchError,
    IllegalTransitionError,
    PreconditionError,
    UsageError,
)
from .grid import RESAMPLE_METHODS, BandId, BBox, BAND_ORDER, CubeArray, GridSpec, Raster, resample_to_grid, stack_cube
from .periods import DateLike, day_to_iso, to_day

log = logging.getLogger(__name__)

SENSORS = ("S1", "S2")
PENDING, DONE, FAILED = "pending", "done", "failed"
STATUSES = (PENDING, DONE, FAILED)
_LEGAL = {(PENDING, DONE), (PENDING, FAILED), (FAILED, PENDING)}

DEFAULT_STEPS: Dict[str, Tuple[str, ...]] = {
    "S2": ("index", "ard", "mask", "cube"),
    "S1": ("index", "ard", "cube"),
}
DEFAULT_SENSOR_BANDS: Dict[str, Tuple[BandId, ...]] = {
    "S2": (BandId.B02, BandId.B03, BandId.B04, BandId.B08, BandId.SCL),
    "S1": (BandId.SIGMA0_VV, BandId.SIGMA0_VH, BandId.COHERENCE_VV),
}
CLOUDMASK_NAME = "CLOUDMASK"
JOURNAL_NAME = "catalog.jsonl"


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class FlagStatus:
    status: str = PENDING
    last_update: str = ""
    message: Optional[str] = None

    def to_json(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"status": self.status, "last_update": self.last_update}
        if self.message:
            d["message"] = self.message
        return d

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "FlagStatus":
        status = data.get("status")
        if status not in STATUSES:
            raise FormatError(f"unknown flag status {status!r}")
        return cls(status, str(data.get("last_update", "")), data.get("message"))


def check_transition(old: str, new: str) -> None:
    if (old, new) not in _LEGAL:
        raise IllegalTransitionError(f"illegal flag transition {old} -> {new}")


@dataclass
class ProductRecord:
    product_id: str
    sensor: str
    acquisition_time: str
    footprint: BBox
    tile_id: str = "T00"
    flags: Dict[str, FlagStatus] = field(default_factory=dict)
    storage_path: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.sensor not in SENSORS:
            raise UsageError(f"unknown sensor {self.sensor!r}")
        self.acquisition_time = day_to_iso(to_day(self.acquisition_time)) if len(str(self.acquisition_time)) <= 10 \
            else str(self.acquisition_time)
        self.footprint = tuple(float(v) for v in self.footprint)  # type: ignore[assignment]

    @property
    def day(self) -> int:
        return to_day(self.acquisition_time)

    def status(self, step: str) -> Optional[str]:
        f = self.flags.get(step)
        return f.status if f else None

    def to_json(self) -> Dict[str, Any]:
        return {
            "product_id": self.product_id,
            "sensor": self.sensor,
            "acquisition_time": self.acquisition_time,
            "footprint": list(self.footprint),
            "tile_id": self.tile_id,
            "flags": {k: v.to_json() for k, v in self.flags.items()},
            "storage_path": self.storage_path,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ProductRecord":
        try:
            return cls(
                product_id=str(data["product_id"]),
                sensor=str(data["sensor"]),
                acquisition_time=str(data["acquisition_time"]),
                footprint=tuple(data["footprint"]),  # type: ignore[arg-type]
                tile_id=str(data.get("tile_id", "T00")),
                flags={k: FlagStatus.from_json(v) for k, v in (data.get("flags") or {}).items()},
                storage_path=str(data.get("storage_path", "")),
                metadata=dict(data.get("metadata") or {}),
            )
        except KeyError as exc:
            raise FormatError(f"catalog record missing field {exc}") from None


def _bbox_intersects(a: BBox, b: BBox) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


class Catalog:
    """Single-writer product catalog rooted at a workspace directory."""

    def __init__(self, root: str | Path, *, steps: Optional[Mapping[str, Sequence[str]]] = None,
                 sensor_bands: Optional[Mapping[str, Sequence["BandId | str"]]] = None,
                 tile_size: int = tiles.DEFAULT_TILE_SIZE, clock: Callable[[], str] = _now):
        self.root = Path(root)
        self.journal = self.root / JOURNAL_NAME
        self.steps = {k: tuple(v) for k, v in (steps or DEFAULT_STEPS).items()}
        self.sensor_bands = {k: tuple(BandId.parse(b) for b in v)
                             for k, v in (sensor_bands or DEFAULT_SENSOR_BANDS).items()}
        self.tile_size = tile_size
        self._clock = clock
        self._records: Dict[str, ProductRecord] = {}
        self._load()

    # --- persistence ---
    def _load(self) -> None:
        if not self.journal.exists():
            return
        with self.journal.open("r", encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{self.journal}:{n}: malformed JSON ({exc.msg})") from None
                rec = ProductRecord.from_json(data)
                self._records[rec.product_id] = rec
        log.debug("catalog %s: %d record(s)", self.journal, len(self._records))

    def _append(self, rec: ProductRecord) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with self.journal.open("a", encoding="utf-8") as f:
            f.write(json.dumps(rec.to_json(), separators=(",", ":"), sort_keys=True) + "\n")
        self._records[rec.product_id] = rec

    def compact(self) -> int:
        """Rewrite the journal with one line per product. Returns lines dropped."""
        if not self.journal.exists():
            return 0
        before = sum(1 for line in self.journal.read_text(encoding="utf-8").splitlines() if line.strip())
        tmp = self.journal.with_name(self.journal.name + ".part")
        with tmp.open("w", encoding="utf-8") as f:
            for pid in sorted(self._records):
                f.write(json.dumps(self._records[pid].to_json(), separators=(",", ":"), sort_keys=True) + "\n")
        os.replace(tmp, self.journal)
        dropped = before - len(self._records)
        log.info("catalog compacted: %d superseded line(s) dropped", dropped)
        return dropped

    # --- queries ---
    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, product_id: str) -> bool:
        return product_id in self._records

    def get(self, product_id: str) -> ProductRecord:
        try:
            return self._records[product_id]
        except KeyError:
            raise PreconditionError(f"unknown product {product_id!r}") from None

    def records(self) -> List[ProductRecord]:
        return sorted(self._records.values(), key=lambda r: (r.acquisition_time, r.product_id))

    def search(self, time_range: Optional[Tuple[Optional[DateLike], Optional[DateLike]]] = None,
               bbox: Optional[BBox] = None, sensor: Optional[str] = None) -> List[ProductRecord]:
        """Records acquired in [start, end) whose footprint intersects bbox (touching counts)."""
        lo = hi = None
        if time_range is not None:
            lo = None if time_range[0] is None else to_day(time_range[0])
            hi = None if time_range[1] is None else to_day(time_range[1])
        out = []
        for rec in self.records():
            if sensor is not None and rec.sensor != sensor:
                continue
            if lo is not None and rec.day < lo:
                continue
            if hi is not None and rec.day >= hi:
                continue
            if bbox is not None and not _bbox_intersects(rec.footprint, bbox):
                continue
            out.append(rec)
        return out

    def pending_tasks(self, step: str) -> List[str]:
        return [r.product_id for r in self.records() if r.status(step) in (PENDING, FAILED)]

    def band_path(self, rec: ProductRecord, band: "BandId | str") -> Path:
        name = band if band == CLOUDMASK_NAME else BandId.parse(band).value
        return self.root / rec.storage_path / f"{name}.tiles"

    def bands_of(self, rec: ProductRecord) -> Tuple[BandId, ...]:
        return self.sensor_bands.get(rec.sensor, ())

    # --- writes ---
    def _storage_dir(self, rec: ProductRecord) -> str:
        date = rec.acquisition_time[:10]
        base = f"cube/{rec.sensor}/{date}"
        taken = {r.storage_path for r in self._records.values() if r.product_id != rec.product_id}
        if base not in taken and not (self.root / base).exists():
            return base
        if rec.storage_path and rec.storage_path.startswith(base):
            return rec.storage_path
        n = 1
        while f"{base}~{n}" in taken or (self.root / f"{base}~{n}").exists():
            n += 1
        log.warning("second %s acquisition on %s (%s); stored under %s~%d",
                    rec.sensor, date, rec.product_id, base, n)
        return f"{base}~{n}"

    def ingest_product(self, record: ProductRecord, rasters: Mapping["BandId | str", Raster]) -> ProductRecord:
        """Write the product's band tiles and persist its record.

        A tile write failure leaves the already written bands in place, marks
        the index flag failed and returns the record.
        """
        existing = self._records.get(record.product_id)
        if existing is not None and existing.status("index") != PENDING:
            raise DuplicateError(f"product id {record.product_id!r} already in catalog")
        expected = self.sensor_bands.get(record.sensor, ())
        given = {BandId.parse(b): r for b, r in rasters.items()}
        if set(given) != set(expected):
            raise UsageError(
                f"{record.product_id}: bands {sorted(b.value for b in given)} do not match the "
                f"{record.sensor} band list {[b.value for b in expected]}")
        stamp = self._clock()
        rec = replace(
            record,
            flags={s: FlagStatus(PENDING, stamp) for s in self.steps.get(record.sensor, ("index",))},
            storage_path=existing.storage_path if existing is not None else "",
            metadata=dict(record.metadata),
        )
        rec.storage_path = self._storage_dir(rec)
        rec.metadata.setdefault("bands", [b.value for b in expected])
        for band in sorted(given, key=lambda b: BAND_ORDER[b]):
            raster = given[band]
            if raster.band is None:
                raster = replace(raster, band=band)
            try:
                tiles.write_tiled(raster, self.band_path(rec, band), self.tile_size, band.storage_dtype)
            except Exception as exc:
                rec.flags["index"] = FlagStatus(FAILED, self._clock(), f"tile write failed for {band.value}: {exc}")
                self._append(rec)
                log.warning("ingest %s failed on band %s: %s", rec.product_id, band.value, exc)
                return rec
        rec.flags["index"] = FlagStatus(DONE, self._clock())
        self._append(rec)
        log.info("ingested %s (%s %s)", rec.product_id, rec.sensor, rec.acquisition_time)
        return rec

    def set_flag(self, product_id: str, step: str, status: str, message: Optional[str] = None) -> ProductRecord:
        rec = self.get(product_id)
        if step not in rec.flags:
            raise UsageError(f"{product_id}: no step {step!r} in the {rec.sensor} pipeline")
        if status not in STATUSES:
            raise UsageError(f"unknown flag status {status!r}")
        check_transition(rec.flags[step].status, status)
        flags = dict(rec.flags)
        flags[step] = FlagStatus(status, self._clock(), message)
        new = replace(rec, flags=flags, metadata=dict(rec.metadata))
        self._append(new)
        return new

    def update_metadata(self, product_id: str, **values: Any) -> ProductRecord:
        rec = self.get(product_id)
        meta = dict(rec.metadata)
        meta.update(values)
        new = replace(rec, flags=dict(rec.flags), metadata=meta)
        self._append(new)
        return new


# --- processing pipeline ------------------------------------------------------

@dataclass
class PipelineReport:
    step: str
    done: List[str] = field(default_factory=list)
    failed: List[str] = field(default_factory=list)
    waiting: List[str] = field(default_factory=list)


def _step_ard(catalog: Catalog, rec: ProductRecord, grid: GridSpec, method: str) -> None:
    for band in catalog.bands_of(rec):
        path = catalog.band_path(rec, band)
        src = tiles.read_tiled(path, crs_id=grid.crs_id, band=band)
        if src.grid.aligned(grid):
            continue
        out = resample_to_grid(src, grid, "nearest" if band.categorical else method)
        tiles.write_tiled(out, path, catalog.tile_size, band.storage_dtype)


def _step_mask(catalog: Catalog, rec: ProductRecord, grid: GridSpec, method: str) -> None:
    from .masking import SceneClassMask, class_mask

    scl = tiles.read_tiled(catalog.band_path(rec, BandId.SCL), crs_id=grid.crs_id, band=BandId.SCL)
    mask = class_mask(SceneClassMask.from_raster(scl))
    tiles.write_tiled(mask.to_raster(), catalog.band_path(rec, CLOUDMASK_NAME), catalog.tile_size, "u8")
    catalog.update_metadata(rec.product_id, cloud_fraction=round(mask.fraction, 9))


def _step_cube(catalog: Catalog, rec: ProductRecord, grid: GridSpec, method: str) -> None:
    for band in catalog.bands_of(rec):
        tf = tiles.TileFile(catalog.band_path(rec, band), crs_id=grid.crs_id, band=band)
        if not tf.grid.aligned(grid):
            raise GridMismatchError(f"{band.value} tiles are not aligned to the cube grid")


_STEP_FUNCS = {"ard": _step_ard, "mask": _step_mask, "cube": _step_cube}


def run_pipeline(catalog: Catalog, step: str, grid: GridSpec, method: str = "bilinear",
                 retry_failed: bool = True) -> PipelineReport:
    """Run one processing step on every product with a pending (or failed) flag for it.

    Products whose earlier steps are not done are left waiting.
    """
    if step not in _STEP_FUNCS:
        raise UsageError(f"unknown pipeline step {step!r} (expected one of {', '.join(_STEP_FUNCS)})")
    report = PipelineReport(step)
    for pid in catalog.pending_tasks(step):
        rec = catalog.get(pid)
        order = catalog.steps.get(rec.sensor, ())
        before = order[: order.index(step)]
        if any(rec.status(s) != DONE for s in before):
            report.waiting.append(pid)
            continue
        if rec.status(step) == FAILED:
            if not retry_failed:
                continue
            rec = catalog.set_flag(pid, step, PENDING, "retry")
        try:
            _STEP_FUNCS[step](catalog, rec, grid, method)
        except Exception as exc:
            catalog.set_flag(pid, step, FAILED, str(exc))
            report.failed.append(pid)
            log.warning("step %s failed for %s: %s", step, pid, exc)
            continue
        catalog.set_flag(pid, step, DONE)
        report.done.append(pid)
    log.info("step %s: %d done, %d failed, %d waiting", step, len(report.done), len(report.failed), len(report.waiting))
    return report


def run_all_steps(catalog: Catalog, grid: GridSpec, method: str = "bilinear") -> List[PipelineReport]:
    order: List[str] = []
    for steps in catalog.steps.values():
        for s in steps:
            if s != "index" and s not in order:
                order.append(s)
    return [run_pipeline(catalog, s, grid, method) for s in order]


# --- tile-backed cube ---------------------------------------------------------

class TiledCube:
    """Lazy cube over catalog tiles. ``select`` reads only the tiles a bbox touches."""

    def __init__(self, catalog: Catalog, grid: GridSpec, *, ready_step: Optional[str] = "cube",
                 counter: Optional[tiles.IOCounter] = None, resample_method: str = "bilinear"):
        if resample_method not in RESAMPLE_METHODS:
            raise UsageError(f"unknown resampling method {resample_method!r}")
        self.catalog = catalog
        self.grid = grid
        self.ready_step = ready_step
        self.resample_method = resample_method
        self.counter = counter if counter is not None else tiles.IOCounter()

    def _ready(self, rec: ProductRecord) -> bool:
        if rec.status("index") != DONE:
            return False
        if self.ready_step is None or self.ready_step not in rec.flags:
            return True
        return rec.status(self.ready_step) == DONE

    def products(self, time_range=None, bbox: Optional[BBox] = None) -> List[ProductRecord]:
        return [r for r in self.catalog.search(time_range, bbox) if self._ready(r)]

    @property
    def times(self) -> np.ndarray:
        return np.array(sorted({r.day for r in self.products()}), dtype=np.int64)

    def cloud_fractions(self, time_range=None) -> Dict[int, float]:
        """Scene cloud fraction per S2 acquisition day (from the mask step when it ran)."""
        from .masking import SceneClassMask, scene_cloud_fraction

        out: Dict[int, float] = {}
        for rec in self.products(time_range):
            if BandId.SCL not in self.catalog.bands_of(rec) or rec.day in out:
                continue
            frac = rec.metadata.get("cloud_fraction")
            if frac is None:
                scl = tiles.read_tiled(self.catalog.band_path(rec, BandId.SCL), crs_id=self.grid.crs_id,
                                       band=BandId.SCL, counter=self.counter)
                frac = scene_cloud_fraction(SceneClassMask.from_raster(scl))
            out[rec.day] = float(frac)
        return out

    def _read(self, rec: ProductRecord, band: BandId, window, sub: GridSpec) -> Raster:
        tf = tiles.TileFile(self.catalog.band_path(rec, band), crs_id=self.grid.crs_id, band=band)
        if tf.grid.aligned(self.grid):
            return Raster(sub, tf.read_window(window, self.counter), tf.nodata, band)
        full = tf.read(None, self.counter)
        # categorical bands are always sampled nearest
        return resample_to_grid(full, sub, "nearest" if band.categorical else self.resample_method)

    def select(self, time_range=None, bands: Optional[Iterable["BandId | str"]] = None,
               bbox: Optional[BBox] = None) -> CubeArray:
        wanted = None if bands is None else [BandId.parse(b) for b in bands]
        derive_ndvi = wanted is not None and BandId.NDVI in wanted
        read_bands = None
        if wanted is not None:
            read_bands = set(wanted) - {BandId.NDVI}
            if derive_ndvi:
                read_bands |= {BandId.B04, BandId.B08}
        window = self.grid.window(bbox)
        r0, r1, c0, c1 = window
        if r1 <= r0 or c1 <= c0:
            empty = np.zeros((0, len(wanted or ()), 0, 0), dtype=np.float32)
            return CubeArray(self.grid, np.zeros(0, np.int64), tuple(wanted or ()), empty,
                             np.zeros(empty.shape, bool), {"empty": True})
        sub = self.grid.subgrid(window)
        slices = []
        seen: Dict[Tuple[int, BandId], str] = {}
        for rec in self.products(time_range):
            for band in self.catalog.bands_of(rec):
                if read_bands is not None and band not in read_bands:
                    continue
                key = (rec.day, band)
                if key in seen:
                    log.debug("skipping %s %s: %s already loaded for that day", rec.product_id, band.value, seen[key])
                    continue
                seen[key] = rec.product_id
                slices.append((rec.day, band, self._read(rec, band, window, sub)))
        stack_bands = None
        if wanted is not None:
            stack_bands = [b for b in sorted(read_bands or (), key=lambda b: BAND_ORDER[b])]
        cube = stack_cube(slices, sub, bands=stack_bands)
        if derive_ndvi:
            from .features import ndvi_cube

            cube = ndvi_cube(cube)
        if wanted is not None:
            cube = cube.select(bands=wanted)
        return cube

    def load(self, time_range=None, bands=None) -> CubeArray:
        return self.select(time_range, bands, None)


__all__ = [
    "PENDING",
    "DONE",
    "FAILED",
    "DEFAULT_STEPS",
    "DEFAULT_SENSOR_BANDS",
    "FlagStatus",
    "ProductRecord",
    "Catalog",
    "PipelineReport",
    "check_transition",
    "run_pipeline",
    "run_all_steps",
    "TiledCube",
]
