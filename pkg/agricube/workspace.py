from __future__ import annotations

"""On-disk workspace: settings, catalog, cube tiles, parcels, labels and knowledge base.

Layout::

    <root>/workspace.json     grids, default grid id, pipeline steps, synthetic config
    <root>/catalog.jsonl      product journal
    <root>/cube/<sensor>/<YYYY-MM-DD>/<band>.tiles
    <root>/parcels.geojson    LPIS analog
    <root>/labels.tiles       label raster of the default grid (i32, -1 background)
    <root>/kb.jsonl           knowledge base journal
    <root>/truth.json         planted ground truth (synthetic workspaces only)
"""

from dataclasses import dataclass, field
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import tiles
from .catalog import DEFAULT_STEPS, Catalog, PipelineReport, ProductRecord, TiledCube, run_all_steps, run_pipeline
from .config import check_keys, dataclass_keys, load_document
from .errors import ConfigError, FormatError, PreconditionError, UsageError
from .grid import BandId, GridSpec, Raster
from .knowledge import KnowledgeBase
from .parcels import BACKGROUND, LabelRaster, Parcel, load_parcels, rasterize_parcels, save_parcels

log = logging.getLogger(__name__)

WORKSPACE_FILE = "workspace.json"
PARCELS_FILE = "parcels.geojson"
LABELS_FILE = "labels.tiles"
TRUTH_FILE = "truth.json"
DEFAULT_GRID_ID = "main"


@dataclass
class WorkspaceSettings:
    grids: Dict[str, GridSpec]
    default_grid: str = DEFAULT_GRID_ID
    steps: Dict[str, Tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_STEPS))
    tile_size: int = tiles.DEFAULT_TILE_SIZE
    resample_method: str = "bilinear"
    synthetic: Optional[Dict[str, Any]] = None

    def __post_init__(self):
        if self.default_grid not in self.grids:
            raise ConfigError(f"default grid {self.default_grid!r} is not among the workspace grids")
        crs = {g.crs_id for g in self.grids.values()}
        if len(crs) > 1:
            raise ConfigError(f"workspace grids must share one CRS, got {sorted(crs)}")

    def to_json(self) -> Dict[str, Any]:
        return {
            "grids": {k: g.to_dict() for k, g in sorted(self.grids.items())},
            "default_grid": self.default_grid,
            "crs_id": self.grids[self.default_grid].crs_id,
            "steps": {k: list(v) for k, v in sorted(self.steps.items())},
            "tile_size": self.tile_size,
            "resample_method": self.resample_method,
            "synthetic": self.synthetic,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "WorkspaceSettings":
        check_keys("workspace settings", data, dataclass_keys(cls) + ["crs_id"])
        try:
            grids = {str(k): GridSpec.from_dict(v) for k, v in data["grids"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"workspace settings: bad grids ({exc})") from None
        return cls(
            grids=grids,
            default_grid=str(data.get("default_grid", DEFAULT_GRID_ID)),
            steps={k: tuple(v) for k, v in (data.get("steps") or DEFAULT_STEPS).items()},
            tile_size=int(data.get("tile_size", tiles.DEFAULT_TILE_SIZE)),
            resample_method=str(data.get("resample_method", "bilinear")),
            synthetic=data.get("synthetic"),
        )


class Workspace:
    def __init__(self, root: str | Path, settings: WorkspaceSettings):
        self.root = Path(root)
        self.settings = settings
        self._catalog: Optional[Catalog] = None
        self._kb: Optional[KnowledgeBase] = None
        self._parcels: Optional[List[Parcel]] = None
        self._labels: Optional[LabelRaster] = None

    @classmethod
    def create(cls, root: str | Path, grid: GridSpec, *, grid_id: str = DEFAULT_GRID_ID,
               steps: Optional[Mapping[str, Sequence[str]]] = None, tile_size: int = tiles.DEFAULT_TILE_SIZE,
               resample_method: str = "bilinear", synthetic: Optional[Dict[str, Any]] = None,
               exist_ok: bool = False) -> "Workspace":
        root = Path(root)
        if (root / WORKSPACE_FILE).exists() and not exist_ok:
            raise UsageError(f"workspace already exists: {root}")
        settings = WorkspaceSettings(
            grids={grid_id: grid},
            default_grid=grid_id,
            steps={k: tuple(v) for k, v in (steps or DEFAULT_STEPS).items()},
            tile_size=tile_size,
            resample_method=resample_method,
            synthetic=synthetic,
        )
        ws = cls(root, settings)
        ws.save_settings()
        return ws

    @classmethod
    def open(cls, root: str | Path) -> "Workspace":
        path = Path(root) / WORKSPACE_FILE
        if not path.exists():
            raise PreconditionError(f"no workspace at {root} (run 'adc synth' or 'adc ingest' first)")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: malformed JSON ({exc.msg})") from None
        return cls(root, WorkspaceSettings.from_json(data))

    def save_settings(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / WORKSPACE_FILE
        tmp = path.with_name(path.name + ".part")
        tmp.write_text(json.dumps(self.settings.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path

    # --- components ---
    def grid(self, grid_id: Optional[str] = None) -> GridSpec:
        gid = grid_id or self.settings.default_grid
        try:
            return self.settings.grids[gid]
        except KeyError:
            raise UsageError(f"unknown grid id {gid!r} (known: {', '.join(sorted(self.settings.grids))})") from None

    @property
    def catalog(self) -> Catalog:
        if self._catalog is None:
            self._catalog = Catalog(self.root, steps=self.settings.steps, tile_size=self.settings.tile_size)
        return self._catalog

    @property
    def kb(self) -> KnowledgeBase:
        if self._kb is None:
            known = [p.id for p in self.parcels] if self.has_parcels else None
            self._kb = KnowledgeBase(self.root / "kb.jsonl", known_ids=known)
        return self._kb

    @property
    def has_parcels(self) -> bool:
        return (self.root / PARCELS_FILE).exists()

    @property
    def parcels(self) -> List[Parcel]:
        if self._parcels is None:
            if not self.has_parcels:
                raise PreconditionError(f"workspace {self.root} has no parcels (use 'adc rasterize --parcels')")
            self._parcels = load_parcels(self.root / PARCELS_FILE)
        return self._parcels

    def set_parcels(self, parcels: Iterable[Parcel]) -> List[Parcel]:
        items = sorted(parcels, key=lambda p: p.id)
        save_parcels(items, self.root / PARCELS_FILE)
        self._parcels = items
        self._labels = None
        kb = self.kb
        if kb.known_ids is None:
            kb.known_ids = set()
        kb.register_parcels(items)
        return items

    @property
    def labels(self) -> LabelRaster:
        if self._labels is None:
            path = self.root / LABELS_FILE
            if not path.exists():
                raise PreconditionError(f"workspace {self.root} has no label raster (run 'adc rasterize')")
            grid = self.grid()
            raster = tiles.read_tiled(path, crs_id=grid.crs_id)
            if not raster.grid.aligned(grid):
                raise PreconditionError("stored label raster does not match the workspace grid; rasterize again")
            self._labels = LabelRaster(grid, np.asarray(raster.values, dtype=np.int32))
        return self._labels

    def rasterize(self, grid_id: Optional[str] = None, threads: int = 1) -> LabelRaster:
        grid = self.grid(grid_id)
        default = grid_id is None or grid_id == self.settings.default_grid
        lab = rasterize_parcels(self.parcels, grid, threads=threads)
        raster = Raster(grid, lab.labels.astype(np.int32), float(BACKGROUND))
        name = LABELS_FILE if default else f"labels_{grid_id}.tiles"
        tiles.write_tiled(raster, self.root / name, self.settings.tile_size, "i32")
        if default:
            self._labels = lab
        log.info("rasterized %d parcels onto grid %s (%d overlapping pixels)",
                 len(self.parcels), grid_id or self.settings.default_grid, lab.overlaps)
        return lab

    # --- cube access ---
    def cube(self, ready_step: Optional[str] = "cube") -> TiledCube:
        return TiledCube(self.catalog, self.grid(), ready_step=ready_step,
                         resample_method=self.settings.resample_method)

    def load_cube(self, time_range=None, bands: Optional[Sequence["BandId | str"]] = None):
        cube = self.cube().load(time_range, bands)
        if cube.times.size == 0:
            raise PreconditionError("no processed acquisitions in the workspace for the requested window")
        return cube

    def query_context(self, threads: int = 1):
        from .query import QueryContext

        return QueryContext(cube=self.cube(), labels=self.labels, parcels=self.parcels, threads=threads)

    # --- ingest and processing ---
    def ingest(self, record: ProductRecord, rasters: Mapping["BandId | str", Raster]) -> ProductRecord:
        return self.catalog.ingest_product(record, rasters)

    def process(self, step: Optional[str] = None, retry_failed: bool = True) -> List[PipelineReport]:
        grid, method = self.grid(), self.settings.resample_method
        if step is None:
            return run_all_steps(self.catalog, grid, method)
        return [run_pipeline(self.catalog, step, grid, method, retry_failed=retry_failed)]

    def truth(self) -> Dict[str, Any]:
        path = self.root / TRUTH_FILE
        if not path.exists():
            raise PreconditionError(f"workspace {self.root} has no planted ground truth (not synthetic)")
        return json.loads(path.read_text(encoding="utf-8"))


def synthesize(root: str | Path, cfg, *, threads: int = 1, tile_size: int = tiles.DEFAULT_TILE_SIZE,
               exist_ok: bool = False) -> Workspace:
    """Generate a synthetic dataset, ingest and process every product, store parcels and labels."""
    from .synthetic import generate_synthetic_dataset

    ds = generate_synthetic_dataset(cfg)
    ws = Workspace.create(root, cfg.grid, tile_size=tile_size, synthetic=cfg.to_dict(), exist_ok=exist_ok)
    n = 0
    for rec, rasters in ds.products():
        ws.ingest(rec, rasters)
        n += 1
    for report in ws.process():
        if report.failed:
            log.warning("step %s failed for %d product(s)", report.step, len(report.failed))
    ws.set_parcels(ds.parcels)
    ws.rasterize(threads=threads)
    truth = ws.root / TRUTH_FILE
    truth.write_text(json.dumps(ds.truth_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("synthetic workspace %s: %d products", ws.root, n)
    return ws


# --- ingest from a config document ---------------------------------------------------

@dataclass(frozen=True)
class ProductSource:
    product_id: str
    sensor: str
    acquisition_time: str
    bands: Mapping[str, str]
    grid: Optional[GridSpec] = None
    tile_id: str = "T00"
    nodata: float = -9999.0


@dataclass(frozen=True)
class IngestConfig:
    """Products to ingest: each band is a ``.tiles`` file or a ``.npy`` array on ``grid``."""

    grid: GridSpec
    products: Tuple[ProductSource, ...] = ()
    parcels: Optional[str] = None
    tile_size: int = tiles.DEFAULT_TILE_SIZE
    resample_method: str = "bilinear"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: Optional[Path] = None) -> "IngestConfig":
        check_keys("ingest config", data, dataclass_keys(cls))
        if "grid" not in data:
            raise ConfigError("ingest config needs a grid")
        base = base or Path(".")
        products = []
        for i, p in enumerate(data.get("products") or []):
            check_keys(f"product {i}", p, dataclass_keys(ProductSource))
            try:
                products.append(ProductSource(
                    product_id=str(p["product_id"]),
                    sensor=str(p["sensor"]),
                    acquisition_time=str(p["acquisition_time"]),
                    bands={str(k): str(base / v) for k, v in p["bands"].items()},
                    grid=GridSpec.from_dict(p["grid"]) if p.get("grid") else None,
                    tile_id=str(p.get("tile_id", "T00")),
                    nodata=float(p.get("nodata", -9999.0)),
                ))
            except KeyError as exc:
                raise ConfigError(f"product {i}: missing {exc}") from None
        parcels = data.get("parcels")
        return cls(
            grid=GridSpec.from_dict(data["grid"]),
            products=tuple(products),
            parcels=None if parcels is None else str(base / parcels),
            tile_size=int(data.get("tile_size", tiles.DEFAULT_TILE_SIZE)),
            resample_method=str(data.get("resample_method", "bilinear")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "IngestConfig":
        return cls.from_dict(load_document(path), Path(path).parent)


def _read_band(src: ProductSource, band: BandId, path: str, crs_id: str) -> Raster:
    p = Path(path)
    if not p.exists():
        raise PreconditionError(f"{src.product_id}: band file not found: {p}")
    if p.suffix == ".tiles":
        return tiles.read_tiled(p, crs_id=crs_id, band=band)
    if p.suffix == ".npy":
        if src.grid is None:
            raise ConfigError(f"{src.product_id}: .npy bands need the product grid")
        return Raster(src.grid, np.load(p), src.nodata, band)
    raise ConfigError(f"{src.product_id}: unsupported band file {p.name} (expected .tiles or .npy)")


def ingest_from_config(root: str | Path, cfg: IngestConfig, *, threads: int = 1) -> Tuple[Workspace, List[ProductRecord]]:
    root = Path(root)
    if (root / WORKSPACE_FILE).exists():
        ws = Workspace.open(root)
    else:
        ws = Workspace.create(root, cfg.grid, tile_size=cfg.tile_size, resample_method=cfg.resample_method)
    out = []
    for src in cfg.products:
        rasters = {BandId.parse(b): _read_band(src, BandId.parse(b), path, ws.grid().crs_id)
                   for b, path in sorted(src.bands.items())}
        grid = next(iter(rasters.values())).grid
        rec = ProductRecord(src.product_id, src.sensor, src.acquisition_time, grid.bounds, src.tile_id)
        out.append(ws.ingest(rec, rasters))
    ws.process()
    if cfg.parcels:
        ws.set_parcels(load_parcels(cfg.parcels))
        ws.rasterize(threads=threads)
    return ws, out


__all__ = [
    "WORKSPACE_FILE",
    "WorkspaceSettings",
    "Workspace",
    "synthesize",
    "IngestConfig",
    "ProductSource",
    "ingest_from_config",
]
