from __future__ import annotations

"""Parcel (LPIS) model, polygon geometry and label rasterization."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import LinearRing, MultiPolygon, Polygon, box, mapping

from .errors import DuplicateError, FormatError, GeometryError
from .grid import GridSpec, Window

log = logging.getLogger(__name__)

Geometry = Union[Polygon, MultiPolygon]
BACKGROUND = -1


@dataclass
class Parcel:
    id: int
    geometry: Geometry
    crop_declared: str
    crop_predicted: Optional[str] = None
    attributes: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.id) <= 0:
            raise GeometryError(f"parcel id must be positive, got {self.id}")
        self.id = int(self.id)
        validate_geometry(self.geometry, where=f"parcel {self.id}")
        shapely.prepare(self.geometry)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return tuple(self.geometry.bounds)  # type: ignore[return-value]

    def to_feature(self) -> Dict[str, Any]:
        props: Dict[str, Any] = {"id": self.id, "crop_declared": self.crop_declared}
        if self.crop_predicted is not None:
            props["crop_predicted"] = self.crop_predicted
        props.update(self.attributes)
        return {"type": "Feature", "geometry": mapping(self.geometry), "properties": props}


@dataclass(frozen=True)
class LabelRaster:
    grid: GridSpec
    labels: np.ndarray
    overlaps: int = 0

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.shape != self.grid.shape:
            raise GeometryError(f"label raster {lab.shape} does not match grid {self.grid.shape}")
        if lab.flags.writeable:
            lab = lab.view()
            lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    def ids(self) -> np.ndarray:
        u = np.unique(self.labels)
        return u[u != BACKGROUND]

    def pixel_counts(self) -> Dict[int, int]:
        ids, counts = np.unique(self.labels[self.labels != BACKGROUND], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


def _check_ring(coords: Sequence[Sequence[float]], where: str, hole: bool = False) -> None:
    kind = "hole" if hole else "exterior ring"
    if len(coords) < 4:
        raise GeometryError(f"{where}: {kind} needs at least 4 points, got {len(coords)}")
    if tuple(coords[0]) != tuple(coords[-1]):
        raise GeometryError(f"{where}: {kind} is not closed")
    if len({tuple(c) for c in coords[:-1]}) < 3:
        raise GeometryError(f"{where}: degenerate {kind} (fewer than 3 distinct points)")


def validate_geometry(geom: Geometry, where: str = "geometry") -> None:
    """Ring sanity, simple exterior (segment-pair check) and positive area."""
    if isinstance(geom, Polygon):
        parts: List[Polygon] = [geom]
    elif isinstance(geom, MultiPolygon):
        parts = list(geom.geoms)
    else:
        raise GeometryError(f"{where}: unsupported geometry type {geom.geom_type}")
    if not parts:
        raise GeometryError(f"{where}: empty geometry")
    for part in parts:
        _check_ring(list(part.exterior.coords), where)
        if not LinearRing(part.exterior.coords).is_simple:
            raise GeometryError(f"{where}: exterior ring self-intersects")
        for hole in part.interiors:
            _check_ring(list(hole.coords), where, hole=True)
    if not geom.area > 0:
        raise GeometryError(f"{where}: geometry area must be positive")


def polygon_area(geom: Geometry) -> float:
    """Planar area in m^2 (exterior minus holes)."""
    validate_geometry(geom)
    return float(geom.area)


def geometry_distance(a: Geometry, b: Geometry) -> float:
    """Minimum Euclidean distance; 0 when the geometries touch or intersect."""
    validate_geometry(a, "first geometry")
    validate_geometry(b, "second geometry")
    return float(a.distance(b))


def parcel_window(grid: GridSpec, geom: Geometry) -> Window:
    return grid.window(tuple(geom.bounds))  # type: ignore[arg-type]


def _cover_mask(geom: Geometry, grid: GridSpec, window: Window) -> np.ndarray:
    r0, r1, c0, c1 = window
    xs = grid.x_centers()[c0:c1]
    ys = grid.y_centers()[r0:r1]
    X, Y = np.meshgrid(xs, ys)
    # intersects_xy counts boundary points as inside
    return shapely.intersects_xy(geom, X, Y)


def _rasterize_block(parcels: Sequence[Parcel], grid: GridSpec, rows: Tuple[int, int]) -> Tuple[np.ndarray, int]:
    r0, r1 = rows
    out = np.full((r1 - r0, grid.width), BACKGROUND, dtype=np.int32)
    overlaps = 0
    for p in parcels:  # ascending id: first writer wins
        pr0, pr1, c0, c1 = parcel_window(grid, p.geometry)
        a0, a1 = max(r0, pr0), min(r1, pr1)
        if a1 <= a0 or c1 <= c0:
            continue
        hit = _cover_mask(p.geometry, grid, (a0, a1, c0, c1))
        if not hit.any():
            continue
        view = out[a0 - r0:a1 - r0, c0:c1]
        taken = view != BACKGROUND
        overlaps += int(np.count_nonzero(hit & taken))
        view[hit & ~taken] = p.id
    return out, overlaps


def rasterize_parcels(parcels: Iterable[Parcel], grid: GridSpec, threads: int = 1,
                      block_rows: int = 256, warn_overlaps: bool = True) -> LabelRaster:
    """Label raster: pixel = parcel id when its centre is covered, else -1.

    Overlaps resolve to the lowest id; the number of contested pixels is
    reported on the result. Output does not depend on the row partitioning.
    With ``warn_overlaps=False`` contested pixels are counted but not logged.
    """
    plist = sorted(parcels, key=lambda p: p.id)
    ids = [p.id for p in plist]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateError(f"parcel id collision: {dup[:10]}")
    blocks = [(r, min(grid.height, r + block_rows)) for r in range(0, grid.height, max(1, block_rows))]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _rasterize_block(plist, grid, b), blocks))
    else:
        parts = [_rasterize_block(plist, grid, b) for b in blocks]
    labels = np.concatenate([p[0] for p in parts], axis=0) if parts else np.full(grid.shape, BACKGROUND, np.int32)
    overlaps = sum(p[1] for p in parts)
    if overlaps and warn_overlaps:
        log.warning("rasterization: %d pixel(s) claimed by more than one parcel (lowest id kept)", overlaps)
    log.info("rasterized %d parcels onto %dx%d grid", len(plist), grid.width, grid.height)
    return LabelRaster(grid, labels, overlaps)


# --- Feature collection IO ---------------------------------------------------

def _polygon_from_coords(rings: Any, where: str) -> Polygon:
    if not isinstance(rings, list) or not rings:
        raise GeometryError(f"{where}: polygon needs at least an exterior ring")
    for i, ring in enumerate(rings):
        if not isinstance(ring, list) or not all(isinstance(pt, (list, tuple)) and len(pt) >= 2 for pt in ring):
            raise GeometryError(f"{where}: ring {i} is not a list of coordinate pairs")
        _check_ring([tuple(pt[:2]) for pt in ring], where, hole=i > 0)
    return Polygon([tuple(pt[:2]) for pt in rings[0]], [[tuple(pt[:2]) for pt in r] for r in rings[1:]])


def geometry_from_json(obj: Dict[str, Any], where: str) -> Geometry:
    if not isinstance(obj, dict):
        raise GeometryError(f"{where}: missing geometry")
    kind = obj.get("type")
    coords = obj.get("coordinates")
    if kind == "Polygon":
        return _polygon_from_coords(coords, where)
    if kind == "MultiPolygon":
        if not isinstance(coords, list) or not coords:
            raise GeometryError(f"{where}: empty MultiPolygon")
        return MultiPolygon([_polygon_from_coords(part, where) for part in coords])
    raise GeometryError(f"{where}: unsupported geometry type {kind!r}")


def parcels_from_features(doc: Dict[str, Any], source: str = "<memory>") -> List[Parcel]:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FormatError(f"{source}: not a FeatureCollection")
    out: List[Parcel] = []
    seen: Dict[int, int] = {}
    features = doc.get("features", [])
    if not isinstance(features, list):
        raise FormatError(f"{source}: 'features' must be a list")
    for idx, feat in enumerate(features):
        where = f"{source}: feature {idx}"
        if not isinstance(feat, dict):
            raise FormatError(f"{where}: feature must be an object, got {type(feat).__name__}")
        props = feat.get("properties") or {}
        if not isinstance(props, dict):
            raise FormatError(f"{where}: properties must be an object")
        props = dict(props)
        if "id" not in props or "crop_declared" not in props:
            raise GeometryError(f"{where}: properties 'id' and 'crop_declared' are required")
        try:
            pid = int(props.pop("id"))
        except (TypeError, ValueError):
            raise GeometryError(f"{where}: id must be an integer") from None
        if pid in seen:
            raise DuplicateError(f"{where}: duplicate parcel id {pid} (first seen in feature {seen[pid]})")
        seen[pid] = idx
        geom = geometry_from_json(feat.get("geometry"), where)
        try:
            parcel = Parcel(
                id=pid,
                geometry=geom,
                crop_declared=str(props.pop("crop_declared")),
                crop_predicted=(None if props.get("crop_predicted") is None else str(props.pop("crop_predicted"))),
                attributes={k: v for k, v in props.items() if k != "crop_predicted"},
            )
        except GeometryError as exc:
            raise GeometryError(f"{where}: {exc}") from None
        out.append(parcel)
    return out


def load_parcels(path: str | Path) -> List[Parcel]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"parcels file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON ({exc})") from None
    parcels = parcels_from_features(doc, source=str(p))
    log.info("loaded %d parcels from %s", len(parcels), p)
    return parcels


def save_parcels(parcels: Iterable[Parcel], path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    doc = {"type": "FeatureCollection", "features": [x.to_feature() for x in sorted(parcels, key=lambda x: x.id)]}
    p.write_text(json.dumps(doc, separators=(",", ":"), sort_keys=True), encoding="utf-8")
    return p


def parcels_in_bbox(parcels: Iterable[Parcel], bbox: Tuple[float, float, float, float]) -> List[Parcel]:
    region = box(*bbox)
    return [p for p in parcels if p.geometry.intersects(region)]


__all__ = [
    "BACKGROUND",
    "Parcel",
    "LabelRaster",
    "validate_geometry",
    "polygon_area",
    "geometry_distance",
    "rasterize_parcels",
    "parcel_window",
    "load_parcels",
    "save_parcels",
    "parcels_from_features",
    "parcels_in_bbox",
]
