from __future__ import annotations

"""Conjunctive parcel queries over the knowledge base.

Predicates compare a parcel attribute with a literal (or, with a ``$``
prefix, with another attribute). Attributes resolve in this order:

1. derived attributes (``crop_mismatch``);
2. values stored in the knowledge base;
3. on-demand producers, whose results are written back to the knowledge
   base with provenance before the predicates are evaluated:

   * ``<stat>_<BAND>``, e.g. ``mean_NDVI``: the statistic over the query's
     whole time window;
   * ``mowing_event_count:<year>`` and ``mowing_events_per_year`` from the
     mowing detector run on the parcel's prepared daily NDVI.

   Statistics are stored as ``<name>@<window>``; mowing attributes as
   ``<name>@<tag>``, a digest of the window, the masking parameters and the
   detector parameters, so a query with other parameters recomputes them.

A missing value never satisfies a comparison.
"""

from dataclasses import dataclass, field
import json
import logging
import math
import operator
from pathlib import Path
import re
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import check_keys, dataclass_keys
from .errors import ConfigError, InsufficientDataError, PreconditionError, UnknownAttributeError, UsageError
from .fingerprint import fingerprint
from .grid import BandId, BBox, CubeArray
from .knowledge import KnowledgeBase
from .masking import DEFAULT_CLOUD_BUFFER_M, DEFAULT_INWARD_BUFFER_M
from .parcels import LabelRaster, Parcel, parcels_in_bbox
from .periods import day_to_iso, to_day, year_of
from .phenology import detect_mowing
from .sits import PipelineConfig, TimeSeries, prepare
from .zonal import STATISTICS, StatRequest, ZonalStatsTable, zonal_stats_grouped

log = logging.getLogger(__name__)

OPERATORS: Dict[str, Callable[[Any, Any], bool]] = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
_ALIASES = {"==": "=", "≠": "!=", "<>": "!=", "≤": "<=", "≥": ">="}
_ORDERING = {"<", "<=", ">", ">="}
_PREDICATE_RE = re.compile(r"^\s*([A-Za-z_][\w:]*)\s*(==|!=|<>|<=|>=|=|<|>|≠|≤|≥)\s*(.+?)\s*$")
_AND_RE = re.compile(r"\s+AND\s+", re.IGNORECASE)
_STAT_ATTR_RE = re.compile(r"^(" + "|".join(STATISTICS) + r")_([A-Za-z0-9_]+)$")
_MOWING_YEAR_RE = re.compile(r"^mowing_event_count:(\d{4})$")

DERIVED = ("crop_mismatch",)
MOWING_RATE = "mowing_events_per_year"
SCENE_FILTER = "max_cloud_cover"
OUTPUTS = ("parcels", "stats", "features", "animation")
ZONAL_PRODUCER = "zonal_stats"
MOWING_PRODUCER = "mowing_detector"


def _literal(text: str) -> Any:
    t = text.strip()
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "'\"":
        return t[1:-1]
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("null", "none"):
        return None
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


@dataclass(frozen=True)
class Predicate:
    field: str
    op: str
    value: Any = None
    other_field: Optional[str] = None

    def __post_init__(self):
        op = _ALIASES.get(self.op, self.op)
        if op not in OPERATORS:
            raise UsageError(f"unknown comparison operator {self.op!r}")
        object.__setattr__(self, "op", op)

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        m = _PREDICATE_RE.match(text)
        if not m:
            raise UsageError(f"cannot parse predicate {text!r} (expected '<field> <op> <value>')")
        name, op, rhs = m.groups()
        if rhs.startswith("$"):
            return cls(name, op, other_field=rhs[1:])
        return cls(name, op, _literal(rhs))

    @classmethod
    def from_obj(cls, obj: Any) -> "Predicate":
        if isinstance(obj, Predicate):
            return obj
        if isinstance(obj, str):
            return cls.parse(obj)
        if isinstance(obj, Mapping):
            check_keys("predicate", obj, ("field", "op", "value", "other_field"))
            try:
                return cls(str(obj["field"]), str(obj["op"]), obj.get("value"), obj.get("other_field"))
            except KeyError as exc:
                raise ConfigError(f"predicate missing {exc}") from None
        raise ConfigError(f"cannot read predicate from {obj!r}")

    def fields(self) -> List[str]:
        return [self.field] + ([self.other_field] if self.other_field else [])

    def evaluate(self, row: Mapping[str, Any]) -> bool:
        left = row.get(self.field)
        right = row.get(self.other_field) if self.other_field else self.value
        if left is None or right is None:
            return False
        if isinstance(left, float) and math.isnan(left):
            return False
        if self.op in _ORDERING:
            if isinstance(left, bool) or isinstance(right, bool) or \
                    not (isinstance(left, (int, float)) and isinstance(right, (int, float))):
                raise UsageError(f"ordering comparison {self} needs numeric operands, got {left!r} and {right!r}")
        return bool(OPERATORS[self.op](left, right))

    def __str__(self) -> str:
        rhs = f"${self.other_field}" if self.other_field else repr(self.value)
        return f"{self.field} {self.op} {rhs}"


def parse_where(text: str) -> Tuple[Predicate, ...]:
    """Split a conjunction on AND; OR and nesting are not supported."""
    if re.search(r"\s+OR\s+", text, re.IGNORECASE):
        raise UsageError("only conjunctions (AND) are supported")
    parts = [p for p in _AND_RE.split(text.strip()) if p.strip()]
    return tuple(Predicate.parse(p) for p in parts)


@dataclass(frozen=True)
class Region:
    bbox: Optional[BBox] = None
    parcel_ids: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.bbox is not None and self.parcel_ids is not None:
            raise UsageError("region is either a bbox or a parcel id set")
        if self.bbox is not None:
            object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.parcel_ids is not None:
            object.__setattr__(self, "parcel_ids", tuple(sorted({int(i) for i in self.parcel_ids})))

    @classmethod
    def from_obj(cls, obj: Any) -> "Region":
        if obj is None or obj == "all":
            return cls()
        if isinstance(obj, Region):
            return obj
        if isinstance(obj, Mapping):
            check_keys("region", obj, ("bbox", "parcel_ids"))
            return cls(obj.get("bbox"), obj.get("parcel_ids"))
        raise ConfigError(f"cannot read region from {obj!r}")


@dataclass(frozen=True)
class QuerySpec:
    predicates: Tuple[Predicate, ...] = ()
    region: Region = field(default_factory=Region)
    time_range: Optional[Tuple[int, int]] = None
    outputs: Tuple[str, ...] = ("parcels",)
    max_cloud_cover_fraction: float = 1.0
    buffer_inward_m: float = DEFAULT_INWARD_BUFFER_M
    cloud_buffer_m: float = DEFAULT_CLOUD_BUFFER_M
    mowing: Mapping[str, Any] = field(default_factory=dict)
    stats: Optional[Mapping[str, Any]] = None
    features: Optional[Mapping[str, Any]] = None
    animation: Optional[Mapping[str, Any]] = None

    def __post_init__(self):
        preds = tuple(Predicate.from_obj(p) for p in self.predicates)
        scene = [p for p in preds if p.field == SCENE_FILTER]
        for p in scene:
            if p.op not in ("<", "<=") or not isinstance(p.value, (int, float)):
                raise UsageError(f"{SCENE_FILTER} only supports '<=' or '<' with a number")
            object.__setattr__(self, "max_cloud_cover_fraction", min(self.max_cloud_cover_fraction, float(p.value)))
        object.__setattr__(self, "predicates", tuple(p for p in preds if p.field != SCENE_FILTER))
        object.__setattr__(self, "region", Region.from_obj(self.region))
        if self.time_range is not None:
            a, b = self.time_range
            object.__setattr__(self, "time_range", (to_day(a), to_day(b)))
        outputs = (self.outputs,) if isinstance(self.outputs, str) else tuple(self.outputs)
        for o in outputs:
            if o not in OUTPUTS:
                raise UsageError(f"unknown query output {o!r} (expected one of {', '.join(OUTPUTS)})")
        object.__setattr__(self, "outputs", outputs)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QuerySpec":
        check_keys("query spec", data, dataclass_keys(cls) + ["where"])
        kw = dict(data)
        preds = list(kw.pop("predicates", []) or [])
        if "where" in kw:
            preds = list(parse_where(str(kw.pop("where")))) + preds
        kw["predicates"] = tuple(preds)
        if isinstance(kw.get("time_range"), list):
            kw["time_range"] = tuple(kw["time_range"])
        if isinstance(kw.get("outputs"), list):
            kw["outputs"] = tuple(kw["outputs"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"query spec: {exc}") from None

    def window_label(self) -> str:
        if self.time_range is None:
            return "all"
        return f"{day_to_iso(self.time_range[0])}/{day_to_iso(self.time_range[1])}"


@dataclass
class QueryContext:
    """Cube access for on-demand producers."""

    cube: Any
    labels: LabelRaster
    parcels: Sequence[Parcel] = ()
    threads: int = 1


@dataclass
class QueryResult:
    spec: QuerySpec
    parcel_ids: List[int]
    rows: pd.DataFrame
    produced: List[str] = field(default_factory=list)
    stats: Optional[ZonalStatsTable] = None
    features: Any = None
    animations: Dict[int, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.parcel_ids)

    def to_csv(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.rows.to_csv(p, index=False, float_format="%.9g", lineterminator="\n")
        return p


# --- attribute resolution --------------------------------------------------------

def _crop_mismatch(row: Mapping[str, Any]) -> Optional[bool]:
    declared, predicted = row.get("crop_declared"), row.get("crop_predicted")
    if declared is None or predicted is None:
        return None
    return declared != predicted


def _stat_attribute(name: str) -> Optional[Tuple[str, BandId]]:
    m = _STAT_ATTR_RE.match(name)
    if not m:
        return None
    try:
        return m.group(1), BandId.parse(m.group(2))
    except UsageError:
        return None


def producible(name: str) -> bool:
    return _stat_attribute(name) is not None or bool(_MOWING_YEAR_RE.match(name)) or name == MOWING_RATE


def _years(spec: QuerySpec, ctx: QueryContext) -> List[int]:
    if spec.time_range is not None:
        a, b = spec.time_range
    else:
        times = np.asarray(ctx.cube.times)
        if times.size == 0:
            raise PreconditionError("cube has no timesteps")
        a, b = int(times.min()), int(times.max()) + 1
    return list(range(year_of(a), year_of(b - 1) + 1))


def _mowing_tag(spec: QuerySpec) -> str:
    params = {
        "window": spec.window_label(),
        "buffer_inward_m": spec.buffer_inward_m,
        "cloud_buffer_m": spec.cloud_buffer_m,
        "max_cloud_cover_fraction": spec.max_cloud_cover_fraction,
        "mowing": dict(spec.mowing),
    }
    return fingerprint(json.dumps(params, sort_keys=True, default=str).encode("utf-8"), length=8) or ""


def _stored_name(name: str, spec: QuerySpec) -> str:
    # keyed by window, masking and detector parameters
    if _MOWING_YEAR_RE.match(name) or name == MOWING_RATE:
        return f"{name}@{_mowing_tag(spec)}"
    return f"{name}@{spec.window_label()}"


def _produce_stats(names: Sequence[str], ids: Sequence[int], spec: QuerySpec, ctx: QueryContext,
                   kb: KnowledgeBase) -> Dict[str, Dict[int, Any]]:
    by_band: Dict[BandId, List[str]] = {}
    for n in names:
        stat, band = _stat_attribute(n)  # type: ignore[misc]
        by_band.setdefault(band, []).append(stat)
    wanted = set(ids)
    out: Dict[str, Dict[int, Any]] = {}
    for band in sorted(by_band, key=lambda b: b.value):
        req = StatRequest(statistics=tuple(sorted(set(by_band[band]))), period="whole", bands=(band,),
                          buffer_inward_m=spec.buffer_inward_m, cloud_buffer_m=spec.cloud_buffer_m,
                          max_cloud_cover_fraction=spec.max_cloud_cover_fraction, time_range=spec.time_range)
        run_id = fingerprint(repr(sorted(req.to_dict().items())).encode("utf-8")) or ""
        table = zonal_stats_grouped(ctx.cube, ctx.labels, req, threads=ctx.threads)
        values: Dict[int, Dict[str, Any]] = {}
        for pid, _period, _band, stat, value, _n in table.records():
            if pid in wanted:
                values.setdefault(pid, {})[_stored_name(f"{stat}_{band.value}", spec)] = value
        for stat in by_band[band]:
            name = f"{stat}_{band.value}"
            out[name] = {pid: values.get(pid, {}).get(_stored_name(name, spec)) for pid in ids}
        kb.upsert({pid: values[pid] for pid in ids if pid in values}, ZONAL_PRODUCER, run_id)
    return out


def mowing_counts(ctx: QueryContext, ids: Sequence[int], years: Sequence[int], spec: QuerySpec,
                  kb: Optional[KnowledgeBase] = None) -> Dict[int, Dict[int, int]]:
    """Detected mowing events per parcel and calendar year from daily parcel NDVI."""
    params = dict(spec.mowing)
    pipeline = PipelineConfig.from_dict(params.pop("pipeline", {}) or {})
    check_keys("mowing parameters", params, ("min_pre", "min_drop", "max_window_days", "refractory_days"))
    window = (to_day(f"{min(years)}-01-01"), to_day(f"{max(years) + 1}-01-01"))
    if spec.time_range is not None:
        window = spec.time_range
    req = StatRequest(statistics=("mean",), period="day", bands=(BandId.NDVI,),
                      buffer_inward_m=spec.buffer_inward_m, cloud_buffer_m=spec.cloud_buffer_m,
                      max_cloud_cover_fraction=spec.max_cloud_cover_fraction, time_range=window)
    frame = zonal_stats_grouped(ctx.cube, ctx.labels, req, threads=ctx.threads).frame
    counts: Dict[int, Dict[int, int]] = {}
    for pid in ids:
        rows = frame[frame["parcel_id"] == pid]
        per_year = {int(y): 0 for y in years}
        if len(rows):
            ts = TimeSeries(rows["period_start"].to_numpy(np.int64), rows["value"].to_numpy(np.float64))
            try:
                events = detect_mowing(prepare(ts, pipeline), parcel_id=pid, **params)
            except InsufficientDataError:
                events = []
            for ev in events:
                if ev.year in per_year:
                    per_year[ev.year] += 1
        counts[pid] = per_year
    if kb is not None:
        run_id = fingerprint(repr((req.to_dict(), sorted(spec.mowing.items()))).encode("utf-8")) or ""
        kb.upsert({pid: {_stored_name(f"mowing_event_count:{y}", spec): n for y, n in c.items()}
                   for pid, c in counts.items()}, MOWING_PRODUCER, run_id)
    return counts


def _produce_mowing(names: Sequence[str], ids: Sequence[int], spec: QuerySpec, ctx: QueryContext,
                    kb: KnowledgeBase) -> Dict[str, Dict[int, Any]]:
    years = _years(spec, ctx)
    wanted = {int(m.group(1)) for m in (_MOWING_YEAR_RE.match(n) for n in names) if m}
    counts = mowing_counts(ctx, ids, sorted(set(years) | wanted), spec, kb)
    out: Dict[str, Dict[int, Any]] = {}
    for n in names:
        m = _MOWING_YEAR_RE.match(n)
        if m:
            out[n] = {pid: counts[pid].get(int(m.group(1))) for pid in ids}
    if MOWING_RATE in names:
        rate = {pid: sum(counts[pid][y] for y in years) / float(len(years)) for pid in ids}
        out[MOWING_RATE] = rate
        kb.upsert({pid: {_stored_name(MOWING_RATE, spec): v} for pid, v in rate.items()}, MOWING_PRODUCER)
    return out


# --- evaluation ------------------------------------------------------------------------

def _universe(spec: QuerySpec, kb: KnowledgeBase, ctx: Optional[QueryContext]) -> List[int]:
    known = set(kb.parcel_ids())
    if ctx is not None and ctx.parcels:
        known |= {p.id for p in ctx.parcels}
    region = spec.region
    if region.bbox is not None:
        if ctx is None or not ctx.parcels:
            raise UsageError("a bbox region needs parcel geometries")
        ids = {p.id for p in parcels_in_bbox(ctx.parcels, region.bbox)}
    elif region.parcel_ids is not None:
        missing = sorted(set(region.parcel_ids) - known)
        if missing:
            log.warning("query region names unknown parcel ids: %s", missing[:10])
        ids = set(region.parcel_ids) & known
    else:
        ids = known
    if not ids:
        raise PreconditionError("empty region: no parcels to query")
    return sorted(ids)


def run_query(spec: QuerySpec, kb: KnowledgeBase, ctx: Optional[QueryContext] = None) -> QueryResult:
    ids = _universe(spec, kb, ctx)
    names = list(dict.fromkeys(f for p in spec.predicates for f in p.fields()))
    stored = set(kb.attributes())
    unknown = [n for n in names if n not in DERIVED and n not in stored and not producible(n)]
    if unknown:
        raise UnknownAttributeError(f"unknown attribute(s): {', '.join(unknown)}")

    columns: Dict[str, Dict[int, Any]] = {}
    for n in names:
        if n in stored and n not in DERIVED:
            columns[n] = {pid: kb.get(pid, n) for pid in ids}
    pending = [n for n in names if n not in DERIVED and n not in columns]
    produced: List[str] = []
    if pending:
        if ctx is None:
            raise PreconditionError(f"attribute(s) {', '.join(pending)} must be computed from the cube, "
                                    "but no cube is available")
        stats = [n for n in pending if _stat_attribute(n) is not None]
        mowing = [n for n in pending if n not in stats]
        if stats:
            columns.update(_produce_stats(stats, ids, spec, ctx, kb))
        if mowing:
            columns.update(_produce_mowing(mowing, ids, spec, ctx, kb))
        produced = pending

    rows: List[Dict[str, Any]] = []
    for pid in ids:
        row: Dict[str, Any] = {"parcel_id": pid}
        row.update({n: columns[n][pid] for n in columns})
        if "crop_mismatch" in names:
            base = {"crop_declared": kb.get(pid, "crop_declared"), "crop_predicted": kb.get(pid, "crop_predicted")}
            row["crop_mismatch"] = _crop_mismatch(base)
        if all(p.evaluate(row) for p in spec.predicates):
            rows.append(row)
    frame = pd.DataFrame(rows, columns=["parcel_id"] + names)
    hits = [int(r["parcel_id"]) for r in rows]
    log.info("query matched %d of %d parcel(s)", len(hits), len(ids))
    result = QueryResult(spec, hits, frame, produced)
    if ctx is not None and hits:
        _attach_outputs(result, ctx)
    return result


def _attach_outputs(result: QueryResult, ctx: QueryContext) -> None:
    spec = result.spec
    keep = set(result.parcel_ids)
    labels = LabelRaster(ctx.labels.grid, np.where(np.isin(ctx.labels.labels, list(keep)), ctx.labels.labels, -1))
    if "stats" in spec.outputs:
        params = dict(spec.stats or {})
        if spec.time_range is not None:
            params.setdefault("time_range", spec.time_range)
        req = StatRequest.from_dict(params)
        result.stats = zonal_stats_grouped(ctx.cube, labels, req, threads=ctx.threads)
    if "features" in spec.outputs:
        from .features import FeatureSpec, build_feature_space

        fspec = FeatureSpec.from_dict(dict(spec.features or {}))
        window = fspec.time_range or spec.time_range
        bands = fspec.bands + ((fspec.phenology_band,) if fspec.phenology else ())
        cube = ctx.cube if isinstance(ctx.cube, CubeArray) else ctx.cube.load(window, cube_bands(bands))
        result.features = build_feature_space("parcel", fspec, cube, labels, keys=result.parcel_ids,
                                              threads=ctx.threads)
    if "animation" in spec.outputs:
        from .animate import AnimationSpec, animate

        template = dict(spec.animation or {})
        for pid in result.parcel_ids:
            aspec = AnimationSpec.from_dict({**template, "parcel_id": pid})
            result.animations[pid] = animate(ctx.cube, aspec, ctx.labels, threads=ctx.threads)


def cube_bands(bands: Sequence[BandId]) -> List[BandId]:
    """Bands to load for bands: SCL joins any optical band so scenes can be masked."""
    out = list(bands)
    if any(b.sensor == "S2" and not b.categorical for b in out):
        out.append(BandId.SCL)
    return list(dict.fromkeys(out))


def brute_force(kb: KnowledgeBase, predicates: Sequence[Predicate], ids: Optional[Sequence[int]] = None,
                aliases: Optional[Mapping[str, str]] = None) -> List[int]:
    """Linear scan over knowledge-base rows; ``aliases`` maps predicate fields to stored names."""
    aliases = aliases or {}
    rows = kb.rows()
    out = []
    for pid in sorted(rows if ids is None else ids):
        row = dict(rows.get(pid, {}))
        for f, stored in aliases.items():
            row[f] = row.get(stored)
        row["crop_mismatch"] = _crop_mismatch(row)
        if all(p.evaluate(row) for p in predicates):
            out.append(pid)
    return out


def stored_attribute_name(name: str, spec: QuerySpec) -> str:
    """Knowledge-base name an on-demand attribute is recorded under for this query."""
    return _stored_name(name, spec) if producible(name) else name


__all__ = [
    "Predicate",
    "parse_where",
    "Region",
    "QuerySpec",
    "QueryContext",
    "QueryResult",
    "run_query",
    "mowing_counts",
    "brute_force",
    "cube_bands",
    "producible",
    "stored_attribute_name",
]
