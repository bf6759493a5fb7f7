from __future__ import annotations

"""Canned analysis scenarios.

query1  feature space of monthly COHERENCE_VV and NDVI parcel means
query2  parcels declared as one crop but predicted as another, with an NDVI
        animation (10-day steps, June to October) per flagged parcel
query3  grassland use intensity: mowing events per year, and hotspots with
        low mean NDVI and fewer than one event per year
"""

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .animate import export_frames
from .config import check_keys, dataclass_keys, load_document
from .errors import ConfigError, PreconditionError, UsageError
from .grid import BandId
from .periods import to_day, year_of, year_start
from .query import MOWING_RATE, Predicate, QuerySpec, brute_force, run_query, stored_attribute_name
from .synthetic import GRASSLAND, MismatchSpec, SyntheticConfig
from .workspace import Workspace, synthesize

log = logging.getLogger(__name__)

SCENARIOS = ("query1", "query2", "query3")


def _default_synthetic() -> SyntheticConfig:
    return SyntheticConfig(start="2019-01-01", end="2021-01-01",
                           mismatches=(MismatchSpec(), MismatchSpec(), MismatchSpec()))


@dataclass(frozen=True)
class ScenarioConfig:
    synthetic: SyntheticConfig = field(default_factory=_default_synthetic)
    feature_bands: Tuple[str, ...] = ("COHERENCE_VV", "NDVI")
    buffer_inward_m: float = 5.0
    cloud_buffer_m: float = 50.0
    max_cloud_cover_fraction: float = 1.0
    declared_crop: str = "maize"
    animation_year: Optional[int] = None
    animation_start: str = "06-01"
    animation_end: str = "10-31"
    step_days: int = 10
    ndvi_threshold: float = 0.4
    mowing_rate_threshold: float = 1.0
    mowing: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.step_days < 1:
            raise ConfigError("step_days must be >= 1")
        if not 0.0 <= self.max_cloud_cover_fraction <= 1.0:
            raise ConfigError("max_cloud_cover_fraction must be in [0, 1]")
        for b in self.feature_bands:
            BandId.parse(b)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        check_keys("scenario config", data, dataclass_keys(cls))
        kw = dict(data)
        if isinstance(kw.get("synthetic"), Mapping):
            kw["synthetic"] = SyntheticConfig.from_dict(kw["synthetic"])
        if isinstance(kw.get("feature_bands"), list):
            kw["feature_bands"] = tuple(kw["feature_bands"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"scenario config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_dict(load_document(path))


@dataclass
class ScenarioResult:
    name: str
    out_dir: Path
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def prepare_workspace(root: str | Path, cfg: ScenarioConfig, threads: int = 1) -> Workspace:
    """Open the workspace at root, synthesizing it from cfg.synthetic when absent."""
    try:
        return Workspace.open(root)
    except PreconditionError:
        log.info("no workspace at %s; synthesizing one (seed %d)", root, cfg.synthetic.seed)
        return synthesize(root, cfg.synthetic, threads=threads)


def _data_years(ws: Workspace) -> List[int]:
    times = ws.cube().times
    if times.size == 0:
        raise PreconditionError("workspace has no processed acquisitions")
    return list(range(year_of(int(times.min())), year_of(int(times.max())) + 1))


def _full_years(years: List[int]) -> Tuple[int, int]:
    return year_start(years[0]), year_start(years[-1] + 1)


def _write_summary(res: ScenarioResult) -> None:
    path = res.out_dir / "summary.json"
    path.write_text(json.dumps(res.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    res.artifacts.append(path)


def _query1(ws: Workspace, cfg: ScenarioConfig, res: ScenarioResult, threads: int) -> None:
    if not any(r.sensor == "S1" for r in ws.cube().products()):
        raise PreconditionError("query1 needs S1 acquisitions (COHERENCE_VV) in the workspace")
    years = _data_years(ws)
    window = _full_years(years)
    features = {
        "bands": list(cfg.feature_bands),
        "unit": "month",
        "stats": ["mean"],
        "time_range": list(window),
        "buffer_inward_m": cfg.buffer_inward_m,
        "cloud_buffer_m": cfg.cloud_buffer_m,
        "max_cloud_cover_fraction": cfg.max_cloud_cover_fraction,
    }
    spec = QuerySpec(time_range=window, outputs=("parcels", "features"), features=features)
    result = run_query(spec, ws.kb, ws.query_context(threads))
    if result.features is None:
        raise PreconditionError("query1 found no parcels to describe")
    path = result.features.to_csv(res.out_dir / "features.csv")
    res.artifacts.append(path)
    res.summary.update({
        "parcels": len(result.parcel_ids),
        "columns": len(result.features.columns),
        "years": years,
        "bands": sorted(BandId.parse(b).value for b in cfg.feature_bands),
    })


def _query2(ws: Workspace, cfg: ScenarioConfig, res: ScenarioResult, threads: int) -> None:
    years = _data_years(ws)
    year = cfg.animation_year if cfg.animation_year is not None else years[-1]
    if year not in years:
        raise PreconditionError(f"query2: no acquisitions in {year} (data covers {years[0]}..{years[-1]})")
    animation = {
        "start": f"{year}-{cfg.animation_start}",
        "end": f"{year}-{cfg.animation_end}",
        "band": "NDVI",
        "step": f"{cfg.step_days}d",
        "buffer_inward_m": cfg.buffer_inward_m,
        "cloud_buffer_m": cfg.cloud_buffer_m,
        "max_cloud_cover_fraction": cfg.max_cloud_cover_fraction,
    }
    crop = cfg.declared_crop
    spec = QuerySpec(
        predicates=(Predicate("crop_declared", "=", crop), Predicate("crop_predicted", "!=", crop)),
        outputs=("parcels", "animation"),
        animation=animation,
    )
    result = run_query(spec, ws.kb, ws.query_context(threads))
    res.artifacts.append(result.to_csv(res.out_dir / "mismatches.csv"))
    frames = {}
    for pid, fs in sorted(result.animations.items()):
        written = export_frames(fs, res.out_dir / f"parcel_{pid}")
        res.artifacts.extend(written)
        frames[str(pid)] = len(fs)
    res.summary.update({"parcels": result.parcel_ids, "frames": frames, "year": year})
    try:
        planted = ws.truth().get("mismatches")
    except PreconditionError:
        planted = None
    if planted is not None:
        res.summary["planted"] = planted
        res.summary["matches_planted"] = sorted(planted) == result.parcel_ids


def _query3(ws: Workspace, cfg: ScenarioConfig, res: ScenarioResult, threads: int) -> None:
    years = _data_years(ws)
    if len(years) < 2:
        raise PreconditionError(f"query3 needs a multi-year dataset, workspace covers only {years[0]}")
    window = _full_years(years)
    kb = ws.kb
    grass = [pid for pid in kb.parcel_ids() if kb.get(pid, "crop_declared") == GRASSLAND]
    if not grass:
        raise PreconditionError("query3: no parcels declared as grassland")
    predicates = (
        Predicate("mean_NDVI", "<", cfg.ndvi_threshold),
        Predicate(MOWING_RATE, "<", cfg.mowing_rate_threshold),
    )
    spec = QuerySpec(
        predicates=predicates,
        region={"parcel_ids": grass},
        time_range=window,
        buffer_inward_m=cfg.buffer_inward_m,
        cloud_buffer_m=cfg.cloud_buffer_m,
        max_cloud_cover_fraction=cfg.max_cloud_cover_fraction,
        mowing=dict(cfg.mowing),
    )
    result = run_query(spec, kb, ws.query_context(threads))

    rows = []
    for pid in grass:
        row: Dict[str, Any] = {"parcel_id": pid}
        for y in years:
            row[str(y)] = kb.get(pid, stored_attribute_name(f"mowing_event_count:{y}", spec))
        row[MOWING_RATE] = kb.get(pid, stored_attribute_name(MOWING_RATE, spec))
        row["mean_NDVI"] = kb.get(pid, stored_attribute_name("mean_NDVI", spec))
        rows.append(row)
    counts = pd.DataFrame(rows, columns=["parcel_id"] + [str(y) for y in years] + [MOWING_RATE, "mean_NDVI"])
    path = res.out_dir / "mowing_counts.csv"
    counts.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    res.artifacts.append(path)
    res.artifacts.append(result.to_csv(res.out_dir / "hotspots.csv"))

    aliases = {name: stored_attribute_name(name, spec) for name in ("mean_NDVI", MOWING_RATE)}
    oracle = brute_force(kb, spec.predicates, grass, aliases)
    if oracle != result.parcel_ids:
        log.error("query3 hotspots %s differ from the linear scan %s", result.parcel_ids, oracle)
    res.summary.update({
        "grassland_parcels": len(grass),
        "hotspots": result.parcel_ids,
        "linear_scan": oracle,
        "matches_linear_scan": oracle == result.parcel_ids,
        "years": years,
    })


_RUNNERS = {"query1": _query1, "query2": _query2, "query3": _query3}


def run_scenario(name: str, ws: Workspace, cfg: Optional[ScenarioConfig] = None,
                 out_dir: Optional[str | Path] = None, threads: int = 1) -> ScenarioResult:
    """Run one canned scenario against a workspace; artifacts go to out_dir (default <workspace>/scenarios/<name>)."""
    if name not in _RUNNERS:
        raise UsageError(f"unknown scenario {name!r} (expected one of {', '.join(SCENARIOS)})")
    cfg = cfg or ScenarioConfig()
    out = Path(out_dir) if out_dir is not None else ws.root / "scenarios" / name
    out.mkdir(parents=True, exist_ok=True)
    res = ScenarioResult(name, out)
    _RUNNERS[name](ws, cfg, res, threads)
    res.summary["scenario"] = name
    _write_summary(res)
    log.info("scenario %s: %d artifact(s) in %s", name, len(res.artifacts), out)
    return res


def expected_frame_count(start: str, end: str, step_days: int) -> int:
    days = to_day(end) - to_day(start) + 1
    return int(np.ceil(days / step_days))


__all__ = [
    "SCENARIOS",
    "ScenarioConfig",
    "ScenarioResult",
    "prepare_workspace",
    "run_scenario",
    "expected_frame_count",
]
