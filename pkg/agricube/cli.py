from __future__ import annotations

"""Command-line front-end (``adc``). See README for usage examples."""

import argparse
import dataclasses
from importlib import resources
import json
import logging
import os
from pathlib import Path
import shutil
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

from .config import AdcConfig, load_document
from .errors import AdcError, PreconditionError, UsageError
from .fingerprint import tree_checksums
from .manifest import RunManifest, write_manifest
from .render import Palette, render_table, supports_color

log = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
DEMO_CONFIG = "demo.json"
_WORKSPACE_OUTPUTS = ("workspace.json", "parcels.geojson", "labels*.tiles", "truth.json", "cube/**/*.tiles")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclasses.dataclass
class _Run:
    """What a command hands back for the manifest."""

    outputs: List[Path] = dataclasses.field(default_factory=list)
    base: Optional[Path] = None
    seed: Optional[int] = None
    config: Optional[str] = None
    manifest_dir: Optional[Path] = None


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bbox(text: str):
    try:
        vals = [float(t) for t in _csv_list(text)]
    except ValueError:
        vals = []
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected xmin,ymin,xmax,ymax, got {text!r}")
    return tuple(vals)


def _time_range(args) -> Optional[tuple]:
    start, end = getattr(args, "date_from", None), getattr(args, "date_to", None)
    if start is None and end is None:
        return None
    if start is None or end is None:
        raise UsageError("--from and --to must be given together")
    from .periods import to_day

    return to_day(start), to_day(end) + 1


def _open_workspace(cfg: AdcConfig):
    from .workspace import Workspace

    return Workspace.open(cfg.workspace)


def _beside(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}{suffix}")


# --- commands ------------------------------------------------------------------

def cmd_ingest(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .workspace import IngestConfig, ingest_from_config

    icfg = IngestConfig.load(args.config)
    ws, records = ingest_from_config(cfg.workspace, icfg, threads=cfg.threads)
    print(f"ingested {len(records)} product(s) into {ws.root}")
    root = Path(cfg.workspace)
    return _Run(outputs=_tree(root), base=root, config=args.config, manifest_dir=root / "runs")


def _tree(root: Path) -> List[Path]:
    return [root / k for k in tree_checksums(root, _WORKSPACE_OUTPUTS)]


def _synthetic_config(path: Optional[str], seed: Optional[int]):
    from .synthetic import SyntheticConfig

    if path is None:
        scfg = SyntheticConfig()
    else:
        doc = load_document(path)
        scfg = SyntheticConfig.from_dict(doc["synthetic"] if "synthetic" in doc else doc)
    if seed is not None:
        scfg = dataclasses.replace(scfg, seed=int(seed))
    return scfg


def cmd_synth(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .workspace import WORKSPACE_FILE, synthesize

    scfg = _synthetic_config(args.config, args.seed)
    root = Path(cfg.workspace)
    if (root / WORKSPACE_FILE).exists():
        if not args.force:
            raise UsageError(f"workspace already exists: {root} (use --force to replace it)")
        shutil.rmtree(root)
    ws = synthesize(root, scfg, threads=cfg.threads, tile_size=cfg.tile_size)
    print(f"synthesized {len(ws.parcels)} parcels, {len(ws.catalog)} products into {root} (seed {scfg.seed})")
    return _Run(outputs=_tree(root), base=root, seed=scfg.seed, config=args.config, manifest_dir=root / "runs")


def cmd_rasterize(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .parcels import load_parcels

    ws = _open_workspace(cfg)
    if args.parcels:
        ws.set_parcels(load_parcels(args.parcels))
    lab = ws.rasterize(args.grid, threads=cfg.threads)
    counts = lab.pixel_counts()
    print(f"rasterized {len(ws.parcels)} parcels: {len(counts)} with pixels, {lab.overlaps} contested pixel(s)")
    if lab.overlaps:
        print(pal.c("YELLOW", f"warning: {lab.overlaps} pixel(s) claimed by more than one parcel (lowest id kept)"))
    root = ws.root
    outs = [p for p in root.glob("labels*.tiles")] + [root / "parcels.geojson"]
    return _Run(outputs=outs, base=root, manifest_dir=root / "runs")


def cmd_stats(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .zonal import StatRequest, zonal_stats_grouped, zonal_stats_serial

    ws = _open_workspace(cfg)
    req = StatRequest(
        statistics=tuple(_csv_list(args.stat)),
        period=args.period,
        bands=tuple(_csv_list(args.bands)),
        buffer_inward_m=args.inward_buffer,
        cloud_buffer_m=args.cloud_buffer,
        max_cloud_cover_fraction=args.max_cloud,
        median_method=args.median_method,
        season_start_month=args.season_start_month,
        time_range=_time_range(args),
    )
    t0 = time.perf_counter()
    if args.engine == "serial":
        table = zonal_stats_serial(ws.cube(), ws.parcels, req, ws.grid())
    else:
        table = zonal_stats_grouped(ws.cube(), ws.labels, req, threads=cfg.threads)
    elapsed = time.perf_counter() - t0
    out = table.to_csv(args.out)
    print(f"{len(table)} record(s) -> {out} ({args.engine}, {elapsed:.2f}s)")
    return _Run(outputs=[out])


def cmd_bench(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .bench import run_benchmark
    from .grid import GridSpec

    grid = GridSpec(0.0, 0.0, args.grid_size, args.grid_size, 10.0)
    report = run_benchmark(
        args.sizes, grid, months=args.months, bands=args.bands, seed=args.seed, threads=cfg.threads,
        serial_budget_s=None if args.serial_budget <= 0 else args.serial_budget,
        serial_max_parcels=None if args.serial_all else args.serial_max_parcels,
        verify=not args.no_verify,
    )
    out = report.to_csv(args.out)
    print(report.render(pal))
    print(f"report -> {out}")
    return _Run(outputs=[out], seed=args.seed)


def cmd_sits(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .grid import BandId
    from .periods import year_of, year_start
    from .phenology import phenology
    from .sits import PipelineConfig, TimeSeries, parcel_series, prepare, write_series_csv
    from .zonal import StatRequest, masked_cube

    ws = _open_workspace(cfg)
    band = BandId.parse(args.band)
    pipeline = PipelineConfig.from_dict(load_document(args.pipeline)) if args.pipeline else PipelineConfig()
    req = StatRequest(period="day", bands=(band,), cloud_buffer_m=args.cloud_buffer,
                      max_cloud_cover_fraction=args.max_cloud, time_range=_time_range(args))
    cube = masked_cube(ws.cube(), req)
    ts = parcel_series(cube, ws.labels, args.parcel, band)
    if not args.raw:
        ts = prepare(ts, pipeline)
    out = write_series_csv(ts, args.out)
    print(f"parcel {args.parcel} {band.value}: {len(ts)} point(s), {ts.n_valid} valid -> {out}")
    if args.phenology:
        for year in sorted({year_of(int(t)) for t in ts.times}):
            sel = (ts.times >= year_start(year)) & (ts.times < year_start(year + 1)) & ts.valid
            if sel.sum() < 2:
                continue
            metrics = phenology(TimeSeries(ts.times[sel], ts.values[sel]))
            print(f"  {year}: " + json.dumps({k: (None if v is None else round(v, 4))
                                              for k, v in metrics.as_dict().items()}))
    return _Run(outputs=[out], config=args.pipeline)


def cmd_features(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .features import FeatureSpec, build_feature_space, extract_patches
    from .query import cube_bands

    ws = _open_workspace(cfg)
    spec = FeatureSpec.from_dict(load_document(args.spec))
    bands = spec.bands + ((spec.phenology_band,) if spec.phenology else ())
    cube = ws.load_cube(spec.time_range, cube_bands(bands))
    labels = ws.labels if args.level == "parcel" else None
    space = build_feature_space(args.level, spec, cube, labels, threads=cfg.threads)
    out = space.to_csv(args.out)
    outputs = [out]
    print(f"{args.level} feature space: {len(space.keys)} row(s) x {len(space.columns)} column(s) -> {out}")
    if args.patch_size:
        h, w = args.patch_size
        patches = extract_patches(cube, h, w, args.patch_stride or h)
        pdir = Path(args.patch_dir) if args.patch_dir else _beside(Path(args.out), "_patches")
        manifest = patches.save(pdir)
        outputs += [manifest, pdir / "patches.npy", pdir / "patches_valid.npy"]
        print(f"{len(patches)} patch(es) {h}x{w} -> {pdir}")
    return _Run(outputs=outputs, config=args.spec)


def cmd_query(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .animate import export_frames
    from .query import QuerySpec, parse_where, run_query

    if not args.spec and not args.where:
        raise UsageError("query needs --spec or --where")
    doc: Dict[str, Any] = dict(load_document(args.spec)) if args.spec else {}
    if args.where:
        doc["predicates"] = list(doc.get("predicates") or []) + [str(p) for p in parse_where(args.where)]
    spec = QuerySpec.from_dict(doc)
    ws = _open_workspace(cfg)
    try:
        ctx = ws.query_context(cfg.threads)
    except PreconditionError:
        ctx = None
    result = run_query(spec, ws.kb, ctx)
    out = Path(args.out)
    outputs = [result.to_csv(out)]
    if result.stats is not None:
        outputs.append(result.stats.to_csv(_beside(out, "_stats.csv")))
    if result.features is not None:
        outputs.append(result.features.to_csv(_beside(out, "_features.csv")))
    for pid, frames in sorted(result.animations.items()):
        outputs += export_frames(frames, _beside(out, "_animation") / f"parcel_{pid}")
    print(f"{len(result)} parcel(s) matched -> {out}")
    if result.produced:
        print(pal.c("CYAN", f"computed on demand: {', '.join(result.produced)}"))
    return _Run(outputs=outputs, config=args.spec)


def _scenario_config(path: Optional[str]):
    from .scenarios import ScenarioConfig

    if path:
        return ScenarioConfig.load(path), path
    ref = resources.files("agricube") / "data" / DEMO_CONFIG
    with resources.as_file(ref) as p:
        return ScenarioConfig.load(p), str(p)


def cmd_scenario(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .scenarios import prepare_workspace, run_scenario

    scfg, source = _scenario_config(args.config)
    ws = prepare_workspace(cfg.workspace, scfg, threads=cfg.threads)
    res = run_scenario(args.name, ws, scfg, args.out_dir, threads=cfg.threads)
    print(pal.c("BOLD", f"scenario {args.name}: {len(res.artifacts)} artifact(s) in {res.out_dir}"))
    for key in sorted(res.summary):
        print(f"  {key}: {res.summary[key]}")
    flags = [k for k in ("matches_planted", "matches_linear_scan") if k in res.summary]
    for k in flags:
        color = "GREEN" if res.summary[k] else "RED"
        print(pal.c(color, f"  {k}: {res.summary[k]}"))
    return _Run(outputs=res.artifacts, base=res.out_dir, seed=scfg.synthetic.seed, config=source,
                manifest_dir=res.out_dir)


def cmd_animate(args, cfg: AdcConfig, pal: Palette) -> _Run:
    from .animate import AnimationSpec, animate, export_frames

    if (args.parcel is None) == (args.bbox is None):
        raise UsageError("animate needs exactly one of --parcel or --bbox")
    step = f"{args.step_days}d" if args.step_days else args.step
    spec = AnimationSpec(start=args.date_from, end=args.date_to, band=args.band, step=step,
                         parcel_id=args.parcel, bbox=args.bbox, statistic=args.stat,
                         buffer_inward_m=args.inward_buffer, cloud_buffer_m=args.cloud_buffer,
                         max_cloud_cover_fraction=args.max_cloud, scale=args.scale)
    ws = _open_workspace(cfg)
    labels = ws.labels if args.parcel is not None else None
    frames = animate(ws.cube(), spec, labels, threads=cfg.threads)
    outputs = export_frames(frames, args.out_dir)
    if frames.empty:
        print(pal.c("YELLOW", f"no frames: {frames.reason}"))
    else:
        with_data = sum(f.aggregate is not None for f in frames.frames)
        print(f"{len(frames)} frame(s), {with_data} with data -> {args.out_dir}")
    return _Run(outputs=outputs, base=Path(args.out_dir), manifest_dir=Path(args.out_dir))


def cmd_pipeline(args, cfg: AdcConfig, pal: Palette) -> _Run:
    ws = _open_workspace(cfg)
    reports = ws.process(args.step, retry_failed=not args.no_retry)
    rows = [[r.step, str(len(r.done)), str(len(r.failed)), str(len(r.waiting))] for r in reports]

    def color(_i: int, j: int, text: str) -> Optional[str]:
        return "RED" if j == 2 and text != "0" else None

    for line in render_table(["step", "done", "failed", "waiting"], rows, pal, color):
        print(line)
    return _Run(manifest_dir=ws.root / "runs")


def cmd_catalog(args, cfg: AdcConfig, pal: Palette) -> _Run:
    ws = _open_workspace(cfg)
    cat = ws.catalog
    if args.compact:
        dropped = cat.compact()
        print(f"catalog compacted: {dropped} superseded line(s) dropped")
    if args.pending:
        for pid in cat.pending_tasks(args.pending):
            print(pid)
        return _Run(manifest_dir=ws.root / "runs")
    rows = []
    for rec in cat.search(_time_range(args), None, args.sensor):
        flags = " ".join(f"{s}={rec.status(s)}" for s in cat.steps.get(rec.sensor, ()))
        frac = rec.metadata.get("cloud_fraction")
        rows.append([rec.product_id, rec.sensor, rec.acquisition_time, "-" if frac is None else f"{frac:.2f}", flags])
    for line in render_table(["product", "sensor", "date", "cloud", "flags"], rows, pal):
        print(line)
    return _Run(manifest_dir=ws.root / "runs")


COMMANDS: Dict[str, Callable[..., _Run]] = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "rasterize": cmd_rasterize,
    "stats": cmd_stats,
    "bench": cmd_bench,
    "sits": cmd_sits,
    "features": cmd_features,
    "query": cmd_query,
    "scenario": cmd_scenario,
    "animate": cmd_animate,
    "pipeline": cmd_pipeline,
    "catalog": cmd_catalog,
}


def _add_window(p: argparse.ArgumentParser) -> None:
    p.add_argument("--from", dest="date_from", help="First day (YYYY-MM-DD, inclusive)")
    p.add_argument("--to", dest="date_to", help="Last day (YYYY-MM-DD, inclusive)")


def _add_masking(p: argparse.ArgumentParser, inward: bool = True) -> None:
    from .masking import DEFAULT_CLOUD_BUFFER_M, DEFAULT_INWARD_BUFFER_M

    if inward:
        p.add_argument("--inward-buffer", type=float, default=DEFAULT_INWARD_BUFFER_M,
                       help=f"Inward parcel buffer in metres, 0 disables (default {DEFAULT_INWARD_BUFFER_M:g})")
    p.add_argument("--cloud-buffer", type=float, default=DEFAULT_CLOUD_BUFFER_M,
                   help=f"Cloud mask buffer in metres, 0 disables (default {DEFAULT_CLOUD_BUFFER_M:g})")
    p.add_argument("--max-cloud", type=float, default=1.0,
                   help="Drop scenes whose cloud fraction exceeds this (0..1, default 1)")


def build_parser() -> argparse.ArgumentParser:
    from . import __version__

    ap = _Parser(
        prog="adc",
        description="Parcel-aware Earth-observation data cube: ingest, zonal statistics, time series, "
                    "feature spaces, queries and animations over a local workspace.",
        epilog=(
            "Examples:\n"
            "  adc synth --seed 7                               # synthetic workspace in ./.adc\n"
            "  adc stats --stat mean --period month --bands NDVI --out stats.csv\n"
            "  adc query --where \"crop_declared = maize AND crop_predicted != maize\" --out hits.csv\n"
            "  adc scenario query2                              # bundled demo config\n"
            "  adc bench --sizes 1000,10000 --out bench.csv\n"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--workspace", help="Workspace directory (default .adc; env ADC_WORKSPACE)")
    ap.add_argument("--threads", type=int, help="Worker threads (default: available cores; env ADC_THREADS)")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug logging")
    ap.add_argument("--plain", action="store_true", help="Disable coloured output")
    sub = ap.add_subparsers(dest="cmd", metavar="COMMAND")

    p = sub.add_parser("ingest", help="Ingest products listed in a config document")
    p.add_argument("--config", required=True, help="Ingest config (JSON or YAML)")

    p = sub.add_parser("synth", help="Generate a synthetic workspace")
    p.add_argument("--config", help="Synthetic config, or a scenario config with a 'synthetic' section")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--force", action="store_true", help="Replace an existing workspace")

    p = sub.add_parser("rasterize", help="Rasterize parcels onto a workspace grid")
    p.add_argument("--parcels", help="GeoJSON feature collection (default: parcels already in the workspace)")
    p.add_argument("--grid", help="Grid id (default: the workspace default grid)")

    p = sub.add_parser("stats", help="Zonal statistics per parcel and period")
    p.add_argument("--stat", default="mean", help="Comma-separated statistics (default mean)")
    p.add_argument("--period", default="month", help="day, month, season, year, whole or <N>d (default month)")
    p.add_argument("--bands", default="NDVI", help="Comma-separated bands (default NDVI)")
    _add_masking(p)
    p.add_argument("--median-method", choices=("exact", "p2"), default="exact")
    p.add_argument("--season-start-month", type=int, default=12)
    p.add_argument("--engine", choices=("grouped", "serial"), default="grouped")
    _add_window(p)
    p.add_argument("--out", required=True, help="Output CSV")

    p = sub.add_parser("bench", help="Grouped versus serial zonal statistics benchmark")
    p.add_argument("--sizes", type=_int_list, default=[1000, 10000], help="Parcel counts (default 1000,10000)")
    p.add_argument("--grid-size", type=int, default=2048, help="Grid width and height in pixels (default 2048)")
    p.add_argument("--months", type=int, default=12)
    p.add_argument("--bands", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--serial-budget", type=float, default=600.0,
                   help="Skip serial legs projected above this many seconds (0 disables; default 600)")
    p.add_argument("--serial-max-parcels", type=int, default=10000,
                   help="Skip serial legs above this parcel count (default 10000)")
    p.add_argument("--serial-all", action="store_true", help="Opt in to serial legs at every size")
    p.add_argument("--no-verify", action="store_true", help="Skip the grouped/serial equality check")
    p.add_argument("--out", required=True, help="Output CSV")

    p = sub.add_parser("sits", help="Parcel time series through the SITS pipeline")
    p.add_argument("--parcel", type=int, required=True)
    p.add_argument("--band", default="NDVI")
    p.add_argument("--pipeline", help="Pipeline config document")
    p.add_argument("--raw", action="store_true", help="Write the masked series without the pipeline")
    p.add_argument("--phenology", action="store_true", help="Print phenology metrics per year")
    _add_masking(p, inward=False)
    _add_window(p)
    p.add_argument("--out", required=True, help="Output CSV")

    p = sub.add_parser("features", help="Build a feature space")
    p.add_argument("--level", choices=("parcel", "pixel"), default="parcel")
    p.add_argument("--spec", required=True, help="Feature spec document")
    p.add_argument("--patch-size", type=_int_list, help="Also extract H,W patches")
    p.add_argument("--patch-stride", type=int)
    p.add_argument("--patch-dir")
    p.add_argument("--out", required=True, help="Output CSV")

    p = sub.add_parser("query", help="Evaluate a parcel query")
    p.add_argument("--spec", help="Query spec document")
    p.add_argument("--where", help="Conjunction of predicates, e.g. \"mean_NDVI < 0.4 AND crop_declared = grassland\"")
    p.add_argument("--out", required=True, help="Output CSV")

    p = sub.add_parser("scenario", help="Run a canned scenario")
    p.add_argument("name", choices=("query1", "query2", "query3"))
    p.add_argument("--config", help="Scenario config (default: bundled demo)")
    p.add_argument("--out-dir", help="Artifact directory (default <workspace>/scenarios/<name>)")

    p = sub.add_parser("animate", help="Export per-period frames of one band")
    p.add_argument("--parcel", type=int)
    p.add_argument("--bbox", type=_bbox, help="xmin,ymin,xmax,ymax")
    p.add_argument("--band", default="NDVI")
    p.add_argument("--step-days", type=int, help="N-day steps anchored at --from")
    p.add_argument("--step", default="month", help="Calendar step when --step-days is not given (default month)")
    p.add_argument("--stat", default="mean")
    p.add_argument("--scale", type=int, default=4, help="Pixel replication factor for images (default 4)")
    _add_masking(p)
    p.add_argument("--from", dest="date_from", required=True)
    p.add_argument("--to", dest="date_to", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("pipeline", help="Run pending processing steps")
    p.add_argument("--step", choices=("ard", "mask", "cube"))
    p.add_argument("--no-retry", action="store_true", help="Leave failed products alone")

    p = sub.add_parser("catalog", help="List catalog records")
    p.add_argument("--pending", metavar="STEP", help="Only list products pending STEP")
    p.add_argument("--sensor", choices=("S1", "S2"))
    p.add_argument("--compact", action="store_true", help="Compact the catalog journal first")
    _add_window(p)
    return ap


def _manifest_path(args, run: _Run, cfg: AdcConfig) -> Path:
    if run.manifest_dir is not None:
        return run.manifest_dir / f"{args.cmd}.manifest.json" if run.manifest_dir.name == "runs" \
            else run.manifest_dir / "manifest.json"
    out = getattr(args, "out", None)
    if out:
        return _beside(Path(out), ".manifest.json")
    return Path(cfg.workspace) / "runs" / f"{args.cmd}.manifest.json"


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    if not argv:
        ap.print_usage(sys.stderr)
        return 1
    try:
        args = ap.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not args.cmd:
        ap.print_usage(sys.stderr)
        return 1

    cfg = AdcConfig.from_options(args)
    logging.basicConfig(level=getattr(logging, cfg.log_level, logging.WARNING), format=LOG_FORMAT)
    if os.environ.get("ADC_DEBUG"):
        print(f"[adc] workspace={cfg.workspace} threads={cfg.threads}", file=sys.stderr)
    pal = Palette(supports_color(args.plain))

    manifest = RunManifest(command=["adc"] + argv)
    t0 = time.perf_counter()
    try:
        run = COMMANDS[args.cmd](args, cfg, pal)
    except AdcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        manifest.exit_code = exc.exit_code
        run = _Run()
    manifest.wall_time_s = time.perf_counter() - t0
    manifest.seed = run.seed
    manifest.set_config(run.config)
    manifest.add_outputs(run.outputs, run.base)
    try:
        path = write_manifest(_manifest_path(args, run, cfg), manifest)
        log.info("manifest -> %s", path)
    except OSError as exc:
        log.warning("cannot write run manifest: %s", exc)
    return manifest.exit_code


__all__ = ["main", "build_parser", "COMMANDS"]


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
