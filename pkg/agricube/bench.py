from __future__ import annotations

"""Grouped versus serial zonal statistics benchmark.

Monthly means for one year of one band over one tile, at several parcel
counts. The serial leg runs under an explicit time budget: when the
projected serial time for a size exceeds it (or the size is above
``serial_max_parcels``) the leg is recorded as ``budget-exceeded``.
"""

from dataclasses import dataclass, field
import logging
import math
import os
import platform
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from shapely.geometry import box

from .errors import UsageError
from .grid import BandId, CubeArray, GridSpec
from .parcels import Parcel, rasterize_parcels
from .periods import to_day
from .render import Palette, render_table
from .synthetic import SyntheticConfig, layout_parcels
from .zonal import StatRequest, max_abs_difference, zonal_stats_grouped, zonal_stats_serial

log = logging.getLogger(__name__)

GROUPED, SERIAL = "grouped", "serial"
OK, BUDGET_EXCEEDED = "ok", "budget-exceeded"
COLUMNS = ["n_parcels", "method", "wall_time_s", "status", "records", "max_abs_diff"]


@dataclass
class BenchRow:
    n_parcels: int
    method: str
    wall_time_s: Optional[float]
    status: str = OK
    records: int = 0
    max_abs_diff: Optional[float] = None


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)
    environment: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[getattr(r, c) for c in COLUMNS] for r in self.rows], columns=COLUMNS)

    def to_csv(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(p, index=False, float_format="%.6f", lineterminator="\n")
        return p

    def time_of(self, n_parcels: int, method: str) -> Optional[float]:
        for r in self.rows:
            if r.n_parcels == n_parcels and r.method == method and r.status == OK:
                return r.wall_time_s
        return None

    def sizes(self) -> List[int]:
        return sorted({r.n_parcels for r in self.rows})

    def growth(self, method: str, small: int, large: int) -> Optional[float]:
        a, b = self.time_of(small, method), self.time_of(large, method)
        if a is None or b is None or a <= 0:
            return None
        return b / a

    def speedup(self, n_parcels: int) -> Optional[float]:
        g, s = self.time_of(n_parcels, GROUPED), self.time_of(n_parcels, SERIAL)
        if g is None or s is None or g <= 0:
            return None
        return s / g

    def render(self, pal: Optional[Palette] = None) -> str:
        pal = pal or Palette(False)
        rows = []
        for n in self.sizes():
            g, s = self.time_of(n, GROUPED), self.time_of(n, SERIAL)
            serial_row = next((r for r in self.rows if r.n_parcels == n and r.method == SERIAL), None)
            if s is not None:
                s_text = f"{s:.3f}"
            elif serial_row is not None:
                s_text = serial_row.status
            else:
                s_text = "-"
            ratio = self.speedup(n)
            rows.append([f"{n}", "-" if g is None else f"{g:.3f}", s_text, "-" if ratio is None else f"x{ratio:.1f}"])

        def color(_i: int, j: int, text: str) -> Optional[str]:
            if text == BUDGET_EXCEEDED:
                return "YELLOW"
            if j == 3 and text.startswith("x"):
                return "GREEN" if float(text[1:]) >= 10 else "RED"
            return None

        env = self.environment
        lines = [pal.c("BOLD", pal.c("CYAN", "ZONAL STATISTICS BENCHMARK")),
                 f"grid {env.get('grid', '?')}  months {env.get('months', '?')}  bands {env.get('bands', '?')}  "
                 f"threads {env.get('threads', '?')}"]
        lines += render_table(["parcels", "grouped_s", "serial_s", "serial/grouped"], rows, pal, color)
        sizes = self.sizes()
        if len(sizes) >= 2:
            for method in (GROUPED, SERIAL):
                times = [(n, self.time_of(n, method)) for n in sizes if self.time_of(n, method) is not None]
                if len(times) >= 2:
                    (a, ta), (b, tb) = times[0], times[-1]
                    lines.append(f"{method} growth {a} -> {b} parcels: x{tb / ta:.2f}" if ta > 0 else
                                 f"{method} growth {a} -> {b} parcels: n/a")
        lines.append(f"environment: {env.get('python', '?')} numpy {env.get('numpy', '?')} on {env.get('platform', '?')}")
        return "\n".join(lines)


def _environment(grid: GridSpec, months: int, bands: int, threads: int, seed: int) -> Dict[str, Any]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(terse=True),
        "cpu_count": os.cpu_count(),
        "threads": threads,
        "grid": f"{grid.width}x{grid.height}",
        "months": months,
        "bands": bands,
        "seed": seed,
    }


def benchmark_inputs(n_parcels: int, grid: GridSpec, months: int = 12, bands: int = 1, seed: int = 0,
                     threads: int = 1):
    """Random monthly cube and lattice parcels; identical for both engines."""
    if bands < 1:
        raise UsageError("bands must be >= 1")
    rng = np.random.default_rng([seed, n_parcels])
    cfg = SyntheticConfig(grid=grid, n_parcels=n_parcels, seed=seed)
    rects = layout_parcels(cfg, rng)
    parcels = [Parcel(id=i, geometry=box(*r), crop_declared="maize") for i, r in enumerate(rects, 1)]
    times = np.array([to_day(f"2020-{m:02d}-01") for m in range(1, months + 1)], dtype=np.int64) if months <= 12 \
        else to_day("2020-01-01") + 30 * np.arange(months, dtype=np.int64)
    band_ids = [b for b in BandId if not b.categorical and b.sensor == "S2" and b is not BandId.NDVI][:bands]
    if len(band_ids) < bands:
        raise UsageError(f"at most {len(band_ids)} benchmark bands are available")
    values = rng.uniform(0.0, 0.6, size=(times.size, bands) + grid.shape).astype(np.float32)
    cube = CubeArray(grid, times, tuple(band_ids), values, np.ones(values.shape, dtype=bool))
    labels = rasterize_parcels(parcels, grid, threads=threads)
    req = StatRequest(statistics=("mean",), period="month", bands=tuple(band_ids), buffer_inward_m=0.0,
                      cloud_buffer_m=0.0, cloud_mask=False)
    return cube, parcels, labels, req


def run_benchmark(n_parcels_list: Sequence[int], grid: GridSpec, months: int = 12, bands: int = 1, *,
                  seed: int = 0, threads: int = 1, serial_budget_s: Optional[float] = 600.0,
                  serial_max_parcels: Optional[int] = 10_000, verify: bool = True) -> BenchReport:
    """Time both engines per size on identical inputs.

    ``serial_budget_s`` caps the projected serial time (linear in parcel
    count from the last measured leg); ``serial_max_parcels`` skips larger
    serial legs outright. Either set to None disables that guard.
    """
    report = BenchReport(environment=_environment(grid, months, bands, threads, seed))
    per_parcel: Optional[float] = None
    for n in sorted(int(v) for v in n_parcels_list):
        cube, parcels, labels, req = benchmark_inputs(n, grid, months, bands, seed, threads)
        t0 = time.perf_counter()
        grouped = zonal_stats_grouped(cube, labels, req, threads=threads)
        tg = time.perf_counter() - t0
        report.rows.append(BenchRow(n, GROUPED, tg, OK, len(grouped)))
        log.info("bench %d parcels: grouped %.3fs (%d records)", n, tg, len(grouped))

        projected = None if per_parcel is None else per_parcel * n
        over_limit = serial_max_parcels is not None and n > serial_max_parcels
        over_budget = serial_budget_s is not None and projected is not None and projected > serial_budget_s
        if over_limit or over_budget:
            report.rows.append(BenchRow(n, SERIAL, None, BUDGET_EXCEEDED))
            log.warning("bench %d parcels: serial leg skipped (%s)", n,
                        f"projected {projected:.0f}s > budget {serial_budget_s:.0f}s" if over_budget
                        else f"above serial_max_parcels={serial_max_parcels}")
            continue
        t0 = time.perf_counter()
        serial = zonal_stats_serial(cube, parcels, req, grid)
        ts = time.perf_counter() - t0
        per_parcel = ts / max(1, n)
        diff = max_abs_difference(grouped, serial) if verify else None
        if diff is not None and not (diff <= 1e-9 or math.isnan(diff)):
            log.warning("bench %d parcels: engines disagree by %.3g", n, diff)
        report.rows.append(BenchRow(n, SERIAL, ts, OK, len(serial), diff))
        log.info("bench %d parcels: serial %.3fs (x%.1f)", n, ts, ts / tg if tg > 0 else float("inf"))
    return report


__all__ = [
    "BenchRow",
    "BenchReport",
    "GROUPED",
    "SERIAL",
    "BUDGET_EXCEEDED",
    "benchmark_inputs",
    "run_benchmark",
]
