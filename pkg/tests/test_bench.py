from pathlib import Path

import numpy as np
import pytest

from agricube.bench import (
    BUDGET_EXCEEDED,
    GROUPED,
    SERIAL,
    BenchReport,
    BenchRow,
    benchmark_inputs,
    run_benchmark,
)
from agricube.errors import UsageError
from agricube.grid import GridSpec
from agricube.render import Palette

GRID = GridSpec(0.0, 0.0, 32, 32, 10.0)


def test_inputs_are_deterministic():
    a_cube, a_parcels, a_labels, req = benchmark_inputs(8, GRID, months=3, seed=4)
    b_cube, b_parcels, b_labels, _ = benchmark_inputs(8, GRID, months=3, seed=4)
    assert np.array_equal(a_cube.values, b_cube.values)
    assert [p.geometry.bounds for p in a_parcels] == [p.geometry.bounds for p in b_parcels]
    assert np.array_equal(a_labels.labels, b_labels.labels)
    assert a_cube.times.size == 3 and req.period == "month"
    assert len(a_parcels) == 8


def test_inputs_validation():
    with pytest.raises(UsageError):
        benchmark_inputs(4, GRID, bands=0)
    with pytest.raises(UsageError):
        benchmark_inputs(4, GRID, bands=5)


def test_engines_agree():
    report = run_benchmark([4, 8], GRID, months=3, serial_budget_s=None)
    assert [(r.n_parcels, r.method) for r in report.rows] == [(4, GROUPED), (4, SERIAL), (8, GROUPED), (8, SERIAL)]
    for r in report.rows:
        assert r.status == "ok" and r.wall_time_s is not None and r.records > 0
    assert all(r.max_abs_diff <= 1e-9 for r in report.rows if r.method == SERIAL)
    assert report.environment["grid"] == "32x32"


def test_serial_guards():
    report = run_benchmark([4, 8], GRID, months=2, serial_max_parcels=4)
    assert report.rows[-1].method == SERIAL and report.rows[-1].status == BUDGET_EXCEEDED
    assert report.time_of(8, SERIAL) is None
    report = run_benchmark([4, 8], GRID, months=2, serial_budget_s=0.0)
    assert report.time_of(4, SERIAL) is not None
    assert report.rows[-1].status == BUDGET_EXCEEDED


def report() -> BenchReport:
    return BenchReport(rows=[
        BenchRow(1000, GROUPED, 1.0, records=12),
        BenchRow(1000, SERIAL, 12.0, records=12, max_abs_diff=0.0),
        BenchRow(10000, GROUPED, 2.0, records=120),
        BenchRow(10000, SERIAL, None, BUDGET_EXCEEDED),
    ], environment={"grid": "64x64", "months": 12, "bands": 1, "threads": 1})


def test_report_derived_numbers():
    r = report()
    assert r.sizes() == [1000, 10000]
    assert r.speedup(1000) == 12.0 and r.speedup(10000) is None
    assert r.growth(GROUPED, 1000, 10000) == 2.0
    assert r.growth(SERIAL, 1000, 10000) is None


def test_report_csv(tmp_path: Path):
    text = report().to_csv(tmp_path / "out" / "bench.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "n_parcels,method,wall_time_s,status,records,max_abs_diff"
    assert lines[1] == "1000,grouped,1.000000,ok,12,"
    assert lines[4].startswith("10000,serial,,budget-exceeded")


def test_report_render():
    text = report().render()
    assert text.splitlines()[0] == "ZONAL STATISTICS BENCHMARK"
    assert "x12.0" in text
    assert "budget-exceeded" in text
    assert "grouped growth 1000 -> 10000 parcels: x2.00" in text
    colored = report().render(Palette(True))
    assert "\x1b[32mx12.0" in colored.replace(" ", "")


@pytest.mark.slow
def test_engines_agree_at_scale():
    report = run_benchmark([1000], GridSpec(0.0, 0.0, 2048, 2048, 10.0), months=12, serial_budget_s=None)
    assert report.rows[1].max_abs_diff <= 1e-9


@pytest.mark.slow
def test_scaling_trend():
    grid = GridSpec(0.0, 0.0, 2048, 2048, 10.0)
    report = run_benchmark([1000, 10000, 100000], grid, months=12, serial_max_parcels=10000, verify=False)
    assert report.growth(GROUPED, 1000, 100000) <= 5.0
    assert report.growth(SERIAL, 1000, 10000) >= 5.0
    assert report.speedup(10000) >= 10.0
