import json
from pathlib import Path

import pandas as pd
import pytest

from agricube.cli import build_parser, main
from agricube.manifest import read_manifest

SMALL = {
    "synthetic": {
        "grid": {"origin_x": 500000.0, "origin_y": 4000000.0, "width": 32, "height": 32, "pixel_size": 10.0},
        "n_parcels": 12,
        "start": "2019-01-01",
        "end": "2021-01-01",
        "cloud_probability": 0.15,
        "mismatches": [{"declared": "maize", "actual": "spring_cereal"},
                       {"declared": "maize", "actual": "winter_cereal"}],
        "seed": 11,
    },
    "max_cloud_cover_fraction": 0.8,
}


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("ADC_WORKSPACE", "ADC_THREADS", "ADC_LOG_LEVEL", "ADC_DEBUG", "ADC_TILE_SIZE", "NO_COLOR"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture(scope="module")
def cli_ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    ws = root / "ws"
    with pytest.MonkeyPatch.context() as mp:
        mp.delenv("ADC_WORKSPACE", raising=False)
        assert main(["--workspace", str(ws), "--threads", "1", "synth", "--config", str(cfg)]) == 0
    return ws, cfg


def adc(ws: Path, *args: str) -> int:
    return main(["--workspace", str(ws), "--threads", "1", "--plain", *args])


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage: adc" in capsys.readouterr().err


def test_unknown_command_and_bad_option(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["bench", "--sizes", "a,b", "--out", "x.csv"]) == 1
    assert "error:" in capsys.readouterr().err


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "adc 0.1.0" in capsys.readouterr().out


def test_parser_knows_every_command():
    ap = build_parser()
    for cmd in ("ingest", "synth", "rasterize", "stats", "bench", "sits", "features", "query", "scenario",
                "animate", "pipeline", "catalog"):
        assert ap.parse_args([cmd] + {"ingest": ["--config", "x"], "stats": ["--out", "x"], "bench": ["--out", "x"],
                                       "sits": ["--parcel", "1", "--out", "x"],
                                       "features": ["--spec", "x", "--out", "x"], "query": ["--out", "x"],
                                       "scenario": ["query1"],
                                       "animate": ["--from", "2020-01-01", "--to", "2020-02-01", "--out-dir", "x"],
                                       }.get(cmd, [])).cmd == cmd


def test_masking_flags_default_to_the_standard_buffers():
    ap = build_parser()
    stats = ap.parse_args(["stats", "--out", "x"])
    assert (stats.inward_buffer, stats.cloud_buffer) == (5.0, 50.0)
    sits = ap.parse_args(["sits", "--parcel", "1", "--out", "x"])
    assert sits.cloud_buffer == 50.0 and not hasattr(sits, "inward_buffer")
    off = ap.parse_args(["stats", "--out", "x", "--inward-buffer", "0", "--cloud-buffer", "0"])
    assert (off.inward_buffer, off.cloud_buffer) == (0.0, 0.0)


def test_missing_workspace_exits_3_with_manifest(tmp_path: Path, capsys):
    out = tmp_path / "stats.csv"
    assert adc(tmp_path / "nowhere", "stats", "--out", str(out)) == 3
    assert "no workspace" in capsys.readouterr().err
    manifest = read_manifest(tmp_path / "stats.manifest.json")
    assert manifest["exit_code"] == 3 and manifest["outputs"] == {}


def test_bad_config_exits_1(tmp_path: Path):
    assert adc(tmp_path / "ws", "ingest", "--config", str(tmp_path / "absent.json")) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert adc(tmp_path / "ws", "ingest", "--config", str(bad)) == 1


def test_synth_writes_workspace_and_manifest(cli_ws):
    ws, cfg = cli_ws
    assert (ws / "workspace.json").exists() and (ws / "truth.json").exists()
    manifest = read_manifest(ws / "runs" / "synth.manifest.json")
    assert manifest["seed"] == 11 and manifest["exit_code"] == 0
    assert "workspace.json" in manifest["outputs"]
    assert "catalog.jsonl" not in manifest["outputs"]


TINY = {"synthetic": {"grid": {"origin_x": 0.0, "origin_y": 0.0, "width": 8, "height": 8}, "n_parcels": 2,
                      "start": "2020-05-01", "end": "2020-06-01", "seed": 1}}


def test_synth_refuses_to_overwrite(tmp_path: Path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    ws = tmp_path / "ws"
    assert adc(ws, "synth", "--config", str(cfg)) == 0
    assert adc(ws, "synth", "--config", str(cfg), "--seed", "2") == 1
    assert "--force" in capsys.readouterr().err
    assert read_manifest(ws / "runs" / "synth.manifest.json")["exit_code"] == 1
    assert adc(ws, "synth", "--config", str(cfg), "--seed", "2", "--force") == 0
    assert json.loads((ws / "workspace.json").read_text())["synthetic"]["seed"] == 2


def test_synth_is_deterministic(cli_ws, tmp_path: Path):
    ws, cfg = cli_ws
    other = tmp_path / "ws"
    assert adc(other, "synth", "--config", str(cfg)) == 0
    a = read_manifest(ws / "runs" / "synth.manifest.json")
    b = read_manifest(other / "runs" / "synth.manifest.json")
    assert a["outputs_digest"] == b["outputs_digest"]


def test_stats(cli_ws, tmp_path: Path, capsys):
    ws, _ = cli_ws
    out = tmp_path / "stats.csv"
    assert adc(ws, "stats", "--stat", "mean,count", "--period", "month", "--bands", "NDVI",
               "--from", "2020-01-01", "--to", "2020-12-31", "--out", str(out)) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["parcel_id", "period_start", "band", "statistic", "value", "n_valid_pixels"]
    assert set(frame["statistic"]) == {"mean", "count"}
    assert frame["period_start"].min() == "2020-01-01"
    assert "record(s)" in capsys.readouterr().out
    manifest = read_manifest(tmp_path / "stats.manifest.json")
    assert list(manifest["outputs"]) == [str(out.as_posix())]


def test_stats_engines_agree(cli_ws, tmp_path: Path):
    ws, _ = cli_ws
    common = ["stats", "--period", "season", "--bands", "B04", "--from", "2020-01-01", "--to", "2020-12-31"]
    assert adc(ws, *common, "--out", str(tmp_path / "g.csv")) == 0
    assert adc(ws, *common, "--engine", "serial", "--out", str(tmp_path / "s.csv")) == 0
    g = pd.read_csv(tmp_path / "g.csv").sort_values(["parcel_id", "period_start"]).reset_index(drop=True)
    s = pd.read_csv(tmp_path / "s.csv").sort_values(["parcel_id", "period_start"]).reset_index(drop=True)
    pd.testing.assert_frame_equal(g, s, atol=1e-9)


def test_query_where(cli_ws, tmp_path: Path, capsys):
    ws, _ = cli_ws
    out = tmp_path / "hits.csv"
    assert adc(ws, "query", "--where", "crop_declared = 'maize' AND crop_mismatch = true", "--out", str(out)) == 0
    truth = json.loads((ws / "truth.json").read_text())
    assert pd.read_csv(out)["parcel_id"].tolist() == sorted(truth["mismatches"])
    assert "2 parcel(s) matched" in capsys.readouterr().out


def test_query_errors(cli_ws, tmp_path: Path):
    ws, _ = cli_ws
    out = str(tmp_path / "hits.csv")
    assert adc(ws, "query", "--out", out) == 1
    assert adc(ws, "query", "--where", "soil = 'clay'", "--out", out) == 3
    assert adc(ws, "query", "--where", "a = 1 OR b = 2", "--out", out) == 1


def test_animate(cli_ws, tmp_path: Path, capsys):
    ws, _ = cli_ws
    out = tmp_path / "anim"
    assert adc(ws, "animate", "--parcel", "1", "--from", "2020-06-01", "--to", "2020-10-31", "--step-days", "10",
               "--out-dir", str(out)) == 0
    assert len(list(out.glob("frame_*.ppm"))) == 16
    assert (out / "manifest.json").exists()
    assert "16 frame(s)" in capsys.readouterr().out
    assert adc(ws, "animate", "--from", "2020-06-01", "--to", "2020-10-31", "--out-dir", str(out)) == 1


def test_sits(cli_ws, tmp_path: Path, capsys):
    ws, _ = cli_ws
    out = tmp_path / "series.csv"
    assert adc(ws, "sits", "--parcel", "2", "--phenology", "--out", str(out)) == 0
    text = capsys.readouterr().out
    assert "parcel 2 NDVI" in text
    assert out.read_text().splitlines()[0].startswith("date")


def test_features(cli_ws, tmp_path: Path):
    ws, _ = cli_ws
    spec = tmp_path / "features.json"
    spec.write_text(json.dumps({"bands": ["NDVI"], "unit": "season", "stats": ["mean"],
                                "time_range": ["2020-03-01", "2021-01-01"]}))
    out = tmp_path / "fs.csv"
    assert adc(ws, "features", "--spec", str(spec), "--out", str(out), "--patch-size", "8,8") == 0
    frame = pd.read_csv(out)
    assert len(frame) == 12 and frame.columns[0] == "parcel_id"
    assert (tmp_path / "fs_patches" / "patches.npy").exists()


def test_catalog_and_pipeline(cli_ws, capsys):
    ws, _ = cli_ws
    assert adc(ws, "catalog", "--sensor", "S1", "--from", "2020-01-01", "--to", "2020-01-31") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["product", "sensor", "date", "cloud", "flags"]
    assert all(" S1 " in line for line in lines[2:]) and len(lines) > 2
    assert adc(ws, "catalog", "--pending", "cube") == 0
    assert capsys.readouterr().out == ""
    assert adc(ws, "pipeline") == 0
    assert capsys.readouterr().out.splitlines()[0].split() == ["step", "done", "failed", "waiting"]


def test_scenario_query2(cli_ws, tmp_path: Path, capsys):
    ws, cfg = cli_ws
    out = tmp_path / "q2"
    assert adc(ws, "scenario", "query2", "--config", str(cfg), "--out-dir", str(out)) == 0
    text = capsys.readouterr().out
    assert "matches_planted: True" in text
    manifest = read_manifest(out)
    assert manifest["seed"] == 11
    assert "summary.json" in manifest["outputs"] and "mismatches.csv" in manifest["outputs"]


def test_bench_small(tmp_path: Path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["--plain", "bench", "--sizes", "4,8", "--grid-size", "32", "--months", "2", "--out", str(out)]) == 0
    assert "ZONAL STATISTICS BENCHMARK" in capsys.readouterr().out
    assert len(pd.read_csv(out)) == 4
    assert read_manifest(tmp_path / "bench.manifest.json")["seed"] == 0
