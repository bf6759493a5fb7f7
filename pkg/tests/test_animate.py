from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import box

from agricube.animate import AnimationSpec, animate, colorize, export_frames, write_ppm
from agricube.errors import ConfigError, PreconditionError, UsageError
from agricube.grid import BandId, CubeArray, GridSpec
from agricube.parcels import Parcel, rasterize_parcels
from agricube.periods import to_day

GRID = GridSpec(0.0, 0.0, 4, 4, 10.0)
LABELS = rasterize_parcels([Parcel(1, box(0, 0, 20, 40), "maize"), Parcel(2, box(20, 0, 40, 40), "grassland")], GRID)
TIMES = np.array([to_day("2020-01-05"), to_day("2020-01-20"), to_day("2020-02-03")])


def cube() -> CubeArray:
    vals = np.zeros((3, 1, 4, 4), dtype=np.float32)
    for ti, (a, b) in enumerate([(0.1, 0.2), (0.3, 0.4), (0.5, 0.6)]):
        vals[ti, 0, :, :2] = a
        vals[ti, 0, :, 2:] = b
    return CubeArray(GRID, TIMES, (BandId.B04,), vals, np.ones(vals.shape, dtype=bool))


def spec(**kw) -> AnimationSpec:
    kw.setdefault("start", "2020-01-01")
    kw.setdefault("end", "2020-03-31")
    kw.setdefault("band", "B04")
    kw.setdefault("buffer_inward_m", 0.0)
    kw.setdefault("cloud_buffer_m", 0.0)
    if "bbox" not in kw:
        kw.setdefault("parcel_id", 1)
    return AnimationSpec(**kw)


def test_spec_validation():
    with pytest.raises(UsageError):
        AnimationSpec("2020-01-01", "2020-02-01")
    with pytest.raises(UsageError):
        AnimationSpec("2020-01-01", "2020-02-01", parcel_id=1, bbox=(0, 0, 1, 1))
    with pytest.raises(UsageError):
        spec(end="2019-12-31")
    with pytest.raises(UsageError):
        spec(step="whole")
    with pytest.raises(UsageError):
        spec(scale=0)
    with pytest.raises(UsageError):
        spec(value_range=(1.0, 0.0))
    with pytest.raises(ConfigError):
        AnimationSpec.from_dict({"start": "2020-01-01", "end": "2020-02-01", "parcel_id": 1, "fps": 4})


def test_spec_from_dict():
    s = AnimationSpec.from_dict({"start": "2020-06-01", "end": "2020-10-31", "step_days": 10,
                                 "bbox": [0, 0, 40, 40], "value_range": [0, 1]})
    assert s.step == "10d" and s.band is BandId.NDVI
    assert (s.buffer_inward_m, s.cloud_buffer_m) == (5.0, 50.0)
    assert s.request().buffer_inward_m == 5.0
    assert s.bbox == (0.0, 0.0, 40.0, 40.0) and s.value_range == (0.0, 1.0)
    # both ends inclusive: June 1st to October 31st is 153 days
    assert s.window == (to_day("2020-06-01"), to_day("2020-11-01"))
    assert len(s.periods()) == 16
    assert s.periods()[0] == to_day("2020-06-01")
    assert len(spec(step="month").periods()) == 3


def test_parcel_frames():
    fs = animate(cube(), spec(), LABELS)
    assert len(fs) == 3 and fs.reason is None
    jan, feb, mar = fs.frames
    assert [f.label for f in fs.frames] == ["2020-01", "2020-02", "2020-03"]
    assert jan.values.shape == (4, 2)
    np.testing.assert_allclose(jan.values, 0.2, rtol=1e-6)
    np.testing.assert_allclose(feb.values, 0.5, rtol=1e-6)
    assert jan.aggregate == pytest.approx(0.2) and feb.aggregate == pytest.approx(0.5)
    assert not mar.valid.any() and mar.aggregate is None
    agg = fs.aggregates()
    assert list(agg.columns) == ["period_start", "label", "value", "n_valid_pixels"]
    assert agg["period_start"].tolist() == ["2020-01-01", "2020-02-01", "2020-03-01"]
    assert np.isnan(agg["value"].iloc[2])


def test_bbox_frames_pool_observations():
    fs = animate(cube(), spec(bbox=(0, 0, 40, 40), end="2020-01-31"))
    (jan,) = fs.frames
    assert jan.values.shape == (4, 4)
    np.testing.assert_allclose(jan.values[:, :2], 0.2, rtol=1e-6)
    np.testing.assert_allclose(jan.values[:, 2:], 0.3, rtol=1e-6)
    assert jan.aggregate == pytest.approx(0.25)
    assert jan.n_valid_pixels == 32
    with pytest.raises(UsageError):
        animate(cube(), spec(bbox=(0, 0, 40, 40), statistic="valid_fraction"))


def test_empty_and_invalid_targets():
    fs = animate(cube(), spec(start="2021-01-01", end="2021-03-01"), LABELS)
    assert fs.empty and "no acquisitions" in fs.reason
    with pytest.raises(UsageError):
        animate(cube(), spec())
    with pytest.raises(PreconditionError):
        animate(cube(), spec(parcel_id=9), LABELS)


def test_colorize():
    values = np.array([[0.0, 0.5, 1.0, 0.7]])
    valid = np.array([[True, True, True, False]])
    rgb = colorize(values, valid, (0.0, 1.0))
    assert rgb.dtype == np.uint8
    assert rgb[0].tolist() == [[128, 64, 0], [255, 255, 128], [0, 128, 0], [0, 0, 0]]


def test_write_ppm(tmp_path: Path):
    rgb = np.zeros((2, 3, 3), dtype=np.uint8)
    rgb[1, 2] = (1, 2, 3)
    data = write_ppm(tmp_path / "x.ppm", rgb).read_bytes()
    assert data.startswith(b"P6\n3 2\n255\n")
    assert data[-3:] == b"\x01\x02\x03"


def test_export_frames(tmp_path: Path):
    fs = animate(cube(), spec(scale=2), LABELS)
    written = export_frames(fs, tmp_path / "anim")
    names = [p.name for p in written]
    assert names == ["frame_000_2020-01.ppm", "frame_001_2020-02.ppm", "frame_002_2020-03.ppm", "aggregate.csv"]
    assert written[0].read_bytes().startswith(b"P6\n4 8\n255\n")
    assert (tmp_path / "anim" / "aggregate.csv").read_text().startswith("period_start,label,value,n_valid_pixels\n")


def test_export_empty_writes_reason(tmp_path: Path):
    fs = animate(cube(), spec(start="2021-01-01", end="2021-03-01"), LABELS)
    written = export_frames(fs, tmp_path)
    assert [p.name for p in written] == ["aggregate.csv", "EMPTY"]
    assert "no acquisitions" in (tmp_path / "EMPTY").read_text()


def test_animation_on_synthesized_parcel(demo_workspace):
    parcel = demo_workspace.parcels[0]
    s = AnimationSpec(start="2020-06-01", end="2020-10-31", step=10, parcel_id=parcel.id)
    fs = animate(demo_workspace.cube(), s, demo_workspace.labels)
    assert len(fs) == 16
    inside = demo_workspace.labels.labels == parcel.id
    rows, cols = np.nonzero(inside)
    assert fs.frames[0].values.shape == (rows.max() - rows.min() + 1, cols.max() - cols.min() + 1)
    with_data = [f for f in fs.frames if f.aggregate is not None]
    assert with_data
    for f in with_data:
        assert -1.0 <= f.aggregate <= 1.0
        assert f.n_valid_pixels >= int(f.valid.sum())


def test_monthly_year_with_a_clouded_month(tmp_path: Path):
    from agricube.synthetic import SyntheticConfig
    from agricube.workspace import synthesize
    from agricube.zonal import StatRequest, zonal_stats_grouped

    cfg = SyntheticConfig(grid=GridSpec(0.0, 0.0, 16, 16, 10.0), n_parcels=4, s1_revisit_days=0,
                          crop_mix={"maize": 1.0}, cloud_probability=0.0,
                          forced_cloud_windows=(("2020-04-01", "2020-05-01"),), seed=4)
    ws = synthesize(tmp_path / "ws", cfg)
    pid = ws.parcels[0].id
    fs = animate(ws.cube(), AnimationSpec(start="2020-01-01", end="2020-12-31", parcel_id=pid), ws.labels)
    assert len(fs) == 12
    assert [f.label for f in fs.frames][:4] == ["2020-01", "2020-02", "2020-03", "2020-04"]

    april = fs.frames[3]
    assert not april.valid.any() and april.aggregate is None

    table = zonal_stats_grouped(ws.cube(), ws.labels, StatRequest(time_range=("2020-01-01", "2021-01-01")))
    for f in fs.frames:
        expected = table.value(pid, f.period_start, "NDVI", "mean")
        if f is april:
            assert expected is None
        else:
            assert f.aggregate == pytest.approx(expected, abs=1e-9)
