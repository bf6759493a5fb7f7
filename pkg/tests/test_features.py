import json
import math
from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import box

from agricube.errors import ConfigError, UnknownAttributeError, UsageError
from agricube.features import (
    MISSING_SUFFIX,
    FeatureSpec,
    build_feature_space,
    extract_patches,
    ndvi,
    ndvi_cube,
    ndvi_values,
    temporal_composite,
)
from agricube.grid import BandId, CubeArray, GridSpec
from agricube.parcels import Parcel, rasterize_parcels
from agricube.periods import to_day

GRID = GridSpec(0.0, 0.0, 4, 4, 10.0)
LABELS = rasterize_parcels([Parcel(1, box(0, 0, 20, 40), "maize"), Parcel(2, box(20, 0, 40, 40), "maize")], GRID)
TIMES = np.array([to_day("2020-01-05"), to_day("2020-01-20"), to_day("2020-02-03")])


def cube():
    vals = np.zeros((3, 1, 4, 4), dtype=np.float32)
    for ti, (a, b) in enumerate([(0.1, 0.2), (0.3, 0.4), (0.5, 0.6)]):
        vals[ti, 0, :, :2] = a
        vals[ti, 0, :, 2:] = b
    valid = np.ones(vals.shape, dtype=bool)
    valid[2, 0, :, 2:] = False
    return CubeArray(GRID, TIMES, (BandId.B04,), vals, valid)


SPEC = FeatureSpec(bands=("B04",), stats=("mean", "max"), time_range=("2020-01-01", "2020-03-01"),
                   buffer_inward_m=0.0, cloud_buffer_m=0.0)
COLUMNS = ["B04_2020-01_max", "B04_2020-01_mean", "B04_2020-02_max", "B04_2020-02_mean"]


def test_ndvi_scalar_and_arrays():
    assert ndvi(0.5, 0.1) == pytest.approx(2 / 3)
    assert ndvi(0.0, 0.0) is None
    assert ndvi(-0.1, 0.2) is None
    assert ndvi(None, 0.2) is None
    v, ok = ndvi_values(np.array([0.5, 0.0]), np.array([0.1, 0.0]))
    assert ok.tolist() == [True, False] and np.isnan(v[1])


def test_ndvi_cube_adds_band_once():
    vals = np.stack([np.full((1, 4, 4), 0.1), np.full((1, 4, 4), 0.3)], axis=1).astype(np.float32)
    c = CubeArray(GRID, TIMES[:1], (BandId.B04, BandId.B08), vals, np.ones(vals.shape, bool))
    out = ndvi_cube(c)
    assert out.bands[-1] is BandId.NDVI
    assert ndvi_cube(out) is out
    with pytest.raises(UnknownAttributeError):
        ndvi_cube(cube())


def test_temporal_composite():
    comp = temporal_composite(cube(), "month", "mean")
    assert comp.times.tolist() == [to_day("2020-01-01"), to_day("2020-02-01")]
    assert comp.values[0, 0, 0, 0] == pytest.approx(0.2)
    assert not comp.valid[1, 0, 0, 3]
    counts = temporal_composite(cube(), "month", "count")
    assert counts.values[0, 0, 0, 0] == 2 and counts.values[1, 0, 0, 0] == 1
    with pytest.raises(UsageError):
        temporal_composite(cube(), "month", "mode")


def test_column_order():
    spec = FeatureSpec(bands=("NDVI", "B04"), stats=("mean",), phenology=True,
                       phenology_metrics=("sos_day", "pos_day"))
    cols = spec.column_names((to_day("2020-01-01"), to_day("2020-03-01")))
    assert cols == ["B04_2020-01_mean", "B04_2020-02_mean", "NDVI_2020-01_mean", "NDVI_2020-02_mean",
                    "NDVI_2020_sos_day", "NDVI_2020_pos_day"]


def test_parcel_features_flag_missing():
    fs = build_feature_space("parcel", SPEC, cube(), LABELS)
    assert fs.columns == COLUMNS
    assert fs.keys.tolist() == [1, 2]
    np.testing.assert_allclose(fs.values[0], [0.3, 0.2, 0.5, 0.5], rtol=1e-6)
    assert fs.missing[1].tolist() == [False, False, True, True]
    frame = fs.to_frame()
    assert list(frame.columns) == ["parcel_id"] + COLUMNS + [c + MISSING_SUFFIX for c in COLUMNS]


def test_parcel_features_keep_requested_rows():
    fs = build_feature_space("parcel", SPEC, cube(), LABELS, keys=[2, 7])
    assert fs.keys.tolist() == [2, 7]
    assert fs.missing[1].all()


def test_pixel_features_match_parcel_layout():
    fs = build_feature_space("pixel", SPEC, cube(), keys=[0, 3])
    assert fs.columns == COLUMNS
    np.testing.assert_allclose(fs.values[0], [0.3, 0.2, 0.5, 0.5], rtol=1e-6)
    assert math.isnan(fs.values[1, 2])
    assert "pixel_id" in fs.to_frame().columns
    with pytest.raises(UsageError):
        build_feature_space("pixel", SPEC, cube(), keys=[99])
    with pytest.raises(UsageError):
        build_feature_space("parcel", SPEC, cube())
    with pytest.raises(UsageError):
        build_feature_space("region", SPEC, cube())


def test_csv(tmp_path: Path):
    p = build_feature_space("parcel", SPEC, cube(), LABELS).to_csv(tmp_path / "f.csv")
    header = p.read_text().splitlines()[0].split(",")
    assert header[0] == "parcel_id" and len(header) == 1 + 2 * len(COLUMNS)


def test_spec_from_dict():
    spec = FeatureSpec.from_dict({"bands": ["NDVI"], "stats": ["mean", "std"], "phenology": True,
                                  "pipeline": {"window_points": 5}, "time_range": ["2020-01-01", "2021-01-01"]})
    assert spec.pipeline.window_points == 5
    assert (spec.buffer_inward_m, spec.cloud_buffer_m) == (5.0, 50.0)
    assert spec.time_range == (to_day("2020-01-01"), to_day("2021-01-01"))
    with pytest.raises(ConfigError):
        FeatureSpec.from_dict({"bands": ["NDVI"], "colour": 1})
    with pytest.raises(ConfigError):
        FeatureSpec(stats=("mode",))
    with pytest.raises(ConfigError):
        FeatureSpec(phenology_metrics=("harvest_day",))


def test_patches(tmp_path: Path):
    ps = extract_patches(cube(), 2, 2, 2)
    assert len(ps) == 4
    assert ps.patches.shape == (4, 3, 1, 2, 2)
    m = ps.manifest()
    assert m["patches"][1]["anchor"] == [0, 2]
    assert m["patches"][1]["bbox"] == [20.0, 0.0, 40.0, 20.0]
    assert not ps.valid[1, 2].any()
    path = ps.save(tmp_path / "patches")
    assert json.loads(path.read_text())["patch"] == {"h": 2, "w": 2, "stride": 2}
    assert (tmp_path / "patches" / "patches.npy").exists()
    assert len(extract_patches(cube(), 3, 3, 1)) == 4
    with pytest.raises(UsageError):
        extract_patches(cube(), 5, 5, 1)


def test_phenology_features_on_workspace(demo_workspace):
    ws = demo_workspace
    window = ("2020-01-01", "2021-01-01")
    spec = FeatureSpec(bands=("NDVI",), unit="season", phenology=True, time_range=window,
                       cloud_buffer_m=20, max_cloud_cover_fraction=0.8)
    data = ws.load_cube(window, ["NDVI", "SCL"])
    fs = build_feature_space("parcel", spec, data, ws.labels)
    assert fs.shape[0] == len(ws.parcels)
    j = fs.columns.index("NDVI_2020_pos_day")
    assert np.isfinite(fs.values[:, j]).mean() >= 0.8
    assert np.nanmax(fs.values[:, j]) < 366
