from pathlib import Path

import numpy as np
import pytest

from agricube.errors import ConfigError, InsufficientDataError, UsageError
from agricube.grid import BandId, CubeArray, GridSpec
from agricube.parcels import LabelRaster
from agricube.sits import (
    PipelineConfig,
    TimeSeries,
    filter_outliers,
    interpolate,
    parcel_series,
    pixel_series,
    prepare,
    read_series_csv,
    resample_series,
    smooth,
    write_series_csv,
)

NAN = float("nan")


def ts(values, times=None, **kw):
    times = np.arange(len(values)) * 10 if times is None else times
    return TimeSeries(np.asarray(times), np.asarray(values, dtype=float), **kw)


def test_series_validation():
    s = ts([0.1, NAN, 0.3])
    assert s.valid.tolist() == [True, False, True]
    with pytest.raises(UsageError):
        TimeSeries(np.array([0, 0]), np.array([1.0, 2.0]))
    with pytest.raises(UsageError):
        TimeSeries(np.array([0, 1]), np.array([1.0]))
    assert np.isnan(ts([0.1, 9.0], valid=[True, False]).canonical().values[1])


def test_filter_range_and_spikes():
    cfg = PipelineConfig(spike_threshold=0.02)
    out = filter_outliers(ts([0.2, 0.2, 0.9, 0.2, 1.5]), cfg)
    assert out.valid.tolist() == [True, True, False, True, False]
    assert len(out) == 5
    out = filter_outliers(ts([0.2, 0.2, 0.9, 0.2]), PipelineConfig())
    assert out.valid.all()


def test_interpolate_linear_marks_filled():
    out = interpolate(ts([NAN, 0.0, NAN, 1.0, NAN]))
    assert out.values[2] == pytest.approx(0.5)
    assert out.valid.tolist() == [False, True, True, True, False]
    assert out.filled.tolist() == [False, False, True, False, False]


def test_interpolate_cubic_and_minimums():
    out = interpolate(ts([0.0, 1.0, NAN, 9.0, 16.0]), "cubic")
    assert out.valid.all() and out.filled[2]
    with pytest.raises(InsufficientDataError):
        interpolate(ts([0.1, NAN, NAN]))
    with pytest.raises(InsufficientDataError):
        interpolate(ts([0.1, 0.2, NAN, 0.3]), "cubic")
    with pytest.raises(UsageError):
        interpolate(ts([0.1, 0.2]), "quadratic")


def test_resample_windows():
    s = ts([1.0, 2.0, 3.0, 4.0, 5.0], times=[0, 3, 7, 12, 25])
    out = resample_series(s, 10)
    assert out.times.tolist() == [0, 10, 20]
    assert out.values.tolist() == [2.0, 4.0, 5.0]
    assert not out.filled.any()
    assert resample_series(s, 10, "max").values.tolist() == [3.0, 4.0, 5.0]


def test_resample_empty_window_interpolates():
    s = ts([0.0, 1.0], times=[0, 25])
    out = resample_series(s, 10)
    assert out.values[1] == pytest.approx(0.4)
    assert out.filled.tolist() == [False, True, False]
    out = resample_series(s, 10, interpolate_empty=False)
    assert out.valid.tolist() == [True, False, True]
    with pytest.raises(InsufficientDataError):
        resample_series(ts([]), 10)


def test_smooth_rolling_median():
    out = smooth(ts([0.0, 0.0, 1.0, 0.0, 0.5]), 3)
    assert out.values.tolist() == [0.0, 0.0, 0.0, 0.5, 0.5]
    assert smooth(ts([0.0, 1.0]), 3).values.tolist() == [0.0, 1.0]
    with pytest.raises(UsageError):
        smooth(ts([0.0]), 2)


def test_prepare_keeps_timestamps():
    s = ts([0.2, NAN, 0.4, 5.0, 0.5, 0.6])
    out = prepare(s, PipelineConfig())
    assert out.times.tolist() == s.times.tolist()
    assert out.valid.all()
    assert out.filled[1] and out.filled[3]


def test_pipeline_config():
    assert PipelineConfig.from_dict({"window_points": 5}).window_points == 5
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        PipelineConfig(window_points=4)
    with pytest.raises(ConfigError):
        PipelineConfig(value_min=1.0, value_max=0.0)


def test_cube_extraction():
    g = GridSpec(0, 0, 2, 2)
    vals = np.array([[[[0.2, 0.4], [0.6, 0.0]]], [[[0.1, 0.3], [0.5, 0.0]]]], dtype=np.float32)
    valid = np.ones(vals.shape, dtype=bool)
    valid[1, 0, 0, 0] = False
    cube = CubeArray(g, np.array([0, 5]), (BandId.NDVI,), vals, valid)
    labels = LabelRaster(g, np.array([[1, 1], [1, -1]]))
    s = parcel_series(cube, labels, 1, "NDVI")
    assert s.values == pytest.approx([0.4, 0.4])
    p = pixel_series(cube, "NDVI", 0, 0)
    assert p.valid.tolist() == [True, False]
    with pytest.raises(InsufficientDataError):
        parcel_series(cube, labels, 9, "NDVI")


def test_csv_roundtrip(tmp_path: Path):
    s = interpolate(ts([0.1, NAN, 0.3, NAN], times=[18262, 18272, 18282, 18292]))
    path = write_series_csv(s, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == "date,value,valid,provenance"
    back = read_series_csv(path)
    assert back.valid.tolist() == s.valid.tolist()
    assert back.filled.tolist() == s.filled.tolist()
    np.testing.assert_allclose(back.values[back.valid], s.values[s.valid])


def test_rolling_median_removes_single_spike():
    assert smooth(ts([1.0, 9.0, 1.0, 1.0]), 3).values.tolist() == [1.0, 1.0, 1.0, 1.0]


def test_interpolation_keeps_observed_points():
    s = ts([0.2, NAN, NAN, 0.5, NAN, 0.3, 0.35])
    out = interpolate(s)
    ok = s.valid
    np.testing.assert_array_equal(out.values[ok], s.values[ok])
    assert not out.filled[ok].any()


def test_prepare_tracks_the_clean_curve():
    from agricube.synthetic import SyntheticConfig, generate_synthetic_dataset

    ds = generate_synthetic_dataset(SyntheticConfig(grid=GridSpec(0.0, 0.0, 32, 32, 10.0), n_parcels=6,
                                                    crop_mix={"maize": 0.5, "spring_cereal": 0.5}, seed=8))
    rng = np.random.default_rng(8)
    errors = []
    for pid in ds.parcel_ids:
        clean = ds.clean_series(int(pid), ds.s2_days)
        noisy = clean + rng.normal(0.0, 0.03, size=clean.size)
        gaps = rng.random(clean.size) < 0.3
        gaps[[0, -1]] = False
        noisy[gaps] = np.nan
        out = prepare(TimeSeries(ds.s2_days, noisy), PipelineConfig())
        errors.append(out.values - clean)
    rmse = float(np.sqrt(np.mean(np.concatenate(errors) ** 2)))
    assert rmse <= 0.05
