import json
from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import MultiPolygon, Polygon, box

from agricube.errors import DuplicateError, FormatError, GeometryError
from agricube.grid import GridSpec
from agricube.parcels import (
    BACKGROUND,
    Parcel,
    geometry_distance,
    load_parcels,
    parcels_from_features,
    parcels_in_bbox,
    polygon_area,
    rasterize_parcels,
    save_parcels,
    validate_geometry,
)

GRID = GridSpec(0.0, 0.0, 10, 10, 10.0)


def feature(pid, coords, **props):
    return {
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": coords},
        "properties": {"id": pid, "crop_declared": "maize", **props},
    }


def square(x0, y0, x1, y1):
    return [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]


def test_area_and_holes():
    outer = [(0, 0), (100, 0), (100, 100), (0, 100), (0, 0)]
    hole = [(20, 20), (40, 20), (40, 40), (20, 40), (20, 20)]
    assert polygon_area(Polygon(outer)) == 10000.0
    assert polygon_area(Polygon(outer, [hole])) == 9600.0
    assert polygon_area(MultiPolygon([box(0, 0, 10, 10), box(20, 0, 30, 10)])) == 200.0


def test_distance():
    assert geometry_distance(box(0, 0, 10, 10), box(13, 14, 20, 20)) == pytest.approx(5.0)
    assert geometry_distance(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0


def test_invalid_geometries():
    bowtie = Polygon([(0, 0), (10, 10), (10, 0), (0, 10), (0, 0)])
    with pytest.raises(GeometryError, match="self-intersects"):
        validate_geometry(bowtie)
    with pytest.raises(GeometryError):
        Parcel(0, box(0, 0, 1, 1), "maize")
    doc = {"type": "FeatureCollection", "features": [feature(1, [[[0, 0], [1, 0], [0, 0]]])]}
    with pytest.raises(GeometryError, match="at least 4 points"):
        parcels_from_features(doc)
    doc = {"type": "FeatureCollection", "features": [feature(1, [[[0, 0], [1, 0], [1, 1], [0, 1]]])]}
    with pytest.raises(GeometryError, match="not closed"):
        parcels_from_features(doc)


def test_feature_collection_roundtrip(tmp_path: Path):
    doc = {
        "type": "FeatureCollection",
        "features": [
            feature(2, square(0, 0, 30, 30), crop_predicted="grassland", farm="A"),
            feature(1, square(50, 50, 80, 80)),
        ],
    }
    parcels = parcels_from_features(doc)
    assert parcels[0].crop_predicted == "grassland"
    assert parcels[0].attributes == {"farm": "A"}
    p = save_parcels(parcels, tmp_path / "p.geojson")
    back = load_parcels(p)
    assert [x.id for x in back] == [1, 2]
    assert back[1].geometry.equals(parcels[0].geometry)


def test_duplicate_ids_and_bad_files(tmp_path: Path):
    doc = {"type": "FeatureCollection", "features": [feature(1, square(0, 0, 1, 1)), feature(1, square(2, 2, 3, 3))]}
    with pytest.raises(DuplicateError):
        parcels_from_features(doc)
    with pytest.raises(FormatError):
        parcels_from_features({"type": "Feature"})
    bad = tmp_path / "bad.geojson"
    bad.write_text("{")
    with pytest.raises(FormatError):
        load_parcels(bad)
    with pytest.raises(FormatError):
        load_parcels(tmp_path / "missing.geojson")


@pytest.mark.parametrize("bad", [None, 7, "feature", [1, 2], {"type": "Feature", "properties": ["id", 1]}])
def test_malformed_features_are_format_errors(bad):
    doc = {"type": "FeatureCollection", "features": [feature(1, square(0, 0, 1, 1)), bad]}
    with pytest.raises(FormatError, match="feature 1"):
        parcels_from_features(doc)
    with pytest.raises(FormatError):
        parcels_from_features({"type": "FeatureCollection", "features": {"0": feature(1, square(0, 0, 1, 1))}})


def test_rasterize_centres_and_overlap():
    parcels = [Parcel(2, box(40, 40, 100, 100), "maize"), Parcel(1, box(0, 0, 50, 50), "maize")]
    lr = rasterize_parcels(parcels, GRID)
    counts = lr.pixel_counts()
    assert counts[1] == 25
    assert counts[2] == 36 - 1
    assert lr.overlaps == 1
    assert lr.labels[4, 4] == 1
    assert lr.labels[9, 0] == BACKGROUND
    assert sorted(lr.ids().tolist()) == [1, 2]


def test_overlap_warning_can_be_silenced(caplog):
    parcels = [Parcel(1, box(0, 0, 50, 50), "maize"), Parcel(2, box(40, 40, 100, 100), "maize")]
    with caplog.at_level("WARNING", logger="agricube.parcels"):
        quiet = rasterize_parcels(parcels, GRID, warn_overlaps=False)
    assert quiet.overlaps == 1 and not caplog.records
    with caplog.at_level("WARNING", logger="agricube.parcels"):
        rasterize_parcels(parcels, GRID)
    assert "more than one parcel" in caplog.text


def test_rasterize_hole_excluded():
    outer = [(0, 0), (100, 0), (100, 100), (0, 100), (0, 0)]
    hole = [(30, 30), (70, 30), (70, 70), (30, 70), (30, 30)]
    lr = rasterize_parcels([Parcel(7, Polygon(outer, [hole]), "maize")], GRID)
    assert lr.labels[5, 5] == BACKGROUND
    assert lr.labels[0, 0] == 7


def test_rasterize_independent_of_partitioning():
    rng = np.random.default_rng(3)
    parcels = []
    for i in range(1, 30):
        x, y = rng.uniform(0, 80, size=2)
        w, h = rng.uniform(5, 40, size=2)
        parcels.append(Parcel(i, box(x, y, x + w, y + h), "maize"))
    a = rasterize_parcels(parcels, GRID)
    b = rasterize_parcels(parcels, GRID, threads=4, block_rows=3)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.overlaps == b.overlaps


def test_rasterize_duplicate_ids():
    with pytest.raises(DuplicateError):
        rasterize_parcels([Parcel(1, box(0, 0, 10, 10), "a"), Parcel(1, box(20, 20, 30, 30), "b")], GRID)


def test_parcels_in_bbox():
    parcels = [Parcel(1, box(0, 0, 10, 10), "a"), Parcel(2, box(50, 50, 60, 60), "b")]
    assert [p.id for p in parcels_in_bbox(parcels, (0, 0, 20, 20))] == [1]
