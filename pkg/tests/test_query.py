from pathlib import Path

import math

import pytest

from agricube.errors import ConfigError, PreconditionError, UnknownAttributeError, UsageError
from agricube.knowledge import KnowledgeBase
from agricube.query import (
    MOWING_RATE,
    Predicate,
    QuerySpec,
    Region,
    brute_force,
    cube_bands,
    parse_where,
    producible,
    run_query,
    stored_attribute_name,
)
from agricube.grid import BandId


@pytest.fixture
def kb(tmp_path: Path) -> KnowledgeBase:
    k = KnowledgeBase(tmp_path / "kb.jsonl")
    k.upsert({
        1: {"crop_declared": "maize", "crop_predicted": "maize", "area_ha": 1.5},
        2: {"crop_declared": "maize", "crop_predicted": "spring_cereal", "area_ha": 0.4},
        3: {"crop_declared": "grassland", "crop_predicted": "grassland", "area_ha": 2.0},
        4: {"crop_declared": "maize", "area_ha": 3.0},
    }, "lpis")
    return k


@pytest.mark.parametrize("text,field,op,value", [
    ("crop_declared = 'maize'", "crop_declared", "=", "maize"),
    ("area_ha >= 1.5", "area_ha", ">=", 1.5),
    ("area_ha ≤ 2", "area_ha", "<=", 2),
    ("crop_mismatch == true", "crop_mismatch", "=", True),
    ("x <> null", "x", "!=", None),
    ("mowing_event_count:2020 > 1", "mowing_event_count:2020", ">", 1),
])
def test_parse_predicate(text, field, op, value):
    p = Predicate.parse(text)
    assert (p.field, p.op, p.value, p.other_field) == (field, op, value, None)


def test_parse_field_reference():
    p = Predicate.parse("crop_declared != $crop_predicted")
    assert p.other_field == "crop_predicted" and p.fields() == ["crop_declared", "crop_predicted"]
    assert p.evaluate({"crop_declared": "maize", "crop_predicted": "rye"})
    assert not p.evaluate({"crop_declared": "maize", "crop_predicted": "maize"})


def test_parse_errors():
    with pytest.raises(UsageError):
        Predicate.parse("no operator here")
    with pytest.raises(UsageError):
        Predicate("a", "~", 1)
    with pytest.raises(UsageError):
        parse_where("a = 1 OR b = 2")


def test_parse_where_conjunction():
    preds = parse_where("crop_declared = 'maize' and area_ha > 1")
    assert [str(p) for p in preds] == ["crop_declared = 'maize'", "area_ha > 1"]


def test_missing_values_never_match():
    p = Predicate("a", ">", 0)
    assert not p.evaluate({})
    assert not p.evaluate({"a": None})
    assert not p.evaluate({"a": math.nan})
    assert not Predicate("a", "!=", 1).evaluate({"a": None})


def test_ordering_needs_numbers():
    with pytest.raises(UsageError):
        Predicate("a", "<", 1).evaluate({"a": "maize"})
    with pytest.raises(UsageError):
        Predicate("a", ">", 0).evaluate({"a": True})


def test_region():
    assert Region.from_obj("all") == Region()
    assert Region.from_obj({"parcel_ids": [3, 1, 3]}).parcel_ids == (1, 3)
    assert Region.from_obj({"bbox": [0, 0, 10, 10]}).bbox == (0.0, 0.0, 10.0, 10.0)
    with pytest.raises(UsageError):
        Region(bbox=(0, 0, 1, 1), parcel_ids=(1,))
    with pytest.raises(ConfigError):
        Region.from_obj({"polygon": []})


def test_query_spec_from_dict():
    spec = QuerySpec.from_dict({
        "where": "crop_declared = 'maize' AND max_cloud_cover <= 0.3",
        "predicates": ["area_ha > 1"],
        "time_range": ["2020-01-01", "2021-01-01"],
        "outputs": ["parcels", "stats"],
    })
    assert [p.field for p in spec.predicates] == ["crop_declared", "area_ha"]
    assert spec.max_cloud_cover_fraction == 0.3
    assert spec.time_range == (18262, 18628)
    assert spec.window_label() == "2020-01-01/2021-01-01"
    assert QuerySpec().window_label() == "all"
    assert (QuerySpec().buffer_inward_m, QuerySpec().cloud_buffer_m) == (5.0, 50.0)
    with pytest.raises(UsageError):
        QuerySpec(outputs=("maps",))
    with pytest.raises(UsageError):
        QuerySpec(predicates=("max_cloud_cover > 0.2",))
    with pytest.raises(ConfigError):
        QuerySpec.from_dict({"wher": "a = 1"})


def test_producible_names():
    assert producible("mean_NDVI") and producible("std_COHERENCE_VV")
    assert producible("mowing_event_count:2020") and producible(MOWING_RATE)
    assert not producible("mean_FOO") and not producible("crop_declared")
    spec = QuerySpec(time_range=("2020-01-01", "2021-01-01"))
    assert stored_attribute_name("mean_NDVI", spec) == "mean_NDVI@2020-01-01/2021-01-01"
    assert stored_attribute_name("crop_declared", spec) == "crop_declared"


def test_mowing_names_carry_detector_parameters():
    spec = QuerySpec(time_range=("2020-01-01", "2021-01-01"))
    name = stored_attribute_name("mowing_event_count:2020", spec)
    assert name.startswith("mowing_event_count:2020@") and name != "mowing_event_count:2020"
    assert stored_attribute_name("mowing_event_count:2020", QuerySpec(time_range=spec.time_range)) == name
    others = [
        QuerySpec(time_range=spec.time_range, mowing={"min_drop": 0.4}),
        QuerySpec(time_range=spec.time_range, mowing={"pipeline": {"window_points": 5}}),
        QuerySpec(time_range=spec.time_range, buffer_inward_m=0.0),
        QuerySpec(time_range=spec.time_range, cloud_buffer_m=0.0),
        QuerySpec(time_range=("2019-01-01", "2021-01-01")),
    ]
    for other in others:
        assert stored_attribute_name("mowing_event_count:2020", other) != name
    assert stored_attribute_name(MOWING_RATE, others[0]) != stored_attribute_name(MOWING_RATE, spec)


def test_cube_bands_adds_scene_classification():
    assert cube_bands([BandId.NDVI]) == [BandId.NDVI, BandId.SCL]
    assert cube_bands([BandId.COHERENCE_VV]) == [BandId.COHERENCE_VV]


def test_run_query_on_stored_attributes(kb):
    spec = QuerySpec(predicates=parse_where("crop_declared = 'maize' AND area_ha >= 1"))
    res = run_query(spec, kb)
    assert res.parcel_ids == [1, 4]
    assert list(res.rows.columns) == ["parcel_id", "crop_declared", "area_ha"]
    assert res.produced == []
    assert res.parcel_ids == brute_force(kb, spec.predicates)


def test_crop_mismatch_is_derived(kb):
    spec = QuerySpec(predicates=(Predicate("crop_mismatch", "=", True),))
    assert run_query(spec, kb).parcel_ids == [2]
    # no prediction: unknown, so neither true nor false
    assert run_query(QuerySpec(predicates=("crop_mismatch = false",)), kb).parcel_ids == [1, 3]


def test_region_restricts_universe(kb):
    spec = QuerySpec(predicates=("area_ha > 0",), region=Region(parcel_ids=(2, 3, 99)))
    assert run_query(spec, kb).parcel_ids == [2, 3]
    with pytest.raises(PreconditionError):
        run_query(QuerySpec(region=Region(parcel_ids=(99,))), kb)
    with pytest.raises(UsageError):
        run_query(QuerySpec(region=Region(bbox=(0, 0, 1, 1))), kb)


def test_unknown_and_unproducible_attributes(kb):
    with pytest.raises(UnknownAttributeError):
        run_query(QuerySpec(predicates=("soil_type = 'clay'",)), kb)
    with pytest.raises(PreconditionError):
        run_query(QuerySpec(predicates=("mean_NDVI > 0.3",)), kb)


def test_result_csv(kb, tmp_path: Path):
    res = run_query(QuerySpec(predicates=("area_ha > 1",)), kb)
    text = res.to_csv(tmp_path / "out" / "hits.csv").read_text()
    assert text.splitlines()[0] == "parcel_id,area_ha"
    assert len(res) == 3


# --- against a synthesized cube ------------------------------------------------------

@pytest.fixture
def fresh_kb(demo_workspace, tmp_path: Path) -> KnowledgeBase:
    k = KnowledgeBase(tmp_path / "kb.jsonl", known_ids=[p.id for p in demo_workspace.parcels])
    k.register_parcels(demo_workspace.parcels)
    return k


def test_mismatch_query_recovers_planted_parcels(demo_workspace, fresh_kb):
    spec = QuerySpec(predicates=("crop_declared = 'maize'", "crop_mismatch = true"))
    res = run_query(spec, fresh_kb, demo_workspace.query_context())
    assert res.parcel_ids == sorted(demo_workspace.truth()["mismatches"])


def test_on_demand_statistic_is_written_back(demo_workspace, fresh_kb):
    spec = QuerySpec(predicates=("mean_NDVI > -1",), time_range=("2020-01-01", "2021-01-01"))
    ctx = demo_workspace.query_context()
    res = run_query(spec, fresh_kb, ctx)
    assert res.produced == ["mean_NDVI"]
    assert res.parcel_ids == sorted(p.id for p in demo_workspace.parcels)
    stored = stored_attribute_name("mean_NDVI", spec)
    entry = fresh_kb.latest(res.parcel_ids[0], stored)
    assert entry is not None and entry.producer == "zonal_stats"
    assert -1.0 <= entry.value <= 1.0

    size = fresh_kb.path.stat().st_size
    tight = QuerySpec(predicates=("mean_NDVI > 0.3",), time_range=spec.time_range)
    again = run_query(tight, fresh_kb, ctx)
    assert fresh_kb.path.stat().st_size == size
    assert again.parcel_ids == brute_force(fresh_kb, tight.predicates, aliases={"mean_NDVI": stored})


def test_on_demand_mowing_counts(demo_workspace, fresh_kb):
    spec = QuerySpec(predicates=(f"{MOWING_RATE} >= 0", "crop_declared = 'grassland'"))
    res = run_query(spec, fresh_kb, demo_workspace.query_context())
    assert MOWING_RATE in res.produced
    for pid in res.parcel_ids:
        assert fresh_kb.get(pid, stored_attribute_name("mowing_event_count:2019", spec)) is not None
        assert fresh_kb.latest(pid, stored_attribute_name("mowing_event_count:2020", spec)).producer == "mowing_detector"
    assert set(res.parcel_ids) <= {p.id for p in demo_workspace.parcels if p.crop_declared == "grassland"}


def test_mowing_counts_recomputed_for_other_parameters(demo_workspace, fresh_kb):
    ctx = demo_workspace.query_context()
    grass = tuple(p.id for p in demo_workspace.parcels if p.crop_declared == "grassland")
    first = QuerySpec(predicates=("mowing_event_count:2020 >= 0",), region=Region(parcel_ids=grass))
    assert run_query(first, fresh_kb, ctx).produced == ["mowing_event_count:2020"]
    # a drop larger than the NDVI range can never be detected
    strict = QuerySpec(predicates=("mowing_event_count:2020 >= 0",), region=Region(parcel_ids=grass),
                       mowing={"min_drop": 2.5})
    res = run_query(strict, fresh_kb, ctx)
    assert res.produced == ["mowing_event_count:2020"]
    assert res.parcel_ids == sorted(grass)
    assert (res.rows["mowing_event_count:2020"] == 0).all()
    for pid in grass:
        assert fresh_kb.get(pid, stored_attribute_name("mowing_event_count:2020", strict)) == 0
        assert fresh_kb.get(pid, stored_attribute_name("mowing_event_count:2020", first)) is not None


def test_stats_output_limited_to_hits(demo_workspace, fresh_kb):
    spec = QuerySpec(predicates=("crop_mismatch = true",), outputs=("parcels", "stats"),
                     time_range=("2020-01-01", "2021-01-01"))
    res = run_query(spec, fresh_kb, demo_workspace.query_context())
    assert res.stats is not None
    assert set(res.stats.frame["parcel_id"]) == set(res.parcel_ids)
