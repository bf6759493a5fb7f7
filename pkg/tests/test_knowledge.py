from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import box

from agricube.errors import FormatError, UsageError
from agricube.knowledge import KnowledgeBase, normalize_value, payload_run_id, update_knowledge_base
from agricube.parcels import Parcel


def kb(tmp_path: Path, **kw) -> KnowledgeBase:
    return KnowledgeBase(tmp_path / "kb.jsonl", clock=lambda: "2024-01-01T00:00:00Z", **kw)


def test_normalize():
    assert normalize_value(np.float32(0.5)) == 0.5
    assert normalize_value(float("nan")) is None
    assert normalize_value(np.int64(3)) == 3
    with pytest.raises(UsageError):
        normalize_value([1, 2])


def test_upsert_and_read_back(tmp_path: Path):
    k = kb(tmp_path)
    rep = update_knowledge_base(k, {1: {"mean_NDVI": 0.41, "crop": "maize"}, 2: {"mean_NDVI": 0.2}}, "stats")
    assert rep.applied == 3 and rep.unchanged == 0
    assert k.get(1, "mean_NDVI") == 0.41
    entry = k.latest(1, "crop")
    assert entry.producer == "stats" and entry.run_id == rep.run_id and entry.ts == "2024-01-01T00:00:00Z"
    again = kb(tmp_path)
    assert again.rows() == {1: {"crop": "maize", "mean_NDVI": 0.41}, 2: {"mean_NDVI": 0.2}}
    assert again.attributes() == ["crop", "mean_NDVI"]


def test_idempotent_upsert(tmp_path: Path):
    k = kb(tmp_path)
    payload = {1: {"a": 1.0}}
    k.upsert(payload, "p")
    size = k.path.stat().st_size
    rep = k.upsert(payload, "p")
    assert rep.applied == 0 and rep.unchanged == 1
    assert k.path.stat().st_size == size
    assert payload_run_id("p", payload) == rep.run_id


def test_history_keeps_superseded_values(tmp_path: Path):
    k = kb(tmp_path)
    k.upsert({1: {"a": 1.0}}, "p")
    k.upsert({1: {"a": 2.0}}, "p")
    k.upsert({1: {"a": 2.0}}, "q")
    assert [h.value for h in k.history(1, "a")] == [1.0, 2.0, 2.0]
    assert k.latest(1, "a").producer == "q"
    assert k.compact() == 2
    assert [h.value for h in kb(tmp_path).history(1, "a")] == [2.0]


def test_unknown_ids_are_skipped(tmp_path: Path):
    k = kb(tmp_path, known_ids=[1])
    rep = k.upsert({1: {"a": 1}, 5: {"a": 1}}, "p")
    assert rep.unknown_ids == [5] and rep.applied == 1
    assert k.parcel_ids() == [1]


def test_register_parcels(tmp_path: Path):
    k = kb(tmp_path, known_ids=[])
    k.register_parcels([Parcel(3, box(0, 0, 1, 1), "maize", "grassland")])
    assert k.row(3) == {"crop_declared": "maize", "crop_predicted": "grassland"}
    assert k.latest(3, "crop_declared").producer == "lpis"
    assert 3 in k.known_ids


def test_producer_required_and_bad_journal(tmp_path: Path):
    with pytest.raises(UsageError):
        kb(tmp_path).upsert({1: {"a": 1}}, "")
    (tmp_path / "kb.jsonl").write_text('{"parcel_id": 1}\n')
    with pytest.raises(FormatError):
        kb(tmp_path)
