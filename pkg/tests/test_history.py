import dataclasses

import pytest

from recomp.history import Cache, ConsistencyError, CostRecord, HistoryDB, HistoryRecord
from recomp.store import VersionTag
from recomp.svi import OMIM, CLINVAR, Variant, svi_inputs, svi_pipeline

PH = {"Alzheimer's"}
VARS = {Variant("227083249", "PSEN2")}


def setup(registry):
    om = registry.register_version(OMIM, "1995", {"Alzheimer's": frozenset({"PSEN2", "PLAU"})})
    cv = registry.register_version(CLINVAR, "2014", {})
    return {OMIM: om, CLINVAR: cv}


def test_run_appends_one_consistent_record(mem):
    registry, history, ex = mem
    _, record = ex.run(svi_pipeline(), svi_inputs(PH, VARS), setup(registry))
    assert len(history) == 1
    assert history.get(record.record_id) == record
    assert record.execution_version == 1
    assert history.dangling_refs() == []
    history.check_consistency(record)


def test_execution_versions_increase(mem):
    registry, history, ex = mem
    deps = setup(registry)
    records = [ex.run(svi_pipeline(), svi_inputs(PH, VARS), deps)[1] for _ in range(3)]
    assert [r.execution_version for r in records] == [1, 2, 3]
    assert len({r.record_id for r in records}) == 3


def test_append_rejects_tag_mismatch(mem):
    registry, history, ex = mem
    _, record = ex.run(svi_pipeline(), svi_inputs(PH, VARS), setup(registry))
    bogus = dataclasses.replace(
        record, record_id=None, execution_version=None,
        dependency_tags=(VersionTag(OMIM, 9, "x"), record.tag_for(CLINVAR)),
    )
    with pytest.raises(ConsistencyError):
        history.append_record(bogus)
    assert len(history) == 1


def test_append_rejects_duplicates_and_old_versions(mem):
    registry, history, ex = mem
    _, record = ex.run(svi_pipeline(), svi_inputs(PH, VARS), setup(registry))
    with pytest.raises(ConsistencyError):
        history.append_record(record)
    with pytest.raises(ConsistencyError):
        history.append_record(dataclasses.replace(record, record_id="other"))


def test_records_using(mem):
    registry, history, ex = mem
    deps = setup(registry)
    cv2 = registry.register_version(CLINVAR, "2015", {})
    ex.run(svi_pipeline(), svi_inputs(PH, VARS), deps)
    ex.run(svi_pipeline(), svi_inputs(PH, VARS), {**deps, CLINVAR: cv2})
    assert len(history.records_using(CLINVAR)) == 2
    assert len(history.records_using(CLINVAR, cv2)) == 1
    assert history.records_using("nothing") == []


def test_persistent_history_reloads(tmp_path):
    from recomp.pipeline import Executor
    from recomp.store import Registry

    registry = Registry()
    history = HistoryDB(tmp_path)
    _, record = Executor(history, registry).run(svi_pipeline(), svi_inputs(PH, VARS), setup(registry))
    again = HistoryDB(tmp_path)
    assert list(again) == [record]
    assert again.load_prov(record) == history.load_prov(record)
    assert again.output(record) == history.output(record)
    assert again.allocate()[1] == 2


def test_record_json_round_trip():
    r = HistoryRecord("h1", 1, "SVI", "1", {"ph": "ab"}, (VersionTag("omim", 1, "1995"),),
                      "prov/h1.prov.json", "cd", CostRecord(0.5, 2, 2.0), subject="p", derived_from=None)
    assert HistoryRecord.from_json(r.to_json()) == r


def test_cost_must_be_non_negative():
    with pytest.raises(ValueError):
        CostRecord(steps_executed=-1)


@pytest.mark.parametrize("persistent", [False, True])
def test_cache_dedups_identical_values(tmp_path, persistent):
    cache = Cache(tmp_path if persistent else None)
    h1 = cache.put_value(frozenset({"a", "b"}), ("h1", 0))
    h2 = cache.put_value(frozenset({"b", "a"}), ("h2", 0))
    assert h1 == h2 and h1 in cache
    assert cache.entry(h1).producer == ("h1", 0)
    assert cache.load_value(h1) == {"a", "b"}
    assert cache.get("0" * 64) is None
    if persistent:
        assert len([p for p in tmp_path.rglob("*") if p.is_file() and p.suffix == ""]) == 1


def test_load_prov_missing(mem):
    _, history, _ = mem
    with pytest.raises(Exception):
        history.load_prov("prov/none.prov.json")
