import pytest

from oracles import earliest_matching_step, provenance_matches_dependency_diff, raw_prov
from recomp import canonical, engine
from recomp.engine import (
    PARTIAL,
    TOTAL,
    dependency_change,
    find_starting_component,
    input_change,
    plan,
    react,
    scope,
    scope_for_dependency_change,
    scope_for_input_change,
)
from recomp.history import HistoryDB
from recomp.pipeline import CACHE_OUTPUTS_ONLY, Executor
from recomp.snapshots import read_cohort, read_snapshot
from recomp.store import Registry, diff_input
from recomp.svi import CLINVAR, OMIM, Classification, Variant, by_id, svi_inputs, svi_pipeline

V1, V2 = "227083249", "161807855"


def build(data_dir, transparency="white", cache_mode="full"):
    registry, history = Registry(), HistoryDB()
    ex = Executor(history, registry, cache_mode)
    om = registry.register_version(OMIM, "1995", read_snapshot(OMIM, data_dir / "omim_1995.tsv"))
    cv14 = registry.register_version(CLINVAR, "2014", read_snapshot(CLINVAR, data_dir / "clinvar_2014.tsv"))
    cohort = read_cohort(data_dir / "cohort_two_patients.tsv")
    records = {}
    for p in cohort:
        _, r = ex.run(svi_pipeline(), svi_inputs(p.ph, p.varset), {OMIM: om, CLINVAR: cv14}, transparency, p.id)
        records[p.id] = r
    cv15 = registry.register_version(CLINVAR, "2015", read_snapshot(CLINVAR, data_dir / "clinvar_2015.tsv"))
    return registry, history, ex, records, cv15


def subjects(entries):
    return sorted(e.record.subject for e in entries)


def test_clinvar_change_scopes_patients_1_and_2(data_dir):
    registry, history, _, records, cv15 = build(data_dir)
    event = dependency_change(registry, cv15)
    entries = scope_for_dependency_change(history, event)
    assert subjects(entries) == ["patient1", "patient2"]
    keys = {e.record.subject: e.matched_keys for e in entries}
    assert keys == {"patient1": {V1}, "patient2": {V2}}
    for e in entries:
        assert provenance_matches_dependency_diff(raw_prov(history, e.record), CLINVAR, set(event.diff.keys))
    control = raw_prov(history, records["patient3"])
    assert not provenance_matches_dependency_diff(control, CLINVAR, set(event.diff.keys))


def test_identical_version_scopes_nothing(data_dir):
    registry, history, _, _, cv15 = build(data_dir)
    event = dependency_change(registry, cv15, cv15)
    assert event.is_empty
    assert scope_for_dependency_change(history, event) == []
    assert react(history, [event], svi_pipeline(), dry_run=True) == []
    assert react(history, [], svi_pipeline(), dry_run=True) == []


def test_omim_change_on_unused_term_scopes_nothing(data_dir):
    registry, history, _, _, _ = build(data_dir)
    om2 = registry.register_version(OMIM, "1996", {
        "Alzheimer's": frozenset({"PSEN2", "PLAU"}), "Parkinson's": frozenset({"PARK2"}),
        "Huntington's": frozenset({"HTT"}),
    })
    assert scope(history, [dependency_change(registry, om2)], registry) == []


def test_omim_change_starts_at_ptg(data_dir):
    registry, history, _, _, cv15 = build(data_dir)
    om2 = registry.register_version(OMIM, "1996", {
        "Alzheimer's": frozenset({"PSEN2", "PLAU", "APOE"}), "Parkinson's": frozenset({"PARK2"}),
    })
    entries = scope(history, [dependency_change(registry, om2)], registry)
    assert subjects(entries) == ["patient1"]
    assert find_starting_component(entries[0]) == 0
    assert plan(entries[0], history).start_component == "PtG"

    both = scope(history, [dependency_change(registry, om2), dependency_change(registry, cv15)], registry)
    assert subjects(both) == ["patient1", "patient2"]
    by_subject = {e.record.subject: e for e in both}
    assert find_starting_component(by_subject["patient1"]) == 0
    assert find_starting_component(by_subject["patient2"]) == 1
    oracle = earliest_matching_step(
        raw_prov(history, by_subject["patient1"].record),
        {OMIM: {"Alzheimer's"}, CLINVAR: {V1, V2}},
    )
    assert oracle == 0


def test_plan_and_execute_partial(data_dir):
    registry, history, ex, records, cv15 = build(data_dir)
    (e1, e2) = scope(history, [dependency_change(registry, cv15)], registry)
    p2 = plan(e2, history)
    assert (p2.mode, p2.start_step, p2.start_component, p2.feasible) == (PARTIAL, 1, "vClass", True)
    new, d = engine.execute_plan(p2, svi_pipeline(), [cv15], ex)
    assert d.changed == {V2} and not d.added and not d.removed
    assert new.cost.steps_executed == 1
    assert by_id(history.output(new)["classes"])[V2] is Classification.GREEN

    total = engine.execute_plan(engine.RecompPlan(e2, TOTAL, None, True, (), (cv15,)), svi_pipeline(), None, ex)[0]
    assert total.cost.steps_executed == 2
    assert history.output(total) == history.output(new)

    _, d1 = engine.execute_plan(plan(e1, history), svi_pipeline(), None, ex)
    assert d1.is_empty()


def test_react_reports_and_supersedes(data_dir):
    registry, history, ex, records, cv15 = build(data_dir)
    event = dependency_change(registry, cv15)
    rows = react(history, [event], svi_pipeline(), ex)
    assert [(r.subject, r.mode, r.start_step, r.executed, r.n_output_changes) for r in rows] == [
        ("patient1", PARTIAL, 1, True, 0), ("patient2", PARTIAL, 1, True, 1),
    ]
    assert engine.report_cells(rows[1]) == [rows[1].record_id, "yes", "partial", "1", "yes", "yes", "1"]
    # the re-executions already use 2015, so nothing is left to do
    assert react(history, [event], svi_pipeline(), ex) == []


def test_react_dry_run_and_executor_requirement(data_dir):
    registry, history, ex, _, cv15 = build(data_dir)
    event = dependency_change(registry, cv15)
    rows = react(history, [event], svi_pipeline(), registry=registry, dry_run=True)
    assert all(not r.executed and r.n_output_changes is None for r in rows)
    assert len(history) == 3
    with pytest.raises(engine.EngineError):
        react(history, [event], svi_pipeline())


def test_input_change_scopes_only_that_patient(data_dir):
    registry, history, ex, records, _ = build(data_dir)
    r1 = records["patient1"]
    old = history.cache.load_value(r1.input_refs["varset"])
    new = old | {Variant("999", "PLAU")}
    changed, d = diff_input(("varset", old), ("varset", new))
    assert changed
    event = input_change("varset", d, from_ref=r1.input_refs["varset"], new_value=new)
    entries = scope_for_input_change(history, event)
    assert subjects(entries) == ["patient1"]
    p = plan(entries[0], history)
    assert p.start_step == 1
    out, d_out = engine.execute_plan(p, svi_pipeline(), None, ex)
    assert d_out.added == {"999"}
    assert canonical.value_hash(new) == out.input_refs["varset"]

    empty = input_change("varset", diff_input(("varset", old), ("varset", old))[1], from_ref=r1.input_refs["varset"])
    assert scope_for_input_change(history, empty) == []


def test_phenotype_change_starts_at_ptg(data_dir):
    registry, history, ex, records, _ = build(data_dir)
    r2 = records["patient2"]
    old = history.cache.load_value(r2.input_refs["ph"])
    _, d = diff_input(("ph", old), ("ph", old | {"Alzheimer's"}))
    event = input_change("ph", d, from_ref=r2.input_refs["ph"], new_value=old | {"Alzheimer's"})
    # patient3 holds the identical phenotype value, hence the same hash
    entries = scope_for_input_change(history, event)
    assert subjects(entries) == ["patient2", "patient3"]
    assert all(find_starting_component(e) == 0 for e in entries)
    (only,) = scope_for_input_change(history, event, records=[r2])
    assert only.record == r2


def test_black_box_scope_is_every_user(data_dir):
    registry, history, _, records, cv15 = build(data_dir, transparency="black")
    entries = scope(history, [dependency_change(registry, cv15)], registry)
    assert subjects(entries) == ["patient1", "patient2", "patient3"]
    with pytest.raises(engine.BlackBoxError):
        find_starting_component(entries[0])
    assert all(plan(e, history).mode == TOTAL and plan(e, history).feasible for e in entries)

    r1 = records["patient1"]
    old = history.cache.load_value(r1.input_refs["varset"])
    _, d = diff_input(("varset", old), ("varset", old | {Variant("1", "X")}))
    assert subjects(scope_for_input_change(history, input_change("varset", d))) == [
        "patient1", "patient2", "patient3"]


def test_outputs_only_cache_blocks_then_degrades(data_dir):
    registry, history, ex, _, cv15 = build(data_dir, cache_mode=CACHE_OUTPUTS_ONLY)
    entries = scope(history, [dependency_change(registry, cv15)], registry)
    for e in entries:
        p = plan(e, history)
        assert p.mode == PARTIAL and not p.feasible
        assert p.blocking_inputs == (e.record.boundary_refs["targets"],)
        with pytest.raises(engine.InfeasiblePlanError):
            engine.execute_plan(p, svi_pipeline(), None, ex)
        fallback = engine.degrade(p, history)
        assert (fallback.mode, fallback.feasible, fallback.degraded) == (TOTAL, True, True)
    rows = react(history, [dependency_change(registry, cv15)], svi_pipeline(), ex)
    assert all(r.executed and r.mode == TOTAL for r in rows)


def test_nothing_cached_stays_infeasible(data_dir):
    registry, history, ex, records, cv15 = build(data_dir, cache_mode=CACHE_OUTPUTS_ONLY)
    history.cache._mem.clear()
    (e1, _) = scope(history, [dependency_change(registry, cv15)], registry)
    p = engine.degrade(plan(e1, history), history)
    assert p.mode == PARTIAL and not p.feasible
    rows = react(history, [dependency_change(registry, cv15)], svi_pipeline(), ex)
    assert all(r.error and r.error.startswith("blocked") for r in rows)


def test_change_event_validation():
    with pytest.raises(ValueError):
        engine.ChangeEvent("sideways", "x", None)
    with pytest.raises(ValueError):
        engine.ChangeEvent(engine.DEPENDENCY_CHANGE, "x", None)
