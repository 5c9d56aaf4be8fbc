"""Scoping, planning and executing re-computations after data changes.

Given a change to one input slot or one reference dataset, the engine finds
the past executions whose provenance shows they touched something that
changed, picks the earliest affected step of each, checks that the values
needed to restart there are cached, and re-executes from that step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from . import prov
from .history import HistoryDB, HistoryRecord, MissingCacheError
from .pipeline import Executor, PipelineSpec
from .store import DiffResult, Registry, VersionTag

logger = logging.getLogger(__name__)

INPUT_CHANGE = "input_change"
DEPENDENCY_CHANGE = "dependency_change"

PARTIAL = "partial"
TOTAL = "total"


class EngineError(Exception):
    pass


class BlackBoxError(EngineError):
    pass


class InfeasiblePlanError(EngineError):
    pass


@dataclass(frozen=True)
class ChangeEvent:
    kind: str
    slot_or_dataset: str
    diff: DiffResult | None
    # input changes only: hash of the value being replaced, and its replacement
    from_ref: str | None = None
    new_value: Any = None

    def __post_init__(self) -> None:
        if self.kind not in (INPUT_CHANGE, DEPENDENCY_CHANGE):
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.kind == DEPENDENCY_CHANGE and (self.diff is None or self.diff.to_tag is None):
            raise ValueError("a dependency change needs a diff with a target version")

    @property
    def is_empty(self) -> bool:
        return self.diff is not None and self.diff.is_empty()


def dependency_change(registry: Registry, new: VersionTag, old: VersionTag | None = None) -> ChangeEvent:
    """Event for moving a dataset to ``new``, diffed against ``old`` (default: the previous version)."""
    if old is None:
        prior = [v.tag for v in registry.versions(new.dataset_id) if v.tag.sequence < new.sequence]
        old = prior[-1] if prior else new
    return ChangeEvent(DEPENDENCY_CHANGE, new.dataset_id, registry.diff(old, new))


def input_change(slot: str, diff: DiffResult | None, from_ref: str | None = None, new_value: Any = None) -> ChangeEvent:
    return ChangeEvent(INPUT_CHANGE, slot, diff, from_ref=from_ref, new_value=new_value)


@dataclass(frozen=True)
class ScopeEntry:
    record: HistoryRecord
    matched_usages: tuple[tuple[prov.UsageStatement, int], ...]
    matched_keys: frozenset[str]
    granularity: str
    target_versions: tuple[VersionTag, ...] = ()
    new_inputs: Mapping[str, Any] = field(default_factory=dict)

    def merge(self, other: ScopeEntry) -> ScopeEntry:
        usages = self.matched_usages + tuple(u for u in other.matched_usages if u not in self.matched_usages)
        targets = {t.dataset_id: t for t in self.target_versions}
        targets.update({t.dataset_id: t for t in other.target_versions})
        return replace(
            self,
            matched_usages=usages,
            matched_keys=self.matched_keys | other.matched_keys,
            target_versions=tuple(targets[d] for d in sorted(targets)),
            new_inputs={**self.new_inputs, **other.new_inputs},
        )


@dataclass(frozen=True)
class RecompPlan:
    entry: ScopeEntry
    mode: str
    start_step: int | None
    feasible: bool
    blocking_inputs: tuple[str, ...]
    target_versions: tuple[VersionTag, ...]
    start_component: str | None = None
    # a partial plan that could not run and fell back to total
    degraded: bool = False

    @property
    def record(self) -> HistoryRecord:
        return self.entry.record


class _DiffMemo:
    def __init__(self, registry: Registry | None):
        self.registry = registry
        self._memo: dict[tuple[str, str], DiffResult] = {}

    def baseline(self, event: ChangeEvent, used: VersionTag) -> DiffResult:
        d = event.diff
        assert d is not None and d.to_tag is not None
        if d.from_tag is not None and d.from_tag.ref == used.ref:
            return d
        if used.ref == d.to_tag.ref:
            return DiffResult(d.dataset_id, used, d.to_tag)
        if self.registry is None:
            return d
        key = (used.ref, d.to_tag.ref)
        if key not in self._memo:
            self._memo[key] = self.registry.diff(used, d.to_tag)
        return self._memo[key]


def _records(H: HistoryDB, records: Iterable[HistoryRecord] | None) -> list[HistoryRecord]:
    return list(H) if records is None else list(records)


def _entity_slots(entity: prov.ProvEntity | None) -> set[str]:
    if entity is None:
        return set()
    return {s for s in entity.attributes.get("slots", entity.id).split(",") if s}


def scope_for_input_change(
    H: HistoryDB, event: ChangeEvent, records: Iterable[HistoryRecord] | None = None
) -> list[ScopeEntry]:
    """Records whose provenance shows the changed input slot being used.

    Element keys narrow the match: a usage matches when its keys hit a
    removed or changed element.  Added elements cannot appear in any past
    provenance, so a usage of the very input value being extended always
    matches.
    """
    if event.kind != INPUT_CHANGE:
        raise EngineError("scope_for_input_change needs an input_change event")
    if event.is_empty:
        return []
    slot = event.slot_or_dataset
    diff = event.diff
    out = []
    for r in _records(H, records):
        if slot not in r.input_refs:
            continue
        if event.from_ref is not None and r.input_refs[slot] != event.from_ref:
            continue
        doc = H.load_prov(r)
        matched: list[tuple[prov.UsageStatement, int]] = []
        keys: set[str] = set()
        for u, act in prov.query_usages(doc, role=prov.ROLE_INPUT):
            if slot not in _entity_slots(doc.entity(u.entity_id)):
                continue
            if diff is None:
                hit = frozenset([slot])
            elif u.is_coarse:
                hit = diff.keys
            else:
                hit = (u.element_keys & (diff.removed | diff.changed)) | diff.added
            if hit:
                matched.append((u, act.step_index))
                keys |= hit
        if matched:
            new_inputs = {slot: event.new_value} if event.new_value is not None else {}
            out.append(ScopeEntry(r, tuple(matched), frozenset(keys), doc.granularity, (), new_inputs))
    return out


def dependency_matches(
    doc: prov.ProvDocument, dataset_id: str, diff: DiffResult
) -> tuple[list[tuple[prov.UsageStatement, int]], frozenset[str]]:
    """Dep usages of ``dataset_id`` in ``doc`` touched by ``diff``, and the keys that hit.

    A usage's key pool is its own element keys plus the element keys of every
    input the same activity used: an element added to the dataset can only be
    linked to a record through the input it would now annotate.
    """
    matched = []
    keys: set[str] = set()
    by_activity: dict[str, list[prov.UsageStatement]] = {}
    for u in doc.usages:
        if u.role == prov.ROLE_INPUT:
            by_activity.setdefault(u.activity_id, []).append(u)
    for u, act in prov.query_usages(doc, role=prov.ROLE_DEP):
        entity = doc.entity(u.entity_id)
        if entity is None or entity.attributes.get("dataset", entity.id) != dataset_id:
            continue
        feeding = by_activity.get(u.activity_id, [])
        if u.is_coarse or any(i.is_coarse for i in feeding):
            hit = diff.keys
        else:
            pool = set(u.element_keys)
            for i in feeding:
                pool |= i.element_keys
            hit = diff.keys & pool
        if hit:
            matched.append((u, act.step_index))
            keys |= hit
    return matched, frozenset(keys)


def scope_for_dependency_change(
    H: HistoryDB,
    event: ChangeEvent,
    registry: Registry | None = None,
    records: Iterable[HistoryRecord] | None = None,
) -> list[ScopeEntry]:
    """Records that used elements of the changed dataset.

    Each record is judged against the diff from the version it actually used
    to the new version; with a registry these per-record diffs are computed
    (once per distinct old version), otherwise ``event.diff`` is trusted.
    """
    if event.kind != DEPENDENCY_CHANGE:
        raise EngineError("scope_for_dependency_change needs a dependency_change event")
    if event.is_empty:
        return []
    dataset_id = event.slot_or_dataset
    memo = _DiffMemo(registry)
    out = []
    for r in _records(H, records):
        used = r.tag_for(dataset_id)
        if used is None:
            continue
        diff = memo.baseline(event, used)
        if diff.is_empty():
            continue
        doc = H.load_prov(r)
        matched, keys = dependency_matches(doc, dataset_id, diff)
        if matched:
            out.append(ScopeEntry(r, tuple(matched), keys, doc.granularity, (event.diff.to_tag,)))
    return out


def scope(
    H: HistoryDB,
    events: Iterable[ChangeEvent],
    registry: Registry | None = None,
    records: Iterable[HistoryRecord] | None = None,
) -> list[ScopeEntry]:
    """Union of the single-event scopes, one entry per record, in history order."""
    pool = _records(H, records)
    merged: dict[str, ScopeEntry] = {}
    for event in events:
        if event.kind == INPUT_CHANGE:
            entries = scope_for_input_change(H, event, pool)
        else:
            entries = scope_for_dependency_change(H, event, registry, pool)
        for e in entries:
            rid = e.record.record_id
            merged[rid] = merged[rid].merge(e) if rid in merged else e
    order = {r.record_id: i for i, r in enumerate(pool)}
    return sorted(merged.values(), key=lambda e: order[e.record.record_id])


def find_starting_component(entry: ScopeEntry) -> int:
    if entry.granularity == prov.BLACK_BOX:
        raise BlackBoxError(f"{entry.record.record_id} has no step structure; re-run it in full")
    if not entry.matched_usages:
        raise EngineError(f"{entry.record.record_id} has no matched usages")
    return min(step for _, step in entry.matched_usages)


def _restart_refs(doc: prov.ProvDocument, record: HistoryRecord, start: int) -> dict[str, str]:
    """Hashes of every value that steps >= start read but do not produce themselves."""
    early = {a.id for a in doc.activities if a.step_index < start}
    late = {a.id for a in doc.activities if a.step_index >= start}
    produced_early = {g.entity_id for g in doc.generations if g.activity_id in early}
    available = set(record.input_refs) | produced_early
    needed: dict[str, str] = {}
    for u in doc.usages:
        if u.activity_id not in late or u.role != prov.ROLE_INPUT:
            continue
        for slot in sorted(_entity_slots(doc.entity(u.entity_id))):
            if slot in available:
                needed[slot] = record.boundary_refs.get(slot) or record.input_refs.get(slot, "")
    return needed


def plan(entry: ScopeEntry, H: HistoryDB) -> RecompPlan:
    """Partial from the starting component for white-box records, total otherwise.

    Infeasibility is reported, not raised: ``blocking_inputs`` names the
    hashes that are missing from the cache.
    """
    record = entry.record
    if entry.granularity == prov.BLACK_BOX:
        missing = tuple(sorted({h for h in record.input_refs.values() if h not in H.cache}))
        return RecompPlan(entry, TOTAL, None, not missing, missing, entry.target_versions)
    start = find_starting_component(entry)
    doc = H.load_prov(record)
    act = next((a.id for a in doc.activities if a.step_index == start), None)
    refs = _restart_refs(doc, record, start)
    missing = tuple(sorted({h or f"<unrecorded:{s}>" for s, h in refs.items() if not h or h not in H.cache}))
    return RecompPlan(entry, PARTIAL, start, not missing, missing, entry.target_versions, act)


def degrade(p: RecompPlan, H: HistoryDB) -> RecompPlan:
    """Fall back to total re-execution when a partial plan is blocked but the original inputs are cached."""
    if p.mode != PARTIAL or p.feasible:
        return p
    if all(h in H.cache for h in p.record.input_refs.values()):
        return replace(p, mode=TOTAL, start_step=None, start_component=None, feasible=True, degraded=True)
    return p


def execute_plan(
    p: RecompPlan,
    pipeline: PipelineSpec,
    new_versions: Iterable[VersionTag] | None,
    executor: Executor,
) -> tuple[HistoryRecord, DiffResult]:
    """Re-execute one record; returns the new record and the diff of its output against the old one."""
    if not p.feasible:
        raise InfeasiblePlanError(
            f"{p.record.record_id}: blocked on missing cache entries {list(p.blocking_inputs)}"
        )
    versions = p.target_versions if new_versions is None else tuple(new_versions)
    deps = {t.dataset_id: t for t in versions}
    old = executor.history.output(p.record)
    start = p.start_step if p.mode == PARTIAL else 0
    try:
        new, record = executor.resume(pipeline, p.record, start, deps, inputs=p.entry.new_inputs)
    except MissingCacheError as exc:
        raise InfeasiblePlanError(str(exc)) from exc
    return record, pipeline.output_diff(old, new)


@dataclass(frozen=True)
class ReportRow:
    record_id: str
    subject: str
    in_scope: bool
    mode: str
    start_step: int | None
    feasible: bool
    executed: bool
    n_output_changes: int | None
    matched_keys: frozenset[str] = frozenset()
    new_record_id: str | None = None
    error: str | None = None
    plan: RecompPlan | None = None


def react(
    H: HistoryDB,
    events: Iterable[ChangeEvent],
    pipeline: PipelineSpec,
    executor: Executor | None = None,
    registry: Registry | None = None,
    dry_run: bool = False,
    records: Iterable[HistoryRecord] | None = None,
) -> list[ReportRow]:
    """Scope, plan and (unless ``dry_run``) re-execute everything a batch of changes affects.

    Only records not already superseded by a re-execution are considered
    unless ``records`` is given.  Per-record failures are reported in the row
    and do not stop the batch.
    """
    if executor is None and not dry_run:
        raise EngineError("executing plans needs an executor")
    if registry is None and executor is not None:
        registry = executor.registry
    pool = H.heads() if records is None else list(records)
    rows = []
    for entry in scope(H, events, registry, pool):
        p = degrade(plan(entry, H), H)
        executed, n_changes, new_id, error = False, None, None, None
        if not dry_run and p.feasible:
            try:
                new_record, d = execute_plan(p, pipeline, None, executor)
                executed, n_changes, new_id = True, len(d.keys), new_record.record_id
            except Exception as exc:  # reported per record
                logger.warning("re-execution of %s failed: %s", entry.record.record_id, exc)
                error = str(exc)
        elif not p.feasible:
            error = "blocked: " + ",".join(p.blocking_inputs)
        rows.append(
            ReportRow(
                entry.record.record_id, entry.record.subject, True, p.mode, p.start_step, p.feasible,
                executed, n_changes, entry.matched_keys, new_id, error, p,
            )
        )
    return rows


REPORT_COLUMNS = ("record_id", "in_scope", "mode", "start_step", "feasible", "executed", "n_output_changes")


def report_cells(row: ReportRow) -> list[str]:
    def yn(b: bool) -> str:
        return "yes" if b else "no"

    return [
        row.record_id,
        yn(row.in_scope),
        row.mode,
        "-" if row.start_step is None else str(row.start_step),
        yn(row.feasible),
        yn(row.executed),
        "-" if row.n_output_changes is None else str(row.n_output_changes),
    ]
