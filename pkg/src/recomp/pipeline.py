"""Linear white-box pipelines: run them, record them, resume them part-way."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from . import canonical, prov
from .history import CostRecord, HistoryDB, HistoryRecord, MissingCacheError
from .store import DatasetVersion, DiffResult, Registry, VersionTag, diff_output

CACHE_FULL = "full"
CACHE_OUTPUTS_ONLY = "outputs-only"
CACHE_MODES = (CACHE_FULL, CACHE_OUTPUTS_ONLY)

# producer step index used for the pipeline's own inputs
INPUT_PRODUCER = -1


class PipelineError(Exception):
    pass


class StepError(PipelineError):
    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"step {step!r} failed: {cause!r}")
        self.step = step
        self.__cause__ = cause


def normalize_transparency(value: str) -> str:
    if value in ("white", prov.WHITE_BOX):
        return prov.WHITE_BOX
    if value in ("black", prov.BLACK_BOX):
        return prov.BLACK_BOX
    raise ValueError(f"unknown transparency {value!r}")


@dataclass(frozen=True)
class StepResult:
    """What a step returns: its output values and the element keys it touched.

    ``input_keys`` is keyed by input entity id, ``dep_keys`` by dataset id.  A
    missing entry means the step cannot say, and the usage is recorded coarse.
    """

    outputs: Mapping[str, Any]
    input_keys: Mapping[str, frozenset[str] | None] = field(default_factory=dict)
    dep_keys: Mapping[str, frozenset[str] | None] = field(default_factory=dict)


StepFn = Callable[[Mapping[str, Any], Mapping[str, DatasetVersion]], "StepResult | Mapping[str, Any]"]


@dataclass(frozen=True)
class StepSpec:
    name: str
    step_index: int
    input_slots: tuple[str, ...]
    dep_slots: tuple[str, ...]
    apply: StepFn
    output_slots: tuple[str, ...]
    # provenance entity id -> slots it is derived from; defaults to one entity per input slot
    input_entities: Mapping[str, tuple[str, ...]] | None = None

    def entities(self) -> dict[str, tuple[str, ...]]:
        if self.input_entities is not None:
            return dict(self.input_entities)
        return {s: (s,) for s in self.input_slots}


@dataclass(frozen=True)
class PipelineSpec:
    program_id: str
    steps: tuple[StepSpec, ...]
    final_outputs: tuple[str, ...]
    program_version: str = "1"
    # dataset id -> (entity id, prov:type) used in provenance
    dep_entities: Mapping[str, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        indices = [s.step_index for s in self.steps]
        if indices != list(range(len(self.steps))):
            raise PipelineError(f"step indices must be 0..r-1 in order, got {indices}")
        produced_at: dict[str, int] = {}
        for s in self.steps:
            for out in s.output_slots:
                if out in produced_at:
                    raise PipelineError(f"slot {out!r} produced twice")
                produced_at[out] = s.step_index
        for s in self.steps:
            for slot in s.input_slots:
                if produced_at.get(slot, -1) >= s.step_index:
                    raise PipelineError(f"step {s.name!r} consumes {slot!r} before it is produced")

    @property
    def input_slots(self) -> tuple[str, ...]:
        produced = {o for s in self.steps for o in s.output_slots}
        seen: list[str] = []
        for s in self.steps:
            for slot in s.input_slots:
                if slot not in produced and slot not in seen:
                    seen.append(slot)
        for out in self.final_outputs:
            if out not in produced and out not in seen:
                seen.append(out)
        return tuple(seen)

    @property
    def datasets(self) -> tuple[str, ...]:
        out: list[str] = []
        for s in self.steps:
            out.extend(d for d in s.dep_slots if d not in out)
        return tuple(out)

    def step(self, name_or_index: str | int) -> StepSpec:
        for s in self.steps:
            if s.name == name_or_index or s.step_index == name_or_index:
                return s
        raise KeyError(name_or_index)

    def producer_of(self, slot: str) -> int:
        for s in self.steps:
            if slot in s.output_slots:
                return s.step_index
        return INPUT_PRODUCER

    def slots_needed_from(self, start: int) -> list[str]:
        """Slots that steps >= start (or the final output) read but do not themselves produce."""
        needed: list[str] = []
        consumers = [slot for s in self.steps[start:] for slot in s.input_slots] + list(self.final_outputs)
        for slot in consumers:
            if self.producer_of(slot) < start and slot not in needed:
                needed.append(slot)
        return needed

    def dep_entity(self, dataset_id: str) -> tuple[str, str]:
        return self.dep_entities.get(dataset_id, (dataset_id, dataset_id))

    def output_diff(self, old: Mapping[str, Any], new: Mapping[str, Any]) -> DiffResult:
        """Compare two final-output maps element-wise."""
        if len(self.final_outputs) == 1:
            slot = self.final_outputs[0]
            return _slot_diff(slot, old[slot], new[slot], prefix="")
        parts = [_slot_diff(s, old[s], new[s], prefix=f"{s}:") for s in self.final_outputs]
        return DiffResult(
            self.program_id,
            None,
            None,
            frozenset().union(*(p.added for p in parts)),
            frozenset().union(*(p.removed for p in parts)),
            frozenset().union(*(p.changed for p in parts)),
        )


def _slot_diff(slot: str, a: Any, b: Any, prefix: str) -> DiffResult:
    try:
        d = diff_output(a, b, name=slot)
    except (TypeError, ValueError):
        changed = frozenset() if a == b else frozenset([slot])
        return DiffResult(slot, None, None, changed=frozenset(prefix + k for k in changed))
    return DiffResult(
        slot,
        None,
        None,
        frozenset(prefix + k for k in d.added),
        frozenset(prefix + k for k in d.removed),
        frozenset(prefix + k for k in d.changed),
    )


def _is_collection(value: Any) -> bool:
    return isinstance(value, (set, frozenset, list, tuple, dict))


class Executor:
    """Runs pipelines against a registry and records every execution in a history."""

    def __init__(self, history: HistoryDB, registry: Registry, cache_mode: str = CACHE_FULL):
        if cache_mode not in CACHE_MODES:
            raise ValueError(f"cache mode must be one of {CACHE_MODES}")
        self.history = history
        self.registry = registry
        self.cache_mode = cache_mode

    def run(
        self,
        p: PipelineSpec,
        inputs: Mapping[str, Any],
        deps: Mapping[str, VersionTag],
        transparency: str = prov.WHITE_BOX,
        subject: str = "",
    ) -> tuple[dict[str, Any], HistoryRecord]:
        transparency = normalize_transparency(transparency)
        missing = [s for s in p.input_slots if s not in inputs]
        if missing:
            raise PipelineError(f"unbound input slot(s): {missing}")
        tags = self._resolve_deps(p, deps)
        values = {s: inputs[s] for s in p.input_slots}
        return self._execute(p, values, 0, tags, transparency, subject=subject)

    def resume(
        self,
        p: PipelineSpec,
        original: HistoryRecord,
        start: int,
        deps: Mapping[str, VersionTag],
        inputs: Mapping[str, Any] | None = None,
    ) -> tuple[dict[str, Any], HistoryRecord]:
        """Re-execute ``original`` from step ``start`` with substituted versions (and inputs).

        Every value the remaining steps need from earlier steps is read back
        from the cache; nothing before ``start`` is executed.
        """
        inputs = dict(inputs or {})
        if not (0 <= start < max(len(p.steps), 1)):
            raise PipelineError(f"invalid start step {start} for a {len(p.steps)}-step pipeline")
        doc = self.history.load_prov(original)
        if doc.granularity == prov.BLACK_BOX and start > 0:
            raise PipelineError("black-box executions can only be resumed from step 0")
        effective = {t.dataset_id: t for t in original.dependency_tags}
        for s in p.steps[:start]:
            for d in s.dep_slots:
                if d in deps and deps[d] != effective.get(d):
                    raise PipelineError(
                        f"{d} changed but is used by skipped step {s.name!r}; resume from {s.step_index} or earlier"
                    )
        for slot in inputs:
            if slot not in p.input_slots:
                raise PipelineError(f"{slot!r} is not an input slot of {p.program_id}")
            if any(slot in s.input_slots for s in p.steps[:start]):
                raise PipelineError(f"input {slot!r} changed but is read by a step before {start}")
        effective.update(deps)
        tags = self._resolve_deps(p, effective)

        needed = p.slots_needed_from(start)
        refs = {
            s: original.boundary_refs.get(s, original.input_refs.get(s)) for s in needed if s not in inputs
        }
        absent = [h for h in refs.values() if h is None or h not in self.history.cache]
        if absent:
            raise MissingCacheError([h or "<unrecorded>" for h in absent])
        values = {s: self.history.cache.load_value(h) for s, h in refs.items()}
        values.update(inputs)
        return self._execute(
            p, values, start, tags, doc.granularity, subject=original.subject,
            original=original, original_doc=doc, overrides=tuple(inputs),
        )

    def _resolve_deps(self, p: PipelineSpec, deps: Mapping[str, VersionTag]) -> dict[str, VersionTag]:
        unbound = [d for d in p.datasets if d not in deps]
        if unbound:
            raise PipelineError(f"unbound dependency slot(s): {unbound}")
        # canonical tags (with labels) straight from the registry
        return {d: self.registry.get(deps[d]).tag for d in p.datasets}

    def _execute(
        self,
        p: PipelineSpec,
        values: dict[str, Any],
        start: int,
        tags: dict[str, VersionTag],
        transparency: str,
        subject: str,
        original: HistoryRecord | None = None,
        original_doc: prov.ProvDocument | None = None,
        overrides: tuple[str, ...] = (),
    ) -> tuple[dict[str, Any], HistoryRecord]:
        record_id, version = self.history.allocate()
        cache = self.history.cache
        t0 = time.perf_counter()

        boundary: dict[str, str] = {}
        if original is not None:
            boundary.update({k: v for k, v in original.boundary_refs.items() if p.producer_of(k) < start})

        def record_slot(slot: str, value: Any, producer: int) -> None:
            data = canonical.dumps(value)
            h = canonical.digest(data)
            boundary[slot] = h
            if producer == INPUT_PRODUCER or self.cache_mode == CACHE_FULL:
                cache.put(data, (record_id, producer))

        for slot in (values if original is None else overrides):
            record_slot(slot, values[slot], INPUT_PRODUCER)

        doc, clock = self._prov_prefix(p, start, transparency, original_doc)
        datasets = {d: self.registry.get(t) for d, t in tags.items()}
        executed = 0
        for step in p.steps[start:]:
            try:
                result = step.apply({s: values[s] for s in step.input_slots},
                                    {d: datasets[d] for d in step.dep_slots})
            except Exception as exc:  # step code is user-supplied
                raise StepError(step.name, exc) from exc
            if not isinstance(result, StepResult):
                result = StepResult(outputs=result)
            executed += 1
            produced = set(result.outputs)
            if produced != set(step.output_slots):
                raise StepError(step.name, PipelineError(
                    f"produced {sorted(produced)}, declared {list(step.output_slots)}"))
            for slot in step.output_slots:
                values[slot] = result.outputs[slot]
                record_slot(slot, values[slot], step.step_index)
            if transparency == prov.WHITE_BOX:
                doc = self._emit_step(doc, p, step, clock, values, tags, result)
                clock += 1

        outputs = {s: values[s] for s in p.final_outputs}
        output_ref = cache.put_value(outputs, (record_id, max(len(p.steps) - 1, 0)))
        if transparency == prov.BLACK_BOX:
            doc = self._emit_black_box(p, values, tags)

        if original is None:
            input_refs = {s: boundary[s] for s in p.input_slots}
        else:
            input_refs = {**original.input_refs, **{s: boundary[s] for s in overrides}}
        prov_ref = self.history.put_prov(record_id, doc)
        record = HistoryRecord(
            record_id=record_id,
            execution_version=version,
            program_id=p.program_id,
            program_version=p.program_version,
            subject=subject,
            input_refs=input_refs,
            boundary_refs=boundary,
            dependency_tags=tuple(tags[d] for d in p.datasets),
            prov_ref=prov_ref,
            output_ref=output_ref,
            cost=CostRecord(
                wall_time=time.perf_counter() - t0, steps_executed=executed, abstract_units=float(executed)
            ),
            derived_from=original.record_id if original else None,
        )
        self.history.append_record(record)
        return outputs, record

    def _prov_prefix(
        self, p: PipelineSpec, start: int, transparency: str, original_doc: prov.ProvDocument | None
    ) -> tuple[prov.ProvDocument, int]:
        """The document a run starts from: empty, or the reused steps of the original."""
        doc = prov.ProvDocument(granularity=transparency)
        if start == 0 or original_doc is None or transparency == prov.BLACK_BOX:
            return doc, 0
        kept = [a for a in original_doc.activities if a.step_index < start]
        kept_ids = {a.id for a in kept}
        usages = [u for u in original_doc.usages if u.activity_id in kept_ids]
        gens = [g for g in original_doc.generations if g.activity_id in kept_ids]
        entity_ids = {u.entity_id for u in usages} | {g.entity_id for g in gens}
        for e in original_doc.entities:
            if e.id in entity_ids:
                doc = doc.with_entity(e)
        for a in sorted(kept, key=lambda a: a.step_index):
            doc = doc.with_activity(a)
        for u in usages:
            doc = prov.assert_usage(doc, u.activity_id, u.entity_id, u.role, u.element_keys)
        for g in gens:
            doc = doc.with_generation(g.entity_id, g.activity_id)
        clock = max((a.started_at for a in kept), default=-1) + 1
        return doc, clock

    def _dep_entity(self, p: PipelineSpec, dataset_id: str, tag: VersionTag) -> prov.ProvEntity:
        entity_id, prov_type = p.dep_entity(dataset_id)
        return prov.ProvEntity(
            entity_id, {"prov:type": prov_type, "version": tag.ref, "dataset": dataset_id}, is_collection=True
        )

    def _emit_step(
        self,
        doc: prov.ProvDocument,
        p: PipelineSpec,
        step: StepSpec,
        clock: int,
        values: Mapping[str, Any],
        tags: Mapping[str, VersionTag],
        result: StepResult,
    ) -> prov.ProvDocument:
        doc = doc.with_activity(prov.ProvActivity(step.name, step.step_index, clock))
        for d in step.dep_slots:
            entity = self._dep_entity(p, d, tags[d])
            doc = doc.with_entity(entity)
            keys = result.dep_keys.get(d) if d in result.dep_keys else None
            doc = prov.assert_usage(doc, step.name, entity.id, prov.ROLE_DEP, keys)
        for entity_id, sources in step.entities().items():
            collection = any(_is_collection(values.get(s)) for s in sources)
            attrs = {"prov:type": "prov:collection" if collection else "value", "slots": ",".join(sources)}
            doc = doc.with_entity(prov.ProvEntity(entity_id, attrs, is_collection=collection))
            keys = result.input_keys.get(entity_id) if entity_id in result.input_keys else None
            doc = prov.assert_usage(doc, step.name, entity_id, prov.ROLE_INPUT, keys)
        for slot in step.output_slots:
            collection = _is_collection(values[slot])
            attrs = {"prov:type": "prov:collection" if collection else "value", "slots": slot}
            doc = doc.with_entity(prov.ProvEntity(slot, attrs, is_collection=collection))
            doc = doc.with_generation(slot, step.name)
        return doc

    def _emit_black_box(
        self, p: PipelineSpec, values: Mapping[str, Any], tags: Mapping[str, VersionTag]
    ) -> prov.ProvDocument:
        doc = prov.ProvDocument(granularity=prov.BLACK_BOX)
        doc = doc.with_activity(prov.ProvActivity(p.program_id, 0, 0))
        for d in p.datasets:
            entity = self._dep_entity(p, d, tags[d])
            doc = prov.assert_usage(doc.with_entity(entity), p.program_id, entity.id, prov.ROLE_DEP)
        for slot in p.input_slots:
            collection = _is_collection(values[slot])
            attrs = {"prov:type": "prov:collection" if collection else "value", "slots": slot}
            doc = doc.with_entity(prov.ProvEntity(slot, attrs, is_collection=collection))
            doc = prov.assert_usage(doc, p.program_id, slot, prov.ROLE_INPUT)
        for slot in p.final_outputs:
            if doc.entity(slot) is None:
                collection = _is_collection(values[slot])
                attrs = {"prov:type": "prov:collection" if collection else "value", "slots": slot}
                doc = doc.with_entity(prov.ProvEntity(slot, attrs, is_collection=collection))
            doc = doc.with_generation(slot, p.program_id)
        return doc


def run_pure(p: PipelineSpec, inputs: Mapping[str, Any], datasets: Mapping[str, DatasetVersion]) -> dict[str, Any]:
    """Evaluate ``p`` without recording anything."""
    values = dict(inputs)
    for step in p.steps:
        result = step.apply({s: values[s] for s in step.input_slots}, {d: datasets[d] for d in step.dep_slots})
        outs = result.outputs if isinstance(result, StepResult) else result
        values.update(outs)
    return {s: values[s] for s in p.final_outputs}
