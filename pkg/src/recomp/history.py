"""Append-only history of executions and the blob cache behind it.

On disk a history is ``history.jsonl`` (one record per line), ``prov/`` (one
provenance document per record) and ``cache/<hh>/<hash>`` blobs.  Passing
``root=None`` keeps everything in memory, which the property tests use.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Mapping

from . import canonical, prov
from .store import VersionTag

logger = logging.getLogger(__name__)


class HistoryError(Exception):
    pass


class ConsistencyError(HistoryError):
    pass


class MissingCacheError(HistoryError):
    def __init__(self, hashes: list[str]):
        super().__init__("missing cache entries: " + ", ".join(hashes))
        self.hashes = hashes


@dataclass(frozen=True)
class CostRecord:
    wall_time: float = 0.0
    steps_executed: int = 0
    abstract_units: float = 0.0

    def __post_init__(self) -> None:
        if self.wall_time < 0 or self.steps_executed < 0 or self.abstract_units < 0:
            raise ValueError(f"cost components must be non-negative: {self}")


@dataclass(frozen=True)
class HistoryRecord:
    record_id: str | None
    execution_version: int | None
    program_id: str
    program_version: str
    input_refs: Mapping[str, str]
    dependency_tags: tuple[VersionTag, ...]
    prov_ref: str
    output_ref: str
    cost: CostRecord
    subject: str = ""
    # hash of every slot value seen at a step boundary, cached or not
    boundary_refs: Mapping[str, str] = field(default_factory=dict)
    derived_from: str | None = None

    def tag_for(self, dataset_id: str) -> VersionTag | None:
        for t in self.dependency_tags:
            if t.dataset_id == dataset_id:
                return t
        return None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "execution_version": self.execution_version,
            "program_id": self.program_id,
            "program_version": self.program_version,
            "subject": self.subject,
            "input_refs": dict(sorted(self.input_refs.items())),
            "boundary_refs": dict(sorted(self.boundary_refs.items())),
            "dependency_tags": [
                {"dataset_id": t.dataset_id, "sequence": t.sequence, "label": t.label}
                for t in self.dependency_tags
            ],
            "prov_ref": self.prov_ref,
            "output_ref": self.output_ref,
            "cost": {
                "wall_time": self.cost.wall_time,
                "steps_executed": self.cost.steps_executed,
                "abstract_units": self.cost.abstract_units,
            },
            "derived_from": self.derived_from,
        }

    @classmethod
    def from_json(cls, data: dict) -> HistoryRecord:
        return cls(
            record_id=data["record_id"],
            execution_version=data["execution_version"],
            program_id=data["program_id"],
            program_version=data["program_version"],
            subject=data.get("subject", ""),
            input_refs=dict(data["input_refs"]),
            boundary_refs=dict(data.get("boundary_refs", {})),
            dependency_tags=tuple(VersionTag(**t) for t in data["dependency_tags"]),
            prov_ref=data["prov_ref"],
            output_ref=data["output_ref"],
            cost=CostRecord(**data["cost"]),
            derived_from=data.get("derived_from"),
        )


@dataclass(frozen=True)
class CacheEntry:
    content_hash: str
    value: bytes
    producer: tuple[str, int] | None


class Cache:
    """Content-addressed blob store; identical bytes always share one entry."""

    def __init__(self, root: Path | None = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict[str, bytes] = {}
        self._producers: dict[str, tuple[str, int]] = {}

    def _path(self, h: str) -> Path:
        assert self.root is not None
        return self.root / h[:2] / h

    def put(self, value: bytes, producer: tuple[str, int] | None = None) -> str:
        h = canonical.digest(value)
        if self.root is None:
            self._mem.setdefault(h, value)
            if producer is not None:
                self._producers.setdefault(h, producer)
            return h
        path = self._path(h)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f"{h}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(value)
            os.replace(tmp, path)
            if producer is not None:
                meta = path.with_name(h + ".producer")
                meta.write_text(json.dumps({"record_id": producer[0], "step_index": producer[1]}))
        return h

    def get(self, h: str) -> bytes | None:
        if self.root is None:
            return self._mem.get(h)
        try:
            return self._path(h).read_bytes()
        except FileNotFoundError:
            return None

    def entry(self, h: str) -> CacheEntry | None:
        value = self.get(h)
        if value is None:
            return None
        producer = self._producers.get(h)
        if self.root is not None:
            meta = self._path(h).with_name(h + ".producer")
            if meta.exists():
                raw = json.loads(meta.read_text())
                producer = (raw["record_id"], raw["step_index"])
        return CacheEntry(h, value, producer)

    def __contains__(self, h: str) -> bool:
        if self.root is None:
            return h in self._mem
        return self._path(h).exists()

    def put_value(self, value: Any, producer: tuple[str, int] | None = None) -> str:
        return self.put(canonical.dumps(value), producer)

    def load_value(self, h: str) -> Any:
        data = self.get(h)
        if data is None:
            raise MissingCacheError([h])
        return canonical.loads(data)


class HistoryDB:
    """The history database: execution records, their provenance, and the cache."""

    def __init__(self, root: Path | None = None):
        self.root = Path(root) if root is not None else None
        self.cache = Cache(self.root / "cache" if self.root is not None else None)
        self._records: list[HistoryRecord] = []
        self._prov: dict[str, prov.ProvDocument] = {}
        self._lock = threading.Lock()
        self._next_version = 1
        if self.root is not None:
            (self.root / "prov").mkdir(parents=True, exist_ok=True)
            self._log = self.root / "history.jsonl"
            if self._log.exists():
                with self._log.open(encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            self._records.append(HistoryRecord.from_json(json.loads(line)))
            if self._records:
                self._next_version = self._records[-1].execution_version + 1

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[HistoryRecord]:
        return iter(list(self._records))

    def allocate(self) -> tuple[str, int]:
        """Reserve the next (record_id, execution_version) pair."""
        with self._lock:
            v = self._next_version
            self._next_version += 1
        return f"h{v:06d}", v

    # -- provenance ---------------------------------------------------------

    def put_prov(self, record_id: str, doc: prov.ProvDocument) -> str:
        ref = f"prov/{record_id}.prov.json"
        data = prov.serialize(doc)
        if self.root is None:
            self._prov[ref] = doc
        else:
            (self.root / ref).write_bytes(data)
        return ref

    def load_prov(self, record: HistoryRecord | str) -> prov.ProvDocument:
        ref = record if isinstance(record, str) else record.prov_ref
        if self.root is None:
            try:
                return self._prov[ref]
            except KeyError:
                raise HistoryError(f"no provenance stored at {ref}") from None
        path = self.root / ref
        if not path.exists():
            raise HistoryError(f"no provenance stored at {ref}")
        return prov.deserialize(path.read_bytes())

    # -- records ------------------------------------------------------------

    def check_consistency(self, r: HistoryRecord) -> None:
        doc = self.load_prov(r)
        problems = prov.validate(doc)
        if problems:
            raise ConsistencyError(f"invalid provenance for {r.record_id}: " + "; ".join(problems))
        tag_refs = {t.ref for t in r.dependency_tags}
        slots = set(r.input_refs) | set(r.boundary_refs)
        used = {(u.entity_id, u.role) for u in doc.usages}
        for entity_id, role in sorted(used):
            entity = doc.entity(entity_id)
            if role == prov.ROLE_DEP:
                version = entity.attributes.get("version")
                if version not in tag_refs:
                    raise ConsistencyError(
                        f"dependency entity {entity_id!r} at version {version!r} is not among "
                        f"the record's dependency tags {sorted(tag_refs)}"
                    )
            else:
                sources = [s for s in entity.attributes.get("slots", entity_id).split(",") if s]
                missing = [s for s in sources if s not in slots]
                if missing:
                    raise ConsistencyError(
                        f"input entity {entity_id!r} refers to unrecorded slot(s) {missing}"
                    )
        if r.cost.steps_executed > len(doc.activities) and doc.granularity == prov.WHITE_BOX:
            raise ConsistencyError(f"{r.record_id}: more steps executed than activities recorded")

    def append_record(self, r: HistoryRecord) -> str:
        with self._lock:
            if r.record_id is None or r.execution_version is None:
                v = self._next_version
                r = replace(
                    r,
                    record_id=r.record_id or f"h{v:06d}",
                    execution_version=r.execution_version or v,
                )
            if any(x.record_id == r.record_id for x in self._records):
                raise ConsistencyError(f"duplicate record id {r.record_id}")
            if self._records and r.execution_version <= self._records[-1].execution_version:
                raise ConsistencyError(
                    f"execution_version {r.execution_version} does not follow "
                    f"{self._records[-1].execution_version}"
                )
            self.check_consistency(r)
            if self.root is not None:
                with self._log.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
            self._records.append(r)
            self._next_version = max(self._next_version, r.execution_version + 1)
        logger.debug("appended %s (%s)", r.record_id, r.subject)
        return r.record_id

    def get(self, record_id: str) -> HistoryRecord:
        for r in self._records:
            if r.record_id == record_id:
                return r
        raise KeyError(record_id)

    def records_using(self, dataset_id: str, tag: VersionTag | None = None) -> list[HistoryRecord]:
        out = []
        for r in self._records:
            t = r.tag_for(dataset_id)
            if t is None:
                continue
            if tag is not None and (t.dataset_id, t.sequence) != (tag.dataset_id, tag.sequence):
                continue
            out.append(r)
        return out

    def heads(self) -> list[HistoryRecord]:
        """Records not yet superseded by a re-execution derived from them."""
        superseded = {r.derived_from for r in self._records if r.derived_from}
        return [r for r in self._records if r.record_id not in superseded]

    def output(self, record: HistoryRecord) -> Any:
        return self.cache.load_value(record.output_ref)

    def dangling_refs(self) -> list[tuple[str, str]]:
        """(record_id, hash) pairs whose input or output blob is missing."""
        missing = []
        for r in self._records:
            for h in [*r.input_refs.values(), r.output_ref]:
                if h not in self.cache:
                    missing.append((r.record_id, h))
        return missing
