"""A small slice of the PROV data model: entities, activities, usage and
generation statements, plus the queries the scoping engine needs.

Documents are immutable values; the ``with_*`` / :func:`assert_usage`
helpers return new documents.  Element-level usage is stored as one
statement per (activity, entity) carrying the set of element keys that were
touched, rather than one statement per element.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

WHITE_BOX = "white_box"
BLACK_BOX = "black_box"
GRANULARITIES = (WHITE_BOX, BLACK_BOX)

ROLE_INPUT = "input"
ROLE_DEP = "dep"
ROLES = (ROLE_INPUT, ROLE_DEP)

_VERSION_REF = re.compile(r"^[^@\s]+@[1-9][0-9]*$")


class ProvError(Exception):
    pass


class UnknownIdError(ProvError):
    pass


class GranularityError(ProvError):
    pass


class ProvParseError(ProvError):
    def __init__(self, message: str, line: int = 0, offset: int = 0):
        super().__init__(f"{message} (line {line}, offset {offset})")
        self.line = line
        self.offset = offset


@dataclass(frozen=True)
class ProvEntity:
    id: str
    attributes: Mapping[str, str] = field(default_factory=dict, hash=False)
    is_collection: bool = False

    @property
    def prov_type(self) -> str | None:
        return self.attributes.get("prov:type")


@dataclass(frozen=True)
class ProvActivity:
    id: str
    step_index: int
    started_at: int


@dataclass(frozen=True)
class UsageStatement:
    activity_id: str
    entity_id: str
    role: str
    # None marks a coarse usage: which elements were touched is unknown.
    element_keys: frozenset[str] | None = None

    @property
    def is_coarse(self) -> bool:
        return self.element_keys is None


@dataclass(frozen=True)
class GenerationStatement:
    entity_id: str
    activity_id: str


@dataclass(frozen=True)
class ProvDocument:
    entities: tuple[ProvEntity, ...] = ()
    activities: tuple[ProvActivity, ...] = ()
    usages: tuple[UsageStatement, ...] = ()
    generations: tuple[GenerationStatement, ...] = ()
    granularity: str = WHITE_BOX

    def entity(self, entity_id: str) -> ProvEntity | None:
        for e in self.entities:
            if e.id == entity_id:
                return e
        return None

    def activity(self, activity_id: str) -> ProvActivity | None:
        for a in self.activities:
            if a.id == activity_id:
                return a
        return None

    def with_entity(self, entity: ProvEntity) -> ProvDocument:
        existing = self.entity(entity.id)
        if existing == entity:
            return self
        if existing is not None:
            raise ProvError(f"entity {entity.id!r} already declared with different attributes")
        return dataclasses.replace(self, entities=self.entities + (entity,))

    def with_activity(self, activity: ProvActivity) -> ProvDocument:
        existing = self.activity(activity.id)
        if existing == activity:
            return self
        if existing is not None:
            raise ProvError(f"activity {activity.id!r} already declared")
        return dataclasses.replace(self, activities=self.activities + (activity,))

    def with_generation(self, entity_id: str, activity_id: str) -> ProvDocument:
        self._require(activity_id, entity_id)
        gen = GenerationStatement(entity_id, activity_id)
        if gen in self.generations:
            return self
        return dataclasses.replace(self, generations=self.generations + (gen,))

    def _require(self, activity_id: str, entity_id: str) -> None:
        if self.activity(activity_id) is None:
            raise UnknownIdError(f"undeclared activity {activity_id!r}")
        if self.entity(entity_id) is None:
            raise UnknownIdError(f"undeclared entity {entity_id!r}")


def assert_usage(
    doc: ProvDocument,
    activity: str,
    entity: str,
    role: str,
    element_keys: Iterable[str] | None = None,
) -> ProvDocument:
    """Return ``doc`` extended with ``used(activity, entity, [prov:role=role])``."""
    if role not in ROLES:
        raise ProvError(f"role must be one of {ROLES}, got {role!r}")
    doc._require(activity, entity)
    keys = None if element_keys is None else frozenset(element_keys)
    if keys is not None and doc.granularity == BLACK_BOX:
        raise GranularityError("black-box documents cannot carry element-level usage")
    usage = UsageStatement(activity, entity, role, keys)
    if usage in doc.usages:
        return doc
    return dataclasses.replace(doc, usages=doc.usages + (usage,))


def validate(doc: ProvDocument) -> list[str]:
    """Every invariant violation in ``doc``; empty when the document is valid."""
    problems: list[str] = []
    if doc.granularity not in GRANULARITIES:
        problems.append(f"unknown granularity {doc.granularity!r}")

    entity_ids: set[str] = set()
    for e in doc.entities:
        if e.id in entity_ids:
            problems.append(f"duplicate entity id {e.id!r}")
        entity_ids.add(e.id)
        version = e.attributes.get("version")
        if version is not None and not _VERSION_REF.match(version):
            problems.append(f"entity {e.id!r} has malformed version {version!r}")

    activity_ids: set[str] = set()
    steps: set[int] = set()
    for a in doc.activities:
        if a.id in activity_ids:
            problems.append(f"duplicate activity id {a.id!r}")
        activity_ids.add(a.id)
        if a.step_index < 0:
            problems.append(f"activity {a.id!r} has negative step_index")
        if a.step_index in steps:
            problems.append(f"step_index {a.step_index} used by more than one activity")
        steps.add(a.step_index)
    by_step = sorted(doc.activities, key=lambda a: a.step_index)
    for before, after in zip(by_step, by_step[1:]):
        if before.started_at > after.started_at:
            problems.append(
                f"activity {after.id!r} has a later step_index but started before {before.id!r}"
            )

    for u in doc.usages:
        if u.role not in ROLES:
            problems.append(f"usage {u.activity_id}->{u.entity_id} has invalid role {u.role!r}")
        if u.activity_id not in activity_ids:
            problems.append(f"usage references undeclared activity {u.activity_id!r}")
        if u.entity_id not in entity_ids:
            problems.append(f"usage references undeclared entity {u.entity_id!r}")
        if u.element_keys is not None and doc.granularity == BLACK_BOX:
            problems.append(f"black-box usage {u.activity_id}->{u.entity_id} carries element keys")
    for g in doc.generations:
        if g.activity_id not in activity_ids:
            problems.append(f"generation references undeclared activity {g.activity_id!r}")
        if g.entity_id not in entity_ids:
            problems.append(f"generation references undeclared entity {g.entity_id!r}")

    if doc.granularity == BLACK_BOX and len(doc.activities) > 1:
        problems.append(f"black-box document has {len(doc.activities)} activities, expected one")
    return problems


def query_usages(
    doc: ProvDocument,
    role: str | None = None,
    entity_id: str | None = None,
    element_keys_intersecting: Iterable[str] | None = None,
) -> list[tuple[UsageStatement, ProvActivity]]:
    """Usages matching every given filter, ordered by the activity's step_index.

    A coarse usage (no element keys) matches any key filter.
    """
    wanted = None if element_keys_intersecting is None else frozenset(element_keys_intersecting)
    activities = {a.id: a for a in doc.activities}
    hits = []
    for u in doc.usages:
        if role is not None and u.role != role:
            continue
        if entity_id is not None and u.entity_id != entity_id:
            continue
        if wanted is not None and u.element_keys is not None and not (u.element_keys & wanted):
            continue
        act = activities.get(u.activity_id)
        if act is None:
            continue
        hits.append((u, act))
    hits.sort(key=lambda pair: pair[1].step_index)
    return hits


# -- serialization -----------------------------------------------------------

def to_dict(doc: ProvDocument) -> dict:
    return {
        "granularity": doc.granularity,
        "entities": [
            {"id": e.id, "attributes": dict(sorted(e.attributes.items())), "is_collection": e.is_collection}
            for e in doc.entities
        ],
        "activities": [
            {"id": a.id, "step_index": a.step_index, "started_at": a.started_at} for a in doc.activities
        ],
        "usages": [
            {
                "activity_id": u.activity_id,
                "entity_id": u.entity_id,
                "role": u.role,
                "element_keys": None if u.element_keys is None else sorted(u.element_keys),
            }
            for u in doc.usages
        ],
        "generations": [{"entity_id": g.entity_id, "activity_id": g.activity_id} for g in doc.generations],
    }


def from_dict(data: dict) -> ProvDocument:
    try:
        return ProvDocument(
            entities=tuple(
                ProvEntity(str(e["id"]), {str(k): str(v) for k, v in e.get("attributes", {}).items()},
                           bool(e.get("is_collection", False)))
                for e in data["entities"]
            ),
            activities=tuple(
                ProvActivity(str(a["id"]), int(a["step_index"]), int(a["started_at"]))
                for a in data["activities"]
            ),
            usages=tuple(
                UsageStatement(
                    str(u["activity_id"]),
                    str(u["entity_id"]),
                    str(u["role"]),
                    None if u.get("element_keys") is None else frozenset(map(str, u["element_keys"])),
                )
                for u in data["usages"]
            ),
            generations=tuple(
                GenerationStatement(str(g["entity_id"]), str(g["activity_id"])) for g in data["generations"]
            ),
            granularity=str(data.get("granularity", WHITE_BOX)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ProvParseError(f"malformed provenance document: {exc!r}") from exc


def serialize(doc: ProvDocument) -> bytes:
    problems = validate(doc)
    if problems:
        raise ProvError("refusing to serialize invalid document: " + "; ".join(problems))
    return (json.dumps(to_dict(doc), indent=1) + "\n").encode()


def deserialize(data: bytes) -> ProvDocument:
    try:
        raw = json.loads(data)
    except UnicodeDecodeError as exc:
        raise ProvParseError(f"not UTF-8: {exc.reason}", 0, exc.start) from exc
    except json.JSONDecodeError as exc:
        raise ProvParseError(exc.msg, exc.lineno, exc.pos) from exc
    if not isinstance(raw, dict):
        raise ProvParseError("top level must be an object", 1, 0)
    return from_dict(raw)
