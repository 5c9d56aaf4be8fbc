"""Immutable keyed dataset versions and the diff functions over them."""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping, Protocol

_REF = re.compile(r"^(?P<dataset>[^@\s]+)@(?P<sequence>[1-9][0-9]*)$")
_FILENAME = re.compile(r"^(?P<sequence>[1-9][0-9]*)(?:_(?P<label>.*))?\.tsv$")


class StoreError(Exception):
    pass


class DuplicateLabelError(StoreError):
    pass


class UnknownVersionError(StoreError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DatasetMismatchError(StoreError, ValueError):
    pass


@dataclass(frozen=True, order=True)
class VersionTag:
    dataset_id: str
    sequence: int
    label: str | None = None

    @property
    def ref(self) -> str:
        return f"{self.dataset_id}@{self.sequence}"

    def __str__(self) -> str:
        return f"{self.ref} ({self.label})" if self.label else self.ref

    @staticmethod
    def parse_ref(ref: str) -> tuple[str, int]:
        m = _REF.match(ref)
        if not m:
            raise ValueError(f"not a version reference: {ref!r}")
        return m["dataset"], int(m["sequence"])


@dataclass(frozen=True)
class DatasetVersion:
    tag: VersionTag
    elements: Mapping[str, Any]

    def __post_init__(self) -> None:
        for key in self.elements:
            if not isinstance(key, str) or not key:
                raise StoreError(f"element keys must be non-empty strings, got {key!r}")
        object.__setattr__(self, "elements", MappingProxyType(dict(self.elements)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetVersion):
            return NotImplemented
        return self.tag == other.tag and dict(self.elements) == dict(other.elements)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class DiffResult:
    dataset_id: str
    from_tag: VersionTag | None
    to_tag: VersionTag | None
    added: frozenset[str] = frozenset()
    removed: frozenset[str] = frozenset()
    changed: frozenset[str] = frozenset()

    @property
    def keys(self) -> frozenset[str]:
        return self.added | self.removed | self.changed

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.changed)

    def reversed(self) -> DiffResult:
        return DiffResult(self.dataset_id, self.to_tag, self.from_tag, self.removed, self.added, self.changed)


def _keyed_diff(
    dataset_id: str,
    from_tag: VersionTag | None,
    to_tag: VersionTag | None,
    a: Mapping[str, Any],
    b: Mapping[str, Any],
    same: Callable[[Any, Any], bool],
) -> DiffResult:
    ka, kb = a.keys(), b.keys()
    return DiffResult(
        dataset_id,
        from_tag,
        to_tag,
        added=frozenset(kb - ka),
        removed=frozenset(ka - kb),
        changed=frozenset(k for k in ka & kb if not same(a[k], b[k])),
    )


def _check_same_dataset(a: DatasetVersion, b: DatasetVersion) -> None:
    if a.tag.dataset_id != b.tag.dataset_id:
        raise DatasetMismatchError(f"cannot diff {a.tag.dataset_id!r} against {b.tag.dataset_id!r}")


def diff_generic(a: DatasetVersion, b: DatasetVersion) -> DiffResult:
    """Symmetric difference of the key sets, plus keys whose values differ."""
    _check_same_dataset(a, b)
    return _keyed_diff(a.tag.dataset_id, a.tag, b.tag, a.elements, b.elements, lambda x, y: x == y)


def diff_omim(a: DatasetVersion, b: DatasetVersion) -> DiffResult:
    """Disease terms whose gene mapping changed (gene order is irrelevant)."""
    _check_same_dataset(a, b)
    return _keyed_diff(
        a.tag.dataset_id, a.tag, b.tag, a.elements, b.elements, lambda x, y: frozenset(x) == frozenset(y)
    )


def _status(value: Any) -> Any:
    return getattr(value, "status", value)


def diff_clinvar(a: DatasetVersion, b: DatasetVersion) -> DiffResult:
    """Variants with a changed status, plus variants added or removed."""
    _check_same_dataset(a, b)
    return _keyed_diff(
        a.tag.dataset_id, a.tag, b.tag, a.elements, b.elements, lambda x, y: _status(x) == _status(y)
    )


DIFFS: dict[str, Callable[[DatasetVersion, DatasetVersion], DiffResult]] = {
    "omim": diff_omim,
    "clinvar": diff_clinvar,
}


def diff_for(dataset_id: str) -> Callable[[DatasetVersion, DatasetVersion], DiffResult]:
    return DIFFS.get(dataset_id, diff_generic)


def _element_key(item: Any) -> str:
    key = getattr(item, "id", item)
    return key if isinstance(key, str) else repr(key)


def _as_keyed(value: Any) -> Mapping[str, Any] | None:
    if isinstance(value, Mapping):
        return {_element_key(k): v for k, v in value.items()}
    if isinstance(value, (set, frozenset, list, tuple)):
        return {_element_key(item): item for item in value}
    return None


def diff_input(a: tuple[str, Any], b: tuple[str, Any]) -> tuple[bool, DiffResult | None]:
    """Compare two values of one input slot, each given as ``(slot, value)``.

    Scalars compare by equality and yield no DiffResult; collections are keyed
    by element id (or the element itself) and diffed like a dataset.
    """
    (slot_a, x_a), (slot_b, x_b) = a, b
    if slot_a != slot_b:
        raise DatasetMismatchError(f"input slot mismatch: {slot_a!r} vs {slot_b!r}")
    ka, kb = _as_keyed(x_a), _as_keyed(x_b)
    if ka is None or kb is None:
        return x_a != x_b, None
    d = _keyed_diff(slot_a, None, None, ka, kb, lambda x, y: x == y)
    return not d.is_empty(), d


def _output_map(y: Any) -> dict[str, Any]:
    if isinstance(y, Mapping):
        return {_element_key(k): v for k, v in y.items()}
    items = list(y)
    if all(isinstance(i, tuple) and len(i) == 2 for i in items):
        return {_element_key(item): cls for item, cls in items}
    return {_element_key(item): item for item in items}


def diff_output(y_a: Any, y_b: Any, name: str = "output") -> DiffResult:
    """Diff two classified outputs keyed by item id (mapping or (item, class) pairs)."""
    return _keyed_diff(name, None, None, _output_map(y_a), _output_map(y_b), lambda x, y: x == y)


# -- registry ----------------------------------------------------------------

class Codec(Protocol):
    def dumps(self, elements: Mapping[str, Any]) -> str: ...

    def loads(self, text: str) -> dict[str, Any]: ...


class Registry:
    """Versions of every external dataset, optionally persisted under ``root``.

    Files live at ``<root>/<dataset_id>/<sequence>_<label>.tsv``; ``codec_for``
    supplies the text format per dataset.
    """

    def __init__(self, root: Path | None = None, codec_for: Callable[[str], Codec] | None = None):
        self.root = Path(root) if root is not None else None
        self._codec_for = codec_for
        self._versions: dict[str, list[DatasetVersion]] = {}
        self._lock = threading.Lock()
        if self.root is not None:
            self._load()

    def _load(self) -> None:
        assert self.root is not None
        if not self.root.exists():
            return
        for ds_dir in sorted(p for p in self.root.iterdir() if p.is_dir()):
            found = []
            for f in ds_dir.iterdir():
                m = _FILENAME.match(f.name)
                if not m:
                    continue
                tag = VersionTag(ds_dir.name, int(m["sequence"]), m["label"] or None)
                elements = self._codec(ds_dir.name).loads(f.read_text(encoding="utf-8"))
                found.append(DatasetVersion(tag, elements))
            found.sort(key=lambda v: v.tag.sequence)
            if found:
                self._versions[ds_dir.name] = found

    def _codec(self, dataset_id: str) -> Codec:
        if self._codec_for is None:
            raise StoreError("a persistent registry needs codec_for")
        return self._codec_for(dataset_id)

    def register_version(
        self, dataset_id: str, label: str | None, elements: Mapping[str, Any]
    ) -> VersionTag:
        if not dataset_id or "@" in dataset_id or "/" in dataset_id:
            raise StoreError(f"invalid dataset id {dataset_id!r}")
        with self._lock:
            existing = self._versions.setdefault(dataset_id, [])
            if label is not None and any(v.tag.label == label for v in existing):
                raise DuplicateLabelError(f"label {label!r} already registered for {dataset_id!r}")
            seq = existing[-1].tag.sequence + 1 if existing else 1
            version = DatasetVersion(VersionTag(dataset_id, seq, label), elements)
            if self.root is not None:
                path = self.root / dataset_id / (f"{seq}_{label}.tsv" if label else f"{seq}.tsv")
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(self._codec(dataset_id).dumps(version.elements), encoding="utf-8")
            existing.append(version)
            return version.tag

    def datasets(self) -> list[str]:
        return sorted(self._versions)

    def versions(self, dataset_id: str) -> list[DatasetVersion]:
        return list(self._versions.get(dataset_id, ()))

    def get(self, tag: VersionTag | str) -> DatasetVersion:
        if isinstance(tag, str):
            dataset_id, seq = VersionTag.parse_ref(tag)
        else:
            dataset_id, seq = tag.dataset_id, tag.sequence
        for v in self._versions.get(dataset_id, ()):
            if v.tag.sequence == seq:
                return v
        raise UnknownVersionError(f"no version {dataset_id}@{seq}")

    def resolve(self, dataset_id: str, token: str) -> VersionTag:
        """Find a tag by label, sequence number, or ``dataset@label|sequence``."""
        if "@" in token:
            prefix, token = token.split("@", 1)
            if prefix != dataset_id:
                raise DatasetMismatchError(f"tag {prefix}@{token} does not belong to {dataset_id!r}")
        versions = self._versions.get(dataset_id, ())
        for v in versions:
            if v.tag.label == token:
                return v.tag
        if token.isdigit():
            for v in versions:
                if v.tag.sequence == int(token):
                    return v.tag
        raise UnknownVersionError(f"unknown version {token!r} of dataset {dataset_id!r}")

    def diff(self, a: VersionTag, b: VersionTag) -> DiffResult:
        return diff_for(a.dataset_id)(self.get(a), self.get(b))
