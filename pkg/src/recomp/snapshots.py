"""Tab-separated snapshot and cohort files.

OMIM:     ``term<TAB>gene1,gene2,...``
ClinVar:  ``variant_id<TAB>gene<TAB>raw_status``
generic:  ``key<TAB>value``
cohort:   ``patient_id<TAB>term1;term2<TAB>vid1:gene1,vid2:gene2,...``

Blank lines and lines starting with ``#`` are ignored everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping

from .svi import CLINVAR, OMIM, ClinVarEntry, Variant, parse_raw_status


class SnapshotParseError(ValueError):
    def __init__(self, message: str, line: int, source: str = "<snapshot>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line
        self.source = source


def _rows(text: str, source: str) -> Iterator[tuple[int, list[str]]]:
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield n, line.split("\t")


def _check_unique(out: dict, key: str, n: int, source: str) -> None:
    if not key:
        raise SnapshotParseError("empty key", n, source)
    if key in out:
        raise SnapshotParseError(f"duplicate key {key!r}", n, source)


class OmimCodec:
    def loads(self, text: str, source: str = "<omim>") -> dict[str, frozenset[str]]:
        out: dict[str, frozenset[str]] = {}
        for n, cols in _rows(text, source):
            if len(cols) != 2:
                raise SnapshotParseError(f"expected 2 tab-separated columns, got {len(cols)}", n, source)
            term = cols[0].strip()
            _check_unique(out, term, n, source)
            genes = frozenset(g.strip() for g in cols[1].split(",") if g.strip())
            if not genes:
                raise SnapshotParseError(f"term {term!r} maps to no genes", n, source)
            out[term] = genes
        return out

    def dumps(self, elements: Mapping[str, Any]) -> str:
        return "".join(f"{t}\t{','.join(sorted(elements[t]))}\n" for t in sorted(elements))


class ClinVarCodec:
    def loads(self, text: str, source: str = "<clinvar>") -> dict[str, ClinVarEntry]:
        out: dict[str, ClinVarEntry] = {}
        for n, cols in _rows(text, source):
            if len(cols) != 3:
                raise SnapshotParseError(f"expected 3 tab-separated columns, got {len(cols)}", n, source)
            vid, gene, raw = (c.strip() for c in cols)
            _check_unique(out, vid, n, source)
            if not gene:
                raise SnapshotParseError(f"variant {vid!r} has no gene", n, source)
            out[vid] = ClinVarEntry(gene, parse_raw_status(raw), raw)
        return out

    def dumps(self, elements: Mapping[str, Any]) -> str:
        lines = []
        for vid in sorted(elements):
            e = elements[vid]
            lines.append(f"{vid}\t{e.gene}\t{e.raw_status or e.status.value}\n")
        return "".join(lines)


class GenericCodec:
    def loads(self, text: str, source: str = "<dataset>") -> dict[str, str]:
        out: dict[str, str] = {}
        for n, cols in _rows(text, source):
            if len(cols) != 2:
                raise SnapshotParseError(f"expected 2 tab-separated columns, got {len(cols)}", n, source)
            _check_unique(out, cols[0], n, source)
            out[cols[0]] = cols[1]
        return out

    def dumps(self, elements: Mapping[str, Any]) -> str:
        return "".join(f"{k}\t{elements[k]}\n" for k in sorted(elements))


def codec_for(dataset_id: str) -> OmimCodec | ClinVarCodec | GenericCodec:
    if dataset_id == OMIM:
        return OmimCodec()
    if dataset_id == CLINVAR:
        return ClinVarCodec()
    return GenericCodec()


def read_snapshot(dataset_id: str, path: Path) -> dict[str, Any]:
    path = Path(path)
    return codec_for(dataset_id).loads(path.read_text(encoding="utf-8"), source=str(path))


@dataclass(frozen=True)
class Patient:
    id: str
    ph: frozenset[str]
    varset: frozenset[Variant]


def parse_cohort(text: str, source: str = "<cohort>") -> list[Patient]:
    patients: list[Patient] = []
    seen: set[str] = set()
    for n, cols in _rows(text, source):
        if len(cols) not in (2, 3):
            raise SnapshotParseError(f"expected 3 tab-separated columns, got {len(cols)}", n, source)
        pid = cols[0].strip()
        if not pid:
            raise SnapshotParseError("empty patient id", n, source)
        if pid in seen:
            raise SnapshotParseError(f"duplicate patient {pid!r}", n, source)
        seen.add(pid)
        terms = frozenset(t.strip() for t in cols[1].split(";") if t.strip())
        variants = []
        for item in (cols[2].split(",") if len(cols) == 3 else []):
            item = item.strip()
            if not item:
                continue
            vid, sep, gene = item.partition(":")
            if not sep or not vid or not gene:
                raise SnapshotParseError(f"variant {item!r} is not of the form id:gene", n, source)
            variants.append(Variant(vid, gene))
        patients.append(Patient(pid, terms, frozenset(variants)))
    return patients


def read_cohort(path: Path) -> list[Patient]:
    path = Path(path)
    return parse_cohort(path.read_text(encoding="utf-8"), source=str(path))


def format_cohort(patients: list[Patient]) -> str:
    lines = []
    for p in patients:
        variants = ",".join(f"{v.id}:{v.gene}" for v in sorted(p.varset))
        lines.append(f"{p.id}\t{';'.join(sorted(p.ph))}\t{variants}\n")
    return "".join(lines)
