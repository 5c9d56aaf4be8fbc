"""Simple Variant Interpretation: phenotype -> target genes -> selected
variants -> red/amber/green classification, wired as a two-step pipeline.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from . import canonical
from .pipeline import PipelineSpec, StepResult, StepSpec
from .store import DatasetVersion

OMIM = "omim"
CLINVAR = "clinvar"

PTG = "PtG"
VCLASS = "vClass"


@canonical.register
@dataclass(frozen=True, order=True)
class Variant:
    id: str
    gene: str

    def __post_init__(self) -> None:
        if not self.id or not self.gene:
            raise ValueError(f"variant needs an id and a gene: {self!r}")


@canonical.register
class Status(str, enum.Enum):
    UNKNOWN = "unknown"
    BENIGN = "benign"
    PATHOGENIC = "pathogenic"


@canonical.register
class Classification(str, enum.Enum):
    RED = "red"
    AMBER = "amber"
    GREEN = "green"


@canonical.register
@dataclass(frozen=True)
class ClinVarEntry:
    gene: str
    status: Status
    raw_status: str = ""


OmimSnapshot = Mapping[str, frozenset[str]]
ClinVarSnapshot = Mapping[str, ClinVarEntry]

_QUALIFIERS = ("probably", "likely", "uncertain", "conflict")


def parse_raw_status(raw: str) -> Status:
    """Map free-text clinical significance onto the three-valued status.

    Anything hedged or contested ("likely pathogenic", "conflicting ...") is
    unknown; so is anything unrecognised.
    """
    text = raw.strip().lower()
    if "benign" in text and "pathogenic" not in text:
        return Status.BENIGN
    if "pathogenic" in text and not any(q in text for q in _QUALIFIERS):
        return Status.PATHOGENIC
    return Status.UNKNOWN


def target_genes(ph: Iterable[str], omim: OmimSnapshot) -> frozenset[str]:
    genes: set[str] = set()
    for term in ph:
        genes.update(omim.get(term, ()))
    return frozenset(genes)


def select_variants(varset: Iterable[Variant], targets: Iterable[str]) -> frozenset[Variant]:
    targets = frozenset(targets)
    return frozenset(v for v in varset if v.gene in targets)


_CLASS_OF = {
    Status.PATHOGENIC: Classification.RED,
    Status.BENIGN: Classification.GREEN,
    Status.UNKNOWN: Classification.AMBER,
}


def classify(selected: Iterable[Variant], cv: ClinVarSnapshot) -> frozenset[tuple[Variant, Classification]]:
    out = []
    for v in selected:
        entry = cv.get(v.id)
        out.append((v, Classification.AMBER if entry is None else _CLASS_OF[entry.status]))
    return frozenset(out)


def class_counts(classes: Iterable[tuple[Variant, Classification]]) -> dict[Classification, int]:
    counts = Counter(c for _, c in classes)
    return {c: counts.get(c, 0) for c in Classification}


def by_id(classes: Iterable[tuple[Variant, Classification]]) -> dict[str, Classification]:
    return {v.id: c for v, c in classes}


def is_conclusive(classes: Iterable[tuple[Variant, Classification]]) -> bool:
    return any(c is Classification.RED for _, c in classes)


# -- pipeline wiring ---------------------------------------------------------

def _ptg(inputs: Mapping, deps: Mapping[str, DatasetVersion]) -> StepResult:
    ph = frozenset(inputs["ph"])
    omim = deps[OMIM].elements
    return StepResult(
        outputs={"targets": target_genes(ph, omim)},
        input_keys={"ph": ph},
        dep_keys={OMIM: frozenset(t for t in ph if t in omim)},
    )


def _vclass(inputs: Mapping, deps: Mapping[str, DatasetVersion]) -> StepResult:
    selected = select_variants(inputs["varset"], inputs["targets"])
    cv = deps[CLINVAR].elements
    ids = frozenset(v.id for v in selected)
    return StepResult(
        outputs={"classes": classify(selected, cv)},
        input_keys={"vars": ids},
        dep_keys={CLINVAR: frozenset(i for i in ids if i in cv)},
    )


def svi_pipeline() -> PipelineSpec:
    """PtG (phenotype to genes, uses OMIM) then vClass (select + classify, uses ClinVar)."""
    return PipelineSpec(
        program_id="SVI",
        steps=(
            StepSpec(PTG, 0, ("ph",), (OMIM,), _ptg, ("targets",)),
            StepSpec(
                VCLASS, 1, ("varset", "targets"), (CLINVAR,), _vclass, ("classes",),
                input_entities={"vars": ("varset", "targets")},
            ),
        ),
        final_outputs=("classes",),
        dep_entities={OMIM: ("om", "OMIM"), CLINVAR: ("cv", "CV")},
    )


def svi_inputs(ph: Iterable[str], varset: Iterable[Variant]) -> dict:
    return {"ph": frozenset(ph), "varset": frozenset(varset)}


def svi_reference(
    ph: Iterable[str], varset: Iterable[Variant], omim: OmimSnapshot, cv: ClinVarSnapshot
) -> frozenset[tuple[Variant, Classification]]:
    """The three operations composed by hand, bypassing the pipeline harness."""
    return classify(select_variants(varset, target_genes(ph, omim)), cv)
