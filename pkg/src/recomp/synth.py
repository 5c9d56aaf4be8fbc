"""Synthetic OMIM/ClinVar histories and patient cohorts.

Everything derives from a seed.  A hidden "truth" maps each disease term to
the genes really involved; OMIM versions reveal it gradually, ClinVar
versions catalogue more variants and refine their status over time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .snapshots import Patient
from .store import Registry, VersionTag
from .svi import (
    CLINVAR,
    OMIM,
    ClinVarEntry,
    Status,
    Variant,
    is_conclusive,
    select_variants,
    svi_reference,
    target_genes,
)

_RAW = {Status.UNKNOWN: "uncertain significance", Status.BENIGN: "benign", Status.PATHOGENIC: "pathogenic"}


@dataclass(frozen=True)
class Growth:
    """Per-epoch change rates.  The defaults only ever add knowledge."""

    new_terms: int = 1            # terms newly mapped in OMIM
    new_term_genes: float = 0.25  # chance a mapped term gains a gene
    new_variants: int = 15        # variants newly catalogued in ClinVar
    status_refine: float = 0.05   # chance an 'unknown' variant becomes benign/pathogenic
    status_churn: float = 0.0     # chance any catalogued variant gets a fresh random status
    gene_loss: float = 0.0        # chance a term with >1 gene loses one
    term_loss: float = 0.0        # chance a mapped term is dropped
    variant_loss: float = 0.0     # chance a catalogued variant is dropped

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"growth rate {name} must be non-negative, got {value}")
        for name in ("new_term_genes", "status_refine", "status_churn", "gene_loss", "term_loss", "variant_loss"):
            if getattr(self, name) > 1:
                raise ValueError(f"{name} is a probability, got {getattr(self, name)}")

    @classmethod
    def static(cls) -> Growth:
        return cls(0, 0.0, 0, 0.0)

    @classmethod
    def churning(cls) -> Growth:
        return cls(
            new_terms=1, new_term_genes=0.3, new_variants=15, status_refine=0.1,
            status_churn=0.03, gene_loss=0.05, term_loss=0.03, variant_loss=0.03,
        )


@dataclass(frozen=True)
class Universe:
    terms: tuple[str, ...]
    genes: tuple[str, ...]
    truth: dict[str, tuple[str, ...]]
    variants: tuple[Variant, ...]

    @classmethod
    def build(cls, seed: int, n_terms: int = 20, n_genes: int = 120, n_variants: int = 600) -> Universe:
        rng = random.Random(f"universe:{seed}")
        terms = tuple(f"T{i:02d}" for i in range(n_terms))
        genes = tuple(f"G{i:03d}" for i in range(n_genes))
        truth = {t: tuple(sorted(rng.sample(genes, rng.randint(3, 8)))) for t in terms}
        ids = rng.sample(range(10_000_000, 250_000_000), n_variants)
        variants = tuple(Variant(str(i), rng.choice(genes)) for i in sorted(ids))
        return cls(terms, genes, truth, variants)


@dataclass(frozen=True)
class Epoch:
    index: int
    omim: dict[str, frozenset[str]]
    clinvar: dict[str, ClinVarEntry]


def _entry(v: Variant, status: Status) -> ClinVarEntry:
    return ClinVarEntry(v.gene, status, _RAW[status])


def _random_status(rng: random.Random) -> Status:
    return rng.choices(list(Status), weights=(5, 3, 2))[0]


def synth_evolution(seed: int, epochs: int, growth: Growth | None = None, universe: Universe | None = None) -> list[Epoch]:
    """``epochs`` successive OMIM/ClinVar snapshot pairs, deterministic under ``seed``."""
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    growth = growth or Growth()
    u = universe or Universe.build(seed)
    rng = random.Random(f"evolution:{seed}")

    unmapped = list(u.terms)
    rng.shuffle(unmapped)
    omim: dict[str, frozenset[str]] = {}
    for t in unmapped[: len(u.terms) * 3 // 4]:
        truth = u.truth[t]
        omim[t] = frozenset(rng.sample(truth, max(1, len(truth) // 2)))
    unmapped = unmapped[len(u.terms) * 3 // 4:]

    pool = list(u.variants)
    rng.shuffle(pool)
    cut = len(pool) * 3 // 10
    clinvar = {v.id: _entry(v, _random_status(rng)) for v in pool[:cut]}
    uncatalogued = pool[cut:]
    by_id = {v.id: v for v in u.variants}

    out = [Epoch(0, dict(omim), dict(clinvar))]
    for e in range(1, epochs):
        omim = dict(omim)
        for t in sorted(omim):
            if growth.term_loss and rng.random() < growth.term_loss:
                del omim[t]
                unmapped.append(t)
                continue
            genes = set(omim[t])
            if growth.new_term_genes and rng.random() < growth.new_term_genes:
                hidden = [g for g in u.truth[t] if g not in genes]
                genes.add(rng.choice(hidden) if hidden else rng.choice(u.genes))
            if growth.gene_loss and len(genes) > 1 and rng.random() < growth.gene_loss:
                genes.discard(rng.choice(sorted(genes)))
            omim[t] = frozenset(genes)
        for _ in range(min(growth.new_terms, len(unmapped))):
            t = unmapped.pop(rng.randrange(len(unmapped)))
            truth = u.truth[t]
            omim[t] = frozenset(rng.sample(truth, max(1, len(truth) // 2)))

        clinvar = dict(clinvar)
        for vid in sorted(clinvar):
            entry = clinvar[vid]
            if growth.variant_loss and rng.random() < growth.variant_loss:
                del clinvar[vid]
                uncatalogued.append(by_id[vid])
                continue
            if entry.status is Status.UNKNOWN and growth.status_refine and rng.random() < growth.status_refine:
                clinvar[vid] = _entry(by_id[vid], rng.choice([Status.BENIGN, Status.PATHOGENIC]))
            elif growth.status_churn and rng.random() < growth.status_churn:
                clinvar[vid] = _entry(by_id[vid], _random_status(rng))
        for _ in range(min(growth.new_variants, len(uncatalogued))):
            v = uncatalogued.pop(rng.randrange(len(uncatalogued)))
            clinvar[v.id] = _entry(v, _random_status(rng))
        out.append(Epoch(e, omim, clinvar))
    return out


def synth_cohort(
    seed: int, n_patients: int = 50, variants_per_patient: int = 4, universe: Universe | None = None
) -> list[Patient]:
    """Patients whose variants lean towards genes truly linked to their phenotype."""
    u = universe or Universe.build(seed)
    rng = random.Random(f"cohort:{seed}")
    by_gene: dict[str, list[Variant]] = {}
    for v in u.variants:
        by_gene.setdefault(v.gene, []).append(v)
    patients = []
    for i in range(n_patients):
        ph = frozenset(rng.sample(u.terms, rng.choice((1, 1, 2))))
        relevant = [v for t in sorted(ph) for g in u.truth[t] for v in by_gene.get(g, ())]
        chosen: set[Variant] = set()
        n = max(1, variants_per_patient + rng.randint(-1, 1))
        while len(chosen) < n:
            if relevant and rng.random() < 0.6:
                chosen.add(rng.choice(relevant))
            else:
                chosen.add(rng.choice(u.variants))
        patients.append(Patient(f"P{i:03d}", ph, frozenset(chosen)))
    return patients


def register_evolution(registry: Registry, evolution: Sequence[Epoch]) -> list[tuple[VersionTag, VersionTag]]:
    tags = []
    for ep in evolution:
        tags.append((
            registry.register_version(OMIM, f"e{ep.index}", ep.omim),
            registry.register_version(CLINVAR, f"e{ep.index}", ep.clinvar),
        ))
    return tags


@dataclass(frozen=True)
class TrendRow:
    epoch: int
    relevant_gene_count: int
    relevant_variant_count: int
    n_conclusive: int


TREND_COLUMNS = ("epoch", "relevant_gene_count", "relevant_variant_count", "n_conclusive")


def _patient_parts(p) -> tuple[frozenset[Variant], frozenset[str]]:
    if isinstance(p, Patient):
        return p.varset, p.ph
    varset, ph = p
    return frozenset(varset), frozenset(ph)


def trend_report(cohort: Iterable, evolution: Sequence[Epoch]) -> list[TrendRow]:
    """Per epoch: distinct target genes and selected variants across the cohort, and
    how many patients have at least one red variant.

    ``cohort`` holds :class:`Patient` objects or ``(varset, ph)`` pairs.
    """
    parts = [_patient_parts(p) for p in cohort]
    if not parts:
        raise ValueError("trend report needs a non-empty cohort")
    rows = []
    for ep in evolution:
        genes: set[str] = set()
        variants: set[str] = set()
        conclusive = 0
        for varset, ph in parts:
            targets = target_genes(ph, ep.omim)
            genes |= targets
            variants |= {v.id for v in select_variants(varset, targets)}
            conclusive += is_conclusive(svi_reference(ph, varset, ep.omim, ep.clinvar))
        rows.append(TrendRow(ep.index, len(genes), len(variants), conclusive))
    return rows


def format_trend(rows: Iterable[TrendRow]) -> str:
    lines = ["\t".join(TREND_COLUMNS)]
    for r in rows:
        lines.append(f"{r.epoch}\t{r.relevant_gene_count}\t{r.relevant_variant_count}\t{r.n_conclusive}")
    return "\n".join(lines) + "\n"
