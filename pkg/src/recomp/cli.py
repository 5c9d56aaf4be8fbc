"""Command-line interface over a workspace directory.

    recomp register clinvar 2015 cv2015.tsv
    recomp run cohort.tsv --omim 1995 --clinvar 2014
    recomp diff clinvar 2014 2015
    recomp scope clinvar 2015
    recomp plan clinvar 2015
    recomp rerun clinvar 2015 [--dry-run]
    recomp report [cohort.tsv] --epochs 5 --seed 1

Data goes to stdout as tab-separated rows with a header line; errors go to
stderr with a non-zero exit status.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence, TextIO

from . import engine, synth
from .history import HistoryError
from .pipeline import CACHE_MODES, PipelineError
from .snapshots import SnapshotParseError, codec_for, format_cohort, read_cohort, read_snapshot
from .store import StoreError
from .svi import CLINVAR, OMIM, Classification, class_counts, svi_inputs, svi_pipeline
from .workspace import Workspace, locked

log = logging.getLogger("recomp")


class CliError(Exception):
    pass


def _emit(out: TextIO, header: Sequence[str], rows: Sequence[Sequence[str]], human: bool) -> None:
    if not human:
        out.write("\t".join(header) + "\n")
        for row in rows:
            out.write("\t".join(row) + "\n")
        return
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    for row in [header, *rows]:
        out.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")


def _counts(classes) -> list[str]:
    counts = class_counts(classes)
    return [str(counts[c]) for c in (Classification.RED, Classification.AMBER, Classification.GREEN)]


# -- commands ------------------------------------------------------------------

def cmd_register(args, ws: Workspace, out: TextIO) -> int:
    elements = read_snapshot(args.dataset, Path(args.file))
    tag = ws.registry.register_version(args.dataset, args.label, elements)
    out.write(f"{tag}\n")
    return 0


def cmd_run(args, ws: Workspace, out: TextIO) -> int:
    patients = read_cohort(Path(args.cohort))
    deps = {OMIM: ws.registry.resolve(OMIM, args.omim), CLINVAR: ws.registry.resolve(CLINVAR, args.clinvar)}
    transparency = args.transparency or ws.transparency
    executor = ws.executor(args.cache_mode)
    pipeline = svi_pipeline()
    rows = []
    for p in patients:
        outputs, record = executor.run(pipeline, svi_inputs(p.ph, p.varset), deps, transparency, subject=p.id)
        rows.append([p.id, record.record_id, *_counts(outputs["classes"])])
    _emit(out, ("patient_id", "record_id", "red", "amber", "green"), rows, args.human)
    return 0


def cmd_diff(args, ws: Workspace, out: TextIO) -> int:
    a = ws.registry.resolve(args.dataset, args.tag_a)
    b = ws.registry.resolve(args.dataset, args.tag_b)
    d = ws.registry.diff(a, b)
    rows = [
        [name, str(len(keys)), ",".join(sorted(keys))]
        for name, keys in (("added", d.added), ("removed", d.removed), ("changed", d.changed))
    ]
    _emit(out, ("section", "count", "keys"), rows, args.human)
    return 0


def _events(args, ws: Workspace) -> list[engine.ChangeEvent]:
    pairs = [(args.dataset, args.tag)] + [tuple(c) for c in (args.change or [])]
    events = []
    for dataset, token in pairs:
        new = ws.registry.resolve(dataset, token)
        old = ws.registry.resolve(dataset, args.baseline) if args.baseline and dataset == args.dataset else None
        events.append(engine.dependency_change(ws.registry, new, old))
    return events


def cmd_scope(args, ws: Workspace, out: TextIO) -> int:
    entries = engine.scope(ws.history, _events(args, ws), ws.registry, ws.history.heads())
    rows = [[e.record.record_id, e.record.subject, ",".join(sorted(e.matched_keys))] for e in entries]
    _emit(out, ("record_id", "subject", "matched_keys"), rows, args.human)
    return 0


def cmd_plan(args, ws: Workspace, out: TextIO) -> int:
    rows = engine.react(ws.history, _events(args, ws), svi_pipeline(), registry=ws.registry, dry_run=True)
    _emit(out, engine.REPORT_COLUMNS, [engine.report_cells(r) for r in rows], args.human)
    for r in rows:
        if r.plan is not None and r.plan.blocking_inputs:
            print(f"{r.record_id}: partial restart blocked on {','.join(r.plan.blocking_inputs)}"
                  + ("; falling back to total" if r.plan.degraded else ""), file=sys.stderr)
    return 0


def cmd_rerun(args, ws: Workspace, out: TextIO) -> int:
    rows = engine.react(
        ws.history, _events(args, ws), svi_pipeline(), ws.executor(args.cache_mode),
        ws.registry, dry_run=args.dry_run,
    )
    _emit(out, engine.REPORT_COLUMNS, [engine.report_cells(r) for r in rows], args.human)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"{r.record_id}: {r.error}", file=sys.stderr)
    return 1 if failed and not args.dry_run else 0


def cmd_log(args, ws: Workspace, out: TextIO) -> int:
    rows = []
    for r in ws.history:
        tags = ",".join(t.ref for t in r.dependency_tags)
        rows.append([
            r.record_id, r.subject, str(r.execution_version), r.derived_from or "-", tags,
            str(r.cost.steps_executed), *_counts(ws.history.output(r)["classes"]),
        ])
    header = ("record_id", "subject", "execution_version", "derived_from", "dependencies",
              "steps_executed", "red", "amber", "green")
    _emit(out, header, rows, args.human)
    return 0


def _growth(name: str) -> synth.Growth:
    return synth.Growth.churning() if name == "churn" else synth.Growth()


def cmd_report(args, out: TextIO) -> int:
    if args.epochs < 1:
        raise CliError("--epochs must be at least 1")
    if args.patients < 1:
        raise CliError("--patients must be at least 1")
    universe = synth.Universe.build(args.seed)
    if args.cohort:
        cohort = read_cohort(Path(args.cohort))
    else:
        cohort = synth.synth_cohort(args.seed, args.patients, universe=universe)
    if not cohort:
        raise CliError("cohort is empty")
    evolution = synth.synth_evolution(args.seed, args.epochs, _growth(args.growth), universe)
    text = synth.format_trend(synth.trend_report(cohort, evolution))
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    return 0


def cmd_synth(args, out: TextIO) -> int:
    if args.epochs < 1:
        raise CliError("--epochs must be at least 1")
    dest = Path(args.outdir)
    dest.mkdir(parents=True, exist_ok=True)
    universe = synth.Universe.build(args.seed)
    (dest / "cohort.tsv").write_text(format_cohort(synth.synth_cohort(args.seed, args.patients, universe=universe)))
    for ep in synth.synth_evolution(args.seed, args.epochs, _growth(args.growth), universe):
        (dest / f"omim_e{ep.index}.tsv").write_text(codec_for(OMIM).dumps(ep.omim))
        (dest / f"clinvar_e{ep.index}.tsv").write_text(codec_for(CLINVAR).dumps(ep.clinvar))
    out.write(f"{dest}\n")
    return 0


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recomp", description="Provenance-driven selective re-computation.")
    parser.add_argument("--workspace", default="./recomp-ws", help="workspace directory (default: %(default)s)")
    parser.add_argument("--transparency", choices=("white", "black"), default=None,
                        help="provenance granularity for new runs (default: from workspace config)")
    parser.add_argument("--cache-mode", choices=CACHE_MODES, default=None,
                        help="which step values to cache (default: from workspace config)")
    parser.add_argument("--human", action="store_true", help="aligned tables instead of TSV")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a dataset snapshot file as a new version")
    p.add_argument("dataset")
    p.add_argument("label")
    p.add_argument("file")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("run", help="run SVI for every patient in a cohort file")
    p.add_argument("cohort")
    p.add_argument("--omim", required=True, help="OMIM version (label or sequence)")
    p.add_argument("--clinvar", required=True, help="ClinVar version (label or sequence)")
    p.add_argument("--transparency", choices=("white", "black"), default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diff", help="diff two versions of a dataset")
    p.add_argument("dataset")
    p.add_argument("tag_a")
    p.add_argument("tag_b")
    p.set_defaults(func=cmd_diff)

    for name, func, help_ in (
        ("scope", cmd_scope, "list executions invalidated by moving a dataset to a new version"),
        ("plan", cmd_plan, "plan partial or total re-computation of the invalidated executions"),
        ("rerun", cmd_rerun, "re-execute the invalidated executions"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("dataset")
        p.add_argument("tag", help="the new version")
        p.add_argument("--from", dest="baseline", default=None, help="baseline version (default: previous)")
        p.add_argument("--change", nargs=2, action="append", metavar=("DATASET", "TAG"),
                       help="an additional simultaneous dataset change")
        if name == "rerun":
            p.add_argument("--dry-run", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("log", help="list recorded executions")
    p.set_defaults(func=cmd_log)

    p = sub.add_parser("report", help="trend report over a synthetic OMIM/ClinVar history")
    p.add_argument("cohort", nargs="?", default=None, help="cohort file (default: synthetic cohort)")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--patients", type=int, default=50, help="size of the synthetic cohort")
    p.add_argument("--growth", choices=("additive", "churn"), default="additive")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_report, standalone=True)

    p = sub.add_parser("synth", help="write a synthetic cohort and snapshot files")
    p.add_argument("outdir")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--patients", type=int, default=50)
    p.add_argument("--growth", choices=("additive", "churn"), default="additive")
    p.set_defaults(func=cmd_synth, standalone=True)
    return parser


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "standalone", False):
            return args.func(args, out)
        with locked(args.workspace):
            ws = Workspace(args.workspace)
            return args.func(args, ws, out)
    except (CliError, StoreError, SnapshotParseError, PipelineError, engine.EngineError,
            HistoryError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
