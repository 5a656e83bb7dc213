"""Batch command line: knowledge-base inspection, trend analysis, consultations,
benchmarks, and ablation sweeps.

Exit codes: 0 on success, 2 on validation or usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import engine
from .config import AppConfig, ConfigError, load_app_config
from .harness import (
    HarnessError,
    kb_ablation_sweep,
    load_patient,
    round_attribution,
    run_benchmark,
    run_session,
    save_report,
    scripted_patient,
    assemble_session_inputs,
)
from .kb import KbError, kb_fingerprint, load_kb
from .router import RouterError, run_query
from .scoring import ScoringError
from .series import TimeSeries, to_epoch_days

VALIDATION_ERRORS = (KbError, ConfigError, ScoringError, RouterError, HarnessError, engine.ConsultationError, FileNotFoundError, json.JSONDecodeError, ValueError)


def _load_series(path: str) -> TimeSeries:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "points" in data:
        return TimeSeries.from_points([(p[0], p[1]) for p in data["points"]])
    t = [to_epoch_days(v) for v in data["t"]]
    return TimeSeries.from_points(list(zip(t, [float(v) for v in data["y"]])))


def _cmd_kb(args: argparse.Namespace, config: AppConfig) -> int:
    kb = load_kb(args.kb)
    if args.action == "validate":
        print(f"OK {args.kb}")
        print(f"fingerprint: {kb_fingerprint(kb)}")
        for w in kb.warnings:
            print(f"warning: {w}")
        return 0
    if args.action == "idf":
        for fid in sorted(kb.idf):
            print(f"{fid}\t{kb.idf[fid]!r}")
        return 0
    # stats
    n_edges = sum(len(d.symptom_edges) + len(d.trend_edges) for d in kb.diseases)
    print(f"diseases: {len(kb.diseases)}")
    print(f"symptoms: {len(kb.symptoms)}")
    print(f"trends: {len(kb.trends)}")
    print(f"edges: {n_edges}")
    print(f"fingerprint: {kb_fingerprint(kb)}")
    return 0


def _cmd_tsa(args: argparse.Namespace, config: AppConfig) -> int:
    series = _load_series(args.series)
    intent, execution = run_query(
        args.query, series, config.router, has_gaps=args.has_gaps, seed=config.seed
    )
    doc: dict[str, Any] = {
        "query": args.query,
        "intent": {"bucket": intent.bucket, "matched_keywords": list(intent.matched_keywords)},
        "plan": {
            "steps": [{"estimator": s.estimator, "params": dict(s.params)} for s in execution.plan.steps],
            "fallbacks": list(execution.plan.fallbacks),
            "budget": execution.plan.budget,
        },
        "predicates": [p.to_dict() for p in execution.predicates],
        "downgrades": [dataclasses.asdict(d) for d in execution.downgrades],
        "details": {},
    }
    cp = execution.details.get("change_point")
    if cp is not None:
        doc["details"]["change_point"] = {
            "mode": cp.mode,
            "mode_mass": cp.mode_mass,
            "posterior": {str(k): v for k, v in sorted(cp.posterior.items())},
        }
    pooled = execution.details.get("pooled")
    if pooled is not None:
        doc["details"]["pooled"] = dataclasses.asdict(pooled)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _cmd_consult(args: argparse.Namespace, config: AppConfig) -> int:
    kb = load_kb(args.kb)
    record = load_patient(args.patient)
    harness_cfg = config.harness()

    if args.oracle:
        state = run_session(kb, record, harness_cfg)
    else:
        evidence, predicates = assemble_session_inputs(kb, record, harness_cfg)
        state = engine.start_session(kb, evidence, predicates, config.consultation())
        oracle = scripted_patient(record, kb) if not args.interactive else None
        while not state.is_terminal:
            question = state.pending_question
            print(f"[round {state.round + 1}] {question.text}")
            if args.interactive:
                sys.stdout.flush()
                raw = sys.stdin.readline()
                if not raw:
                    print("input closed; stopping")
                    return 0
                answer: Any = raw.strip()
            else:
                answer = oracle(question)
            try:
                state = engine.step(kb, state, answer, config.consultation())
            except engine.AnswerRejected as exc:
                print(f"(answer not understood: {exc})")
                continue
            top = state.ranked.top(config.scoring.top_k)
            for e in top:
                print(f"  {e.disease_id}  mass={e.mass:.4f}  energy={e.energy:.4f}")

    print(f"terminal: {state.terminal.reason} (uncertainty={state.terminal.uncertainty_flag})")
    for e in state.ranked.top(config.scoring.top_k):
        name = kb.disease_by_id[e.disease_id].name
        print(f"  {e.disease_id}  {name}  mass={e.mass:.4f}")
    if args.trace:
        Path(args.trace).write_text(engine.trace_json(state), encoding="utf-8")
        print(f"trace written to {args.trace}")
    return 0


def _cmd_benchmark(args: argparse.Namespace, config: AppConfig) -> int:
    kb = load_kb(args.kb)
    cohort_dir = Path(args.cohort)
    records = [load_patient(p) for p in sorted(cohort_dir.glob("*.json"))]
    harness_cfg = config.harness()
    if args.seed is not None:
        harness_cfg = dataclasses.replace(harness_cfg, seed=args.seed)
    report = run_benchmark(kb, records, harness_cfg)
    print(f"patients: {len(report.per_patient)} (skipped {len(report.skipped)})")
    print("round,accuracy,gain,cumulative_share")
    for row in round_attribution(report):
        gain = "" if row.gain is None else f"{row.gain:+.2f}"
        share = "" if row.cumulative_share is None else f"{100 * row.cumulative_share:.1f}%"
        print(f"{row.round},{row.accuracy:.2f},{gain},{share}")
    print(
        f"top1={report.top1_accuracy:.2f} top2={report.top2_accuracy:.2f} "
        f"macro_f1={report.macro_f1:.4f} recall={report.disease_recall:.4f}"
    )
    if args.out:
        save_report(report, args.out, args.csv)
        print(f"report written to {args.out}")
    return 0


def _cmd_ablate(args: argparse.Namespace, config: AppConfig) -> int:
    kb = load_kb(args.kb)
    cohort_dir = Path(args.cohort)
    records = [load_patient(p) for p in sorted(cohort_dir.glob("*.json"))]
    fractions = [float(f) for f in args.fractions.split(",")]
    seeds = list(range(args.seeds))
    rows = kb_ablation_sweep(kb, fractions, records, config.harness(), seeds)
    print("subset,fraction,accuracy_mean,accuracy_std,delta")
    for row in rows:
        print(
            f"{row.subset},{row.fraction},{row.mean_accuracy:.2f},"
            f"{row.std_accuracy:.2f},{row.delta_vs_full:+.2f}"
        )
    if args.out:
        Path(args.out).write_text(
            json.dumps([row.to_dict() for row in rows], indent=2, sort_keys=True),
            encoding="utf-8",
        )
        print(f"sweep written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trenddx", description=__doc__)
    parser.add_argument("--config", default=None, help="config file (JSON/YAML); env TRENDDX_CONFIG also works")
    sub = parser.add_subparsers(dest="command", required=True)

    p_kb = sub.add_parser("kb", help="inspect a knowledge base")
    p_kb.add_argument("action", choices=["validate", "idf", "stats"])
    p_kb.add_argument("--kb", required=True)

    p_tsa = sub.add_parser("tsa", help="run a trend query over a series file")
    p_tsa.add_argument("--series", required=True)
    p_tsa.add_argument("--query", required=True)
    p_tsa.add_argument("--has-gaps", action="store_true")

    p_consult = sub.add_parser("consult", help="run a consultation for one patient")
    p_consult.add_argument("--kb", required=True)
    p_consult.add_argument("--patient", required=True)
    p_consult.add_argument("--interactive", action="store_true", help="answer questions on stdin")
    p_consult.add_argument("--oracle", action="store_true", help="let the record answer for itself")
    p_consult.add_argument("--trace", default=None, help="write the audit trail JSON here")

    p_bench = sub.add_parser("benchmark", help="run a cohort benchmark")
    p_bench.add_argument("--kb", required=True)
    p_bench.add_argument("--cohort", required=True, help="directory of patient JSON files")
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--csv", default=None)

    p_ablate = sub.add_parser("ablate", help="knowledge-base edge ablation sweep")
    p_ablate.add_argument("--kb", required=True)
    p_ablate.add_argument("--cohort", required=True)
    p_ablate.add_argument("--fractions", default="0.25,0.5,0.75,1.0")
    p_ablate.add_argument("--seeds", type=int, default=3)
    p_ablate.add_argument("--out", default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_app_config(args.config)
        handler = {
            "kb": _cmd_kb,
            "tsa": _cmd_tsa,
            "consult": _cmd_consult,
            "benchmark": _cmd_benchmark,
            "ablate": _cmd_ablate,
        }[args.command]
        return handler(args, config)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
