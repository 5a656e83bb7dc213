"""Scripted-patient oracle, benchmark runner, round attribution, ablation sweeps.

Reproduces the evaluation protocols at desk scale: a deterministic answer
oracle stands in for the human turn, cohorts run to termination with the
ranking recorded after every round, and accuracy is always computed from the
same stored traces the audit-trail export serializes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import engine
from .engine import ConsultationConfig, ConsultationState, Question
from .kb import Disease, Edge, KnowledgeBase, SymptomDef, TrendDef, build_kb, kb_fingerprint, subsample_edges
from .predicates import TrendPredicate
from .router import RouterConfig, run_query
from .scoring import EvidenceSet
from .series import SeverityLevel, TimeSeries, epoch_days_to_iso, to_epoch_days


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    gold_diseases: frozenset[str]
    symptom_timelines: Mapping[str, tuple[tuple[float, SeverityLevel], ...]] = field(
        default_factory=dict
    )
    indicator_streams: Mapping[str, TimeSeries] = field(default_factory=dict)
    static_findings: frozenset[str] = frozenset()
    absent_findings: frozenset[str] = frozenset()
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for sid, timeline in self.symptom_timelines.items():
            ts = [t for t, _ in timeline]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise HarnessError(f"{self.patient_id}: timeline {sid!r} timestamps not increasing")

    def latest_severity(self, finding_id: str) -> SeverityLevel | None:
        timeline = self.symptom_timelines.get(finding_id)
        if timeline:
            return timeline[-1][1]
        return None


def record_from_dict(data: Mapping[str, Any]) -> PatientRecord:
    timelines = {}
    for sid, entries in data.get("symptom_timelines", {}).items():
        timelines[sid] = tuple(
            (to_epoch_days(t), SeverityLevel.from_name(str(level)) if isinstance(level, str) else SeverityLevel(int(level)))
            for t, level in entries
        )
    streams = {}
    for iid, entries in data.get("indicator_streams", {}).items():
        streams[iid] = TimeSeries.from_points([(t, float(v)) for t, v in entries])
    return PatientRecord(
        patient_id=data["patient_id"],
        gold_diseases=frozenset(data.get("gold_diseases", ())),
        symptom_timelines=timelines,
        indicator_streams=streams,
        static_findings=frozenset(data.get("static_findings", ())),
        absent_findings=frozenset(data.get("absent_findings", ())),
        attributes=dict(data.get("attributes", {})),
    )


def record_to_dict(record: PatientRecord) -> dict[str, Any]:
    return {
        "patient_id": record.patient_id,
        "gold_diseases": sorted(record.gold_diseases),
        "symptom_timelines": {
            sid: [[epoch_days_to_iso(t), level.label] for t, level in timeline]
            for sid, timeline in sorted(record.symptom_timelines.items())
        },
        "indicator_streams": {
            iid: [[epoch_days_to_iso(float(t)), float(v)] for t, v in zip(s.t, s.y)]
            for iid, s in sorted(record.indicator_streams.items())
        },
        "static_findings": sorted(record.static_findings),
        "absent_findings": sorted(record.absent_findings),
        "attributes": dict(record.attributes),
    }


def load_patient(path: str | Path) -> PatientRecord:
    return record_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_patient(record: PatientRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record_to_dict(record), indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# scripted answering oracle


def scripted_patient(record: PatientRecord, kb: KnowledgeBase) -> Callable[[Question], list[dict[str, Any]]]:
    """Deterministic answer function standing in for the human turn.

    A queried finding answers yes (with its latest severity) when present in
    the record's findings or timelines, no when the record explicitly lists
    it absent, unknown otherwise.
    """
    present = set(record.static_findings) | {
        sid for sid, timeline in record.symptom_timelines.items() if timeline
    }

    def answer(question: Question) -> list[dict[str, Any]]:
        out = []
        for fid in question.gap_ids:
            if fid in present:
                reply: dict[str, Any] = {"gap_id": fid, "value": "yes"}
                sev = record.latest_severity(fid)
                if sev is not None:
                    reply["severity"] = sev.label
                out.append(reply)
            elif fid in record.absent_findings:
                out.append({"gap_id": fid, "value": "no"})
            else:
                out.append({"gap_id": fid, "value": "unknown"})
        return out

    return answer


# ---------------------------------------------------------------------------
# session assembly shared by the benchmark, the CLI, and the HTTP service


@dataclass(frozen=True)
class HarnessConfig:
    consultation: ConsultationConfig = field(default_factory=ConsultationConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    trend_query: str = "overall trend"
    seed: int = 0


def assemble_session_inputs(
    kb: KnowledgeBase, record: PatientRecord, config: HarnessConfig
) -> tuple[EvidenceSet, tuple[TrendPredicate, ...]]:
    """Static findings become positive evidence; every timeline or stream with
    at least two points runs through the router with the default trend query.
    Single-point timelines are presence markers only."""
    evidence = EvidenceSet(positive=frozenset(record.static_findings))
    predicates: list[TrendPredicate] = []
    for sid, timeline in sorted(record.symptom_timelines.items()):
        if len(timeline) < 2:
            continue
        series = TimeSeries.from_severity_timeline(
            [(t, level) for t, level in timeline]
        )
        _, execution = run_query(
            f"{config.trend_query} for {sid}", series, config.router, seed=config.seed
        )
        predicates.extend(execution.predicates)
    for iid, series in sorted(record.indicator_streams.items()):
        if len(series) < 2:
            continue
        _, execution = run_query(
            f"{config.trend_query} for {iid}", series, config.router, seed=config.seed
        )
        predicates.extend(execution.predicates)
    return evidence, tuple(predicates)


def run_session(
    kb: KnowledgeBase, record: PatientRecord, config: HarnessConfig
) -> ConsultationState:
    """One patient end to end against the scripted oracle."""
    evidence, predicates = assemble_session_inputs(kb, record, config)
    state = engine.start_session(kb, evidence, predicates, config.consultation)
    oracle = scripted_patient(record, kb)
    while not state.is_terminal:
        state = engine.step(kb, state, oracle(state.pending_question), config.consultation)
    return state


# ---------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class PatientTrace:
    patient_id: str
    gold_diseases: tuple[str, ...]
    trace: Mapping[str, Any]  # engine.export_trace output

    def ranking_at_round(self, r: int) -> list[dict[str, Any]]:
        """Survivor ranking after round r (carried forward past termination)."""
        snapshots = [self.trace["round0"]["ranking"]] + [
            rec["ranking"] for rec in self.trace["rounds"]
        ]
        idx = min(r, len(snapshots) - 1)
        snap = snapshots[idx]
        order = {d: i for i, d in enumerate(snap["survivors"])}
        return sorted(
            (e for e in snap["entries"] if e["disease_id"] in order),
            key=lambda e: order[e["disease_id"]],
        )


@dataclass(frozen=True)
class BenchmarkReport:
    per_round_accuracy: tuple[float, ...]  # length r_max + 1, percent
    top1_accuracy: float
    top2_accuracy: float
    macro_f1: float
    disease_recall: float
    per_patient: tuple[PatientTrace, ...]
    skipped: tuple[tuple[str, str], ...]  # (patient_id, reason)
    config_fingerprint: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_round_accuracy": list(self.per_round_accuracy),
            "top1_accuracy": self.top1_accuracy,
            "top2_accuracy": self.top2_accuracy,
            "macro_f1": self.macro_f1,
            "disease_recall": self.disease_recall,
            "skipped": [list(s) for s in self.skipped],
            "config_fingerprint": self.config_fingerprint,
            "metadata": dict(self.metadata),
            "patients": [
                {
                    "patient_id": p.patient_id,
                    "gold_diseases": list(p.gold_diseases),
                    "trace": p.trace,
                }
                for p in self.per_patient
            ],
        }


def config_fingerprint(config: HarnessConfig, kb: KnowledgeBase) -> str:
    blob = json.dumps(
        {
            "kb": kb_fingerprint(kb),
            "scoring": vars(config.consultation.scoring),
            "psi": vars(config.consultation.psi),
            "r_max": config.consultation.r_max,
            "tau_h": config.consultation.tau_h,
            "arity_cap": config.consultation.arity_cap,
            "router": {
                "flat_slope_eps": config.router.flat_slope_eps,
                "budget": config.router.budget,
                "keywords": {k: list(v) for k, v in sorted(config.router.keywords.items())},
            },
            "seed": config.seed,
            "trend_query": config.trend_query,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _top1_correct(ranking: list[dict[str, Any]], gold: frozenset[str]) -> bool:
    return bool(ranking) and ranking[0]["disease_id"] in gold


def run_benchmark(
    kb: KnowledgeBase, cohort: Sequence[PatientRecord], config: HarnessConfig
) -> BenchmarkReport:
    """Run every patient to termination and attribute accuracy per round.

    Top-1 counts a hit when the rank-1 disease lies in the (possibly
    multi-label) gold set; top-2 when the gold set intersects the top two;
    disease recall is |top-k intersect gold| / |gold| averaged over patients;
    macro F1 averages per-label F1 of the rank-1 predictions over the union
    of gold labels (stated in the report metadata).
    """
    if not cohort:
        raise HarnessError("cohort is empty")
    r_max = config.consultation.r_max
    traces: list[PatientTrace] = []
    skipped: list[tuple[str, str]] = []
    for record in sorted(cohort, key=lambda r: r.patient_id):
        unknown_gold = record.gold_diseases - set(kb.disease_by_id)
        unknown_findings = (record.static_findings | record.absent_findings) - kb.finding_ids
        if unknown_gold or unknown_findings:
            reason = (
                f"unknown gold diseases {sorted(unknown_gold)}"
                if unknown_gold
                else f"unknown findings {sorted(unknown_findings)}"
            )
            skipped.append((record.patient_id, reason))
            continue
        state = run_session(kb, record, config)
        traces.append(
            PatientTrace(
                patient_id=record.patient_id,
                gold_diseases=tuple(sorted(record.gold_diseases)),
                trace=engine.export_trace(state),
            )
        )
    if not traces:
        raise HarnessError("every patient was skipped")

    per_round = []
    for r in range(r_max + 1):
        hits = [
            _top1_correct(p.ranking_at_round(r), frozenset(p.gold_diseases)) for p in traces
        ]
        per_round.append(100.0 * sum(hits) / len(hits))

    top_k = config.consultation.scoring.top_k
    top1 = per_round[-1]
    top2_hits = []
    recalls = []
    predictions: dict[str, str | None] = {}
    for p in traces:
        gold = frozenset(p.gold_diseases)
        final = p.ranking_at_round(r_max)
        top_ids = [e["disease_id"] for e in final]
        predictions[p.patient_id] = top_ids[0] if top_ids else None
        top2_hits.append(bool(gold & set(top_ids[:2])))
        recalls.append(len(gold & set(top_ids[:top_k])) / len(gold) if gold else 0.0)
    top2 = 100.0 * sum(top2_hits) / len(top2_hits)
    recall = float(np.mean(recalls))

    labels = sorted({d for p in traces for d in p.gold_diseases})
    f1s = []
    for label in labels:
        tp = fp = fn = 0
        for p in traces:
            pred = predictions[p.patient_id]
            gold = frozenset(p.gold_diseases)
            if pred == label:
                if label in gold:
                    tp += 1
                else:
                    fp += 1
            elif label in gold:
                fn += 1
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    macro_f1 = float(np.mean(f1s)) if f1s else 0.0

    return BenchmarkReport(
        per_round_accuracy=tuple(per_round),
        top1_accuracy=top1,
        top2_accuracy=top2,
        macro_f1=macro_f1,
        disease_recall=recall,
        per_patient=tuple(traces),
        skipped=tuple(skipped),
        config_fingerprint=config_fingerprint(config, kb),
        metadata={
            "n_patients": len(traces),
            "top_k": top_k,
            "f1_definition": "macro over union of gold labels, rank-1 predictions",
        },
    )


# ---------------------------------------------------------------------------
# round-by-round attribution


@dataclass(frozen=True)
class AttributionRow:
    round: int
    accuracy: float
    gain: float | None
    cumulative_share: float | None


def round_attribution(report: BenchmarkReport | Sequence[float]) -> tuple[AttributionRow, ...]:
    """gain_r = acc_r - acc_{r-1}; share_r = (acc_r - acc_0)/(acc_final - acc_0),
    reported as absent when the total gain is zero."""
    vector = (
        tuple(report.per_round_accuracy)
        if isinstance(report, BenchmarkReport)
        else tuple(float(a) for a in report)
    )
    if not vector:
        raise HarnessError("empty accuracy vector")
    total = vector[-1] - vector[0]
    rows = [AttributionRow(0, vector[0], None, None)]
    for r in range(1, len(vector)):
        gain = vector[r] - vector[r - 1]
        share = (vector[r] - vector[0]) / total if total != 0 else None
        rows.append(AttributionRow(r, vector[r], gain, share))
    return tuple(rows)


# ---------------------------------------------------------------------------
# knowledge-base edge ablation


@dataclass(frozen=True)
class AblationRow:
    subset: str
    fraction: float
    mean_accuracy: float
    std_accuracy: float
    delta_vs_full: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "subset": self.subset,
            "fraction": self.fraction,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "delta_vs_full": self.delta_vs_full,
        }


def kb_ablation_sweep(
    kb: KnowledgeBase,
    fractions: Sequence[float],
    cohort: Sequence[PatientRecord],
    config: HarnessConfig,
    seeds: Sequence[int],
) -> tuple[AblationRow, ...]:
    """For each fraction x seed: subsample edges, rerun the benchmark,
    aggregate mean and std across seeds. The 1.0 row is the unablated run."""
    if not seeds:
        raise HarnessError("need at least one seed")
    full_acc = run_benchmark(kb, cohort, config).top1_accuracy
    rows = []
    for fraction in fractions:
        accs = []
        for seed in seeds:
            sub = subsample_edges(kb, fraction, seed)
            accs.append(run_benchmark(sub, cohort, config).top1_accuracy)
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        label = "Full KB" if fraction == 1.0 else f"{int(round(fraction * 100))}% sample"
        rows.append(
            AblationRow(
                subset=label,
                fraction=float(fraction),
                mean_accuracy=mean,
                std_accuracy=std,
                delta_vs_full=mean - full_acc,
            )
        )
    return tuple(rows)


# ---------------------------------------------------------------------------
# entropy-cutoff calibration


def calibrate_tau_h(
    kb: KnowledgeBase,
    cohort: Sequence[PatientRecord],
    config: HarnessConfig,
    percentile: float = 20.0,
) -> float:
    """Entropy cutoff at the given percentile of terminal entropies over a
    calibration cohort, computed with the entropy stop disabled."""
    disabled = replace(
        config, consultation=replace(config.consultation, tau_h=0.0)
    )
    entropies = []
    for record in sorted(cohort, key=lambda r: r.patient_id):
        state = run_session(kb, record, disabled)
        entropies.append(state.ranked.entropy)
    return float(np.percentile(entropies, percentile))


# ---------------------------------------------------------------------------
# analytically controlled synthetic cohort


def generate_ambiguous_cohort(
    n_pairs: int = 50, seed: int = 0, n_shared: int = 3
) -> tuple[KnowledgeBase, list[PatientRecord]]:
    """Disease pairs that tie on shared findings until one question resolves them.

    Each pair shares ``n_shared`` symptoms and a ubiquitous rising-indicator
    trend edge; each disease additionally requires one pathognomonic
    discriminator the record withholds from the initial evidence. Every pair
    contributes two patients, one per gold side, so round-0 top-1 is decided
    by the deterministic tie-break (exactly half right), while the first
    question asks for the discriminators and the scripted answers split the
    pair decisively.
    """
    rng = np.random.default_rng(seed)
    trend = TrendDef(id="T_rising", estimand="slope", direction="up", description="indicator level")
    symptoms: list[SymptomDef] = []
    diseases: list[Disease] = []
    cohort: list[PatientRecord] = []
    base_day = to_epoch_days("2026-01-01T00:00:00")

    for p in range(n_pairs):
        shared_ids = [f"S{p:03d}_{k}" for k in range(n_shared)]
        disc = {side: f"S{p:03d}_disc{side}" for side in ("A", "B")}
        for sid in shared_ids:
            symptoms.append(SymptomDef(id=sid, name=f"shared finding {sid}"))
        for side in ("A", "B"):
            symptoms.append(SymptomDef(id=disc[side], name=f"discriminator {disc[side]}"))
        for side in ("A", "B"):
            diseases.append(
                Disease(
                    id=f"D{p:03d}{side}",
                    name=f"condition {p:03d}{side}",
                    symptom_edges=tuple(
                        [Edge(target_id=s, phi=1.0) for s in shared_ids]
                        + [Edge(target_id=disc[side], phi=1.0, pathognomonic=True)]
                    ),
                    trend_edges=(Edge(target_id="T_rising", phi=1.0),),
                    required=frozenset({disc[side]}),
                )
            )
        for patient_idx, gold_side in ((2 * p, "A"), (2 * p + 1, "B")):
            rival_side = "B" if gold_side == "A" else "A"
            t0 = base_day + float(rng.integers(0, 30))
            stream_t = [t0 + 10.0 * i for i in range(8)]
            stream_y = [1.0 + 0.05 * (t - t0) for t in stream_t]
            cohort.append(
                PatientRecord(
                    patient_id=f"patient_{patient_idx:04d}",
                    gold_diseases=frozenset({f"D{p:03d}{gold_side}"}),
                    symptom_timelines={disc[gold_side]: ((t0 + 40.0, SeverityLevel.SEVERE),)},
                    indicator_streams={
                        f"I{patient_idx:03d}": TimeSeries(np.array(stream_t), np.array(stream_y))
                    },
                    static_findings=frozenset(shared_ids),
                    absent_findings=frozenset({disc[rival_side]}),
                    attributes={"age_band": "40-60", "sex": "F" if patient_idx % 2 else "M"},
                )
            )
    kb = build_kb(diseases, symptoms, [trend])
    return kb, cohort


def ambiguous_cohort_config(r_max: int = 3, seed: int = 0) -> HarnessConfig:
    """Scoring configuration under which the generated cohort is analytically
    controlled: the miss penalty stays in the log's domain for every weight
    in the generated store (gamma * max w < 1)."""
    from .scoring import ScoringParams

    return HarnessConfig(
        consultation=ConsultationConfig(
            scoring=ScoringParams(gamma=0.2),
            r_max=r_max,
            tau_h=0.05,
            arity_cap=3,
        ),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# report files


def report_to_csv(report: BenchmarkReport) -> str:
    lines = ["round,accuracy"]
    for r, acc in enumerate(report.per_round_accuracy):
        lines.append(f"{r},{acc!r}")
    return "\n".join(lines) + "\n"


def save_report(report: BenchmarkReport, json_path: str | Path, csv_path: str | Path | None = None) -> None:
    Path(json_path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    if csv_path is not None:
        Path(csv_path).write_text(report_to_csv(report), encoding="utf-8")
