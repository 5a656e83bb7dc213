"""Bounded multi-turn consultation: gaps become questions, answers become
evidence, and the same energy objective re-ranks after every turn.

Sessions are immutable state values; each step returns a new state. A session
terminates on the first of: the mass gate (top mass reaches theta), the
entropy band (entropy drops below tau_h), the round cap, or an empty gap
queue. Evidence that matches nothing in the knowledge base exits immediately
with an explicit low-coverage terminal instead of fabricating a ranking.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

from .kb import KnowledgeBase, candidate_set, coverage_check
from .predicates import TrendPredicate
from .scoring import (
    EvidenceSet,
    Gap,
    PsiConfig,
    RankedCandidates,
    ScoringParams,
    gap_priority,
    rank_candidates,
    score_candidates,
    validate_evidence,
)
from .series import SEVERITY_NAMES

# terminal reasons
MASS_GATE = "mass_gate"
ENTROPY_BAND = "entropy_band"
ROUNDS_EXHAUSTED = "rounds_exhausted"
NO_GAPS = "no_gaps"
LOW_KB_COVERAGE = "low_kb_coverage"

DEFAULT_TEMPLATES: Mapping[str, str] = {
    "symptom": "Do you have {name}?",
    "trend": "Has {signal} shown {direction} change?",
}

_DIRECTION_WORDS = {"up": "upward", "down": "downward", "flat": "flat"}

NEGATION_TOKENS = frozenset({"no", "not", "never", "without", "denies", "denied", "none"})


class ConsultationError(ValueError):
    pass


class AnswerRejected(ConsultationError):
    """The reply addressed no pending gap; the round does not advance."""


class SessionTerminated(ConsultationError):
    pass


@dataclass(frozen=True)
class ConsultationConfig:
    scoring: ScoringParams = field(default_factory=ScoringParams)
    psi: PsiConfig = field(default_factory=PsiConfig)
    r_max: int = 6
    tau_h: float | str = 0.05  # entropy cutoff; "auto" must be calibrated first
    arity_cap: int = 3
    templates: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    def __post_init__(self) -> None:
        if self.r_max < 1:
            raise ConsultationError("r_max must be >= 1")
        if self.arity_cap < 1:
            raise ConsultationError("arity_cap must be >= 1")

    def concrete_tau_h(self) -> float:
        if isinstance(self.tau_h, str):
            raise ConsultationError(
                "tau_h is 'auto'; calibrate it over a cohort before starting sessions"
            )
        return float(self.tau_h)


@dataclass(frozen=True)
class TerminalReason:
    reason: str
    uncertainty_flag: bool


@dataclass(frozen=True)
class GapPrompt:
    finding_id: str
    clause: str
    kind: str  # "symptom" | "trend"
    allows_severity: bool


@dataclass(frozen=True)
class Question:
    gaps: tuple[Gap, ...]
    text: str
    prompts: tuple[GapPrompt, ...]

    @property
    def gap_ids(self) -> tuple[str, ...]:
        return tuple(g.finding_id for g in self.gaps)


@dataclass(frozen=True)
class EvidenceDelta:
    add_positive: tuple[str, ...] = ()
    add_negative: tuple[str, ...] = ()
    add_unresolved: tuple[str, ...] = ()
    severities: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    question: Question
    answer: Any
    delta: EvidenceDelta
    ranked: RankedCandidates
    gaps: tuple[Gap, ...]


@dataclass(frozen=True)
class ConsultationState:
    round: int
    evidence: EvidenceSet
    ranked: RankedCandidates
    gap_queue: tuple[Gap, ...]
    pending_question: Question | None
    log: tuple[RoundRecord, ...]
    terminal: TerminalReason | None
    initial_evidence: EvidenceSet
    predicates: tuple[TrendPredicate, ...]
    round0_ranked: RankedCandidates
    round0_gaps: tuple[Gap, ...]

    @property
    def is_terminal(self) -> bool:
        return self.terminal is not None


_EMPTY_RANKING = RankedCandidates(entries=(), entropy=0.0, survivors=())


def _predicate_estimands(predicates: Sequence[TrendPredicate]) -> frozenset[str]:
    return frozenset(p.estimand for p in predicates)


def _score_and_rank(
    kb: KnowledgeBase, evidence: EvidenceSet, config: ConsultationConfig
) -> RankedCandidates:
    candidates = candidate_set(kb, evidence.positive)
    if not candidates:
        return _EMPTY_RANKING
    energies = score_candidates(kb, evidence, config.scoring, candidates)
    return rank_candidates(energies, config.scoring)


def stopping_check(
    ranked: RankedCandidates,
    gap_queue: Sequence[Gap],
    round_: int,
    config: ConsultationConfig,
) -> TerminalReason | None:
    """Stop criteria in order: mass gate, entropy band, round cap, empty queue."""
    theta = config.scoring.mass_gate
    uncertain = ranked.max_mass < theta
    if ranked.max_mass >= theta:
        return TerminalReason(MASS_GATE, uncertainty_flag=False)
    if ranked.entropy < config.concrete_tau_h():
        return TerminalReason(ENTROPY_BAND, uncertainty_flag=uncertain)
    if round_ >= config.r_max:
        return TerminalReason(ROUNDS_EXHAUSTED, uncertainty_flag=uncertain)
    if not gap_queue:
        return TerminalReason(NO_GAPS, uncertainty_flag=uncertain)
    return None


def top_gaps(
    kb: KnowledgeBase,
    ranked: RankedCandidates,
    evidence: EvidenceSet,
    config: ConsultationConfig,
    predicate_estimands: frozenset[str] = frozenset(),
) -> tuple[Gap, ...]:
    """Full prioritized gap queue; previously asked findings never reappear
    because every asked finding holds a disposition in the evidence."""
    if ranked.is_empty:
        return ()
    return gap_priority(
        kb,
        ranked,
        evidence,
        config.psi,
        top_k=config.scoring.top_k,
        predicate_estimands=predicate_estimands,
    )


def render_question(
    gaps: Sequence[Gap], kb: KnowledgeBase, templates: Mapping[str, str] | None = None
) -> Question:
    """Deterministic template fill, one clause per gap, in priority order."""
    templates = templates or DEFAULT_TEMPLATES
    if not gaps:
        raise ConsultationError("cannot render a question with no gaps")
    prompts = []
    for gap in gaps:
        fid = gap.finding_id
        symptom = kb.symptom_by_id.get(fid)
        if symptom is not None:
            tpl = templates.get("symptom")
            if tpl is None:
                raise ConsultationError("missing template for symptom findings")
            prompts.append(
                GapPrompt(fid, tpl.format(name=symptom.name), kind="symptom", allows_severity=True)
            )
            continue
        trend = kb.trend_by_id.get(fid)
        if trend is not None:
            tpl = templates.get("trend")
            if tpl is None:
                raise ConsultationError("missing template for trend findings")
            signal = trend.description or trend.id
            clause = tpl.format(signal=signal, direction=_DIRECTION_WORDS[trend.direction])
            prompts.append(GapPrompt(fid, clause, kind="trend", allows_severity=False))
            continue
        raise ConsultationError(f"gap {fid!r} is not a declared finding")
    text = " ".join(p.clause for p in prompts)
    return Question(gaps=tuple(gaps), text=text, prompts=tuple(prompts))


def _finding_phrases(kb: KnowledgeBase, fid: str) -> tuple[str, ...]:
    symptom = kb.symptom_by_id.get(fid)
    if symptom is not None:
        return (symptom.name, *symptom.synonyms)
    trend = kb.trend_by_id.get(fid)
    if trend is not None and trend.description:
        return (trend.description, trend.id)
    return (fid,)


def parse_answer(question: Question, answer: Any, kb: KnowledgeBase) -> EvidenceDelta:
    """Map a structured or free-text reply onto the pending gaps.

    Structured replies are lists of {gap_id, value, severity?}. Free text is
    matched against finding names and synonyms; a negation token within the
    three preceding tokens flips polarity, and a severity word in the same
    window attaches to positive findings. Gaps untouched by the reply default
    to asked-unresolved. A reply addressing no pending gap is rejected.
    """
    gap_ids = set(question.gap_ids)
    positive: list[str] = []
    negative: list[str] = []
    severities: dict[str, str] = {}

    if isinstance(answer, Mapping) and "answers" in answer:
        answer = answer["answers"]

    if isinstance(answer, Sequence) and not isinstance(answer, str):
        touched = set()
        for item in answer:
            fid = item.get("gap_id")
            value = str(item.get("value", "")).lower()
            if fid not in gap_ids:
                raise AnswerRejected(f"answer references unknown gap {fid!r}")
            if value not in ("yes", "no", "unknown"):
                raise AnswerRejected(f"answer value must be yes/no/unknown, got {value!r}")
            touched.add(fid)
            if value == "yes":
                positive.append(fid)
                sev = item.get("severity")
                if sev is not None:
                    severities[fid] = _canonical_severity(str(sev))
            elif value == "no":
                negative.append(fid)
        if not touched:
            raise AnswerRejected("answer references no pending gap")
    elif isinstance(answer, str):
        stripped = answer.strip().lower()
        if stripped in ("yes", "no", "unknown"):
            for fid in question.gap_ids:
                if stripped == "yes":
                    positive.append(fid)
                elif stripped == "no":
                    negative.append(fid)
        else:
            tokens = [(m.group(0), m.start()) for m in re.finditer(r"[a-z']+", stripped)]
            matched_any = False
            for fid in question.gap_ids:
                hit = _match_phrase(stripped, tokens, _finding_phrases(kb, fid))
                if hit is None:
                    continue
                matched_any = True
                negated, severity = hit
                if negated:
                    negative.append(fid)
                else:
                    positive.append(fid)
                    if severity is not None:
                        severities[fid] = severity
            if not matched_any:
                raise AnswerRejected("answer references no pending gap")
    else:
        raise AnswerRejected(f"unsupported answer payload {type(answer).__name__}")

    unresolved = [fid for fid in question.gap_ids if fid not in positive and fid not in negative]
    return EvidenceDelta(
        add_positive=tuple(positive),
        add_negative=tuple(negative),
        add_unresolved=tuple(unresolved),
        severities=severities,
    )


def _canonical_severity(name: str) -> str:
    for label in SEVERITY_NAMES:
        if label.lower() == name.strip().lower():
            return label
    raise AnswerRejected(f"unknown severity {name!r}")


def _match_phrase(
    text: str, tokens: list[tuple[str, int]], phrases: Iterable[str]
) -> tuple[bool, str | None] | None:
    """Find a phrase in the text; return (negated, severity) or None.

    ``tokens`` carries (token, char offset) so the negation/severity window is
    anchored at the actual match position, not the first lookalike token.
    """
    severity_words = {label.lower(): label for label in SEVERITY_NAMES}
    for phrase in phrases:
        p = phrase.lower()
        m = re.search(rf"(?<!\w){re.escape(p)}(?!\w)", text)
        if m is None:
            continue
        idx = sum(1 for _, pos in tokens if pos < m.start())
        window = [tok for tok, _ in tokens[max(0, idx - 3) : idx]]
        negated = any(tok in NEGATION_TOKENS or tok.endswith("n't") for tok in window)
        severity = None
        for tok in window:
            if tok in severity_words:
                severity = severity_words[tok]
        return negated, severity
    return None


def _prepare_question(
    kb: KnowledgeBase, gaps: Sequence[Gap], config: ConsultationConfig
) -> Question | None:
    capped = tuple(gaps[: config.arity_cap])
    if not capped:
        return None
    return render_question(capped, kb, config.templates)


def start_session(
    kb: KnowledgeBase,
    evidence: EvidenceSet,
    predicates: Sequence[TrendPredicate],
    config: ConsultationConfig,
) -> ConsultationState:
    """Open a session: match predicates, check coverage, rank, ask round one.

    Matched predicates contribute their trend findings to the positive
    evidence. When the combined evidence activates no disease (no symptom
    links and no predicate matched a trend frame), the session terminates
    immediately with the low-coverage flag rather than scoring nothing.
    """
    config.concrete_tau_h()  # fail fast on uncalibrated "auto"
    validate_evidence(kb, evidence)
    coverage_check(kb, predicates)  # validates the predicate set against the schema
    matched_predicates = []
    trend_findings: set[str] = set()
    for p in predicates:
        ids = kb.matching_trend_ids(p)
        matched_predicates.append(p.with_source(ids[0] if ids else None))
        trend_findings.update(ids)
    full_evidence = evidence.extended(add_positive=trend_findings)

    # low coverage: neither a symptom nor a matched trend frame activates any
    # disease, so there is nothing to rank and nothing to ask about
    if not candidate_set(kb, full_evidence.positive):
        terminal = TerminalReason(LOW_KB_COVERAGE, uncertainty_flag=True)
        return ConsultationState(
            round=0,
            evidence=full_evidence,
            ranked=_EMPTY_RANKING,
            gap_queue=(),
            pending_question=None,
            log=(),
            terminal=terminal,
            initial_evidence=full_evidence,
            predicates=tuple(matched_predicates),
            round0_ranked=_EMPTY_RANKING,
            round0_gaps=(),
        )

    ranked = _score_and_rank(kb, full_evidence, config)
    estimands = _predicate_estimands(matched_predicates)
    gaps = top_gaps(kb, ranked, full_evidence, config, estimands)
    terminal = stopping_check(ranked, gaps, 0, config)
    question = None if terminal else _prepare_question(kb, gaps, config)
    return ConsultationState(
        round=0,
        evidence=full_evidence,
        ranked=ranked,
        gap_queue=gaps,
        pending_question=question,
        log=(),
        terminal=terminal,
        initial_evidence=full_evidence,
        predicates=tuple(matched_predicates),
        round0_ranked=ranked,
        round0_gaps=gaps,
    )


def step(
    kb: KnowledgeBase,
    state: ConsultationState,
    answer: Any,
    config: ConsultationConfig,
) -> ConsultationState:
    """Apply one answered round: parse, re-score, log, check stopping."""
    if state.is_terminal:
        raise SessionTerminated(f"session already terminal ({state.terminal.reason})")
    if state.pending_question is None:
        raise ConsultationError("no pending question")
    delta = parse_answer(state.pending_question, answer, kb)
    evidence = state.evidence.extended(
        add_positive=delta.add_positive,
        add_negative=delta.add_negative,
        add_unresolved=delta.add_unresolved,
    )
    round_ = state.round + 1
    ranked = _score_and_rank(kb, evidence, config)
    estimands = _predicate_estimands(state.predicates)
    gaps = top_gaps(kb, ranked, evidence, config, estimands)
    record = RoundRecord(
        round=round_,
        question=state.pending_question,
        answer=answer,
        delta=delta,
        ranked=ranked,
        gaps=gaps,
    )
    terminal = stopping_check(ranked, gaps, round_, config)
    question = None if terminal else _prepare_question(kb, gaps, config)
    return replace(
        state,
        round=round_,
        evidence=evidence,
        ranked=ranked,
        gap_queue=gaps,
        pending_question=question,
        log=state.log + (record,),
        terminal=terminal,
    )


# ---------------------------------------------------------------------------
# audit trail


def _ranked_snapshot(ranked: RankedCandidates) -> dict[str, Any]:
    return {
        "entries": [
            {"disease_id": e.disease_id, "energy": e.energy, "mass": e.mass}
            for e in ranked.entries
        ],
        "entropy": ranked.entropy,
        "survivors": list(ranked.survivors),
    }


def _gaps_snapshot(gaps: Sequence[Gap]) -> list[dict[str, Any]]:
    return [
        {
            "finding_id": g.finding_id,
            "priority": g.priority,
            "requiring": [
                {"disease_id": c.disease_id, "psi": c.psi, "mass": c.mass} for c in g.requiring
            ],
        }
        for g in gaps
    ]


def _evidence_snapshot(evidence: EvidenceSet) -> dict[str, Any]:
    return {
        "positive": sorted(evidence.positive),
        "negative": sorted(evidence.negative),
        "asked_unresolved": sorted(evidence.asked_unresolved),
    }


def _question_snapshot(question: Question | None) -> dict[str, Any] | None:
    if question is None:
        return None
    return {
        "text": question.text,
        "gaps": [
            {
                "finding_id": p.finding_id,
                "clause": p.clause,
                "kind": p.kind,
                "allows_severity": p.allows_severity,
                "priority": g.priority,
            }
            for g, p in zip(question.gaps, question.prompts)
        ],
    }


def export_trace(state: ConsultationState) -> dict[str, Any]:
    """Machine-readable audit trail: one record per round plus the opening
    ranking, mirroring exactly what replay recomputes."""
    return {
        "initial_evidence": _evidence_snapshot(state.initial_evidence),
        "predicates": [p.to_dict() for p in state.predicates],
        "round0": {
            "ranking": _ranked_snapshot(state.round0_ranked),
            "gaps": _gaps_snapshot(state.round0_gaps),
        },
        "rounds": [
            {
                "round": rec.round,
                "question": _question_snapshot(rec.question),
                "answer": rec.answer,
                "delta": {
                    "add_positive": list(rec.delta.add_positive),
                    "add_negative": list(rec.delta.add_negative),
                    "add_unresolved": list(rec.delta.add_unresolved),
                    "severities": dict(rec.delta.severities),
                },
                "ranking": _ranked_snapshot(rec.ranked),
                "gaps": _gaps_snapshot(rec.gaps),
            }
            for rec in state.log
        ],
        "terminal": None
        if state.terminal is None
        else {"reason": state.terminal.reason, "uncertainty_flag": state.terminal.uncertainty_flag},
        "final_round": state.round,
    }


def trace_json(state: ConsultationState) -> str:
    return json.dumps(export_trace(state), sort_keys=True)


class ReplayMismatch(ConsultationError):
    pass


def replay_trace(kb: KnowledgeBase, state: ConsultationState, config: ConsultationConfig) -> None:
    """Re-run the scorer over the recorded evidence prefixes and demand every
    ranking snapshot reproduces byte-exactly."""
    evidence = state.initial_evidence
    recomputed = _score_and_rank(kb, evidence, config)
    if json.dumps(_ranked_snapshot(recomputed), sort_keys=True) != json.dumps(
        _ranked_snapshot(state.round0_ranked), sort_keys=True
    ):
        raise ReplayMismatch("round-0 ranking does not replay")
    for rec in state.log:
        evidence = evidence.extended(
            add_positive=rec.delta.add_positive,
            add_negative=rec.delta.add_negative,
            add_unresolved=rec.delta.add_unresolved,
        )
        recomputed = _score_and_rank(kb, evidence, config)
        a = json.dumps(_ranked_snapshot(recomputed), sort_keys=True)
        b = json.dumps(_ranked_snapshot(rec.ranked), sort_keys=True)
        if a != b:
            raise ReplayMismatch(f"round {rec.round} ranking does not replay")
