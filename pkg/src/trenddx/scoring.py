"""Disease energies, gated softmax masses, entropy, and gap priorities.

The math core: each candidate disease gets an additive log-scale energy from
the evidence, an energy gate selects survivors, a softmax over survivors
yields ranking masses (explicitly not calibrated probabilities), and missing
required findings of the top candidates become prioritized gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .kb import KnowledgeBase


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class EvidenceSet:
    """Present findings, explicitly denied findings, and asked-but-unresolved ones."""

    positive: frozenset[str] = frozenset()
    negative: frozenset[str] = frozenset()
    asked_unresolved: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "positive", frozenset(self.positive))
        object.__setattr__(self, "negative", frozenset(self.negative))
        object.__setattr__(self, "asked_unresolved", frozenset(self.asked_unresolved))
        if self.positive & self.negative:
            raise ScoringError("a finding cannot be both present and denied")
        overlap = self.asked_unresolved & (self.positive | self.negative)
        if overlap:
            raise ScoringError(f"unresolved findings overlap resolved ones: {sorted(overlap)}")

    @property
    def touched(self) -> frozenset[str]:
        return self.positive | self.negative | self.asked_unresolved

    def extended(
        self,
        add_positive: Iterable[str] = (),
        add_negative: Iterable[str] = (),
        add_unresolved: Iterable[str] = (),
    ) -> "EvidenceSet":
        """New evidence with the additions applied; later answers win over 'unknown'."""
        pos = set(self.positive) | set(add_positive)
        neg = set(self.negative) | set(add_negative)
        unres = (set(self.asked_unresolved) | set(add_unresolved)) - pos - neg
        return EvidenceSet(frozenset(pos), frozenset(neg), frozenset(unres))


@dataclass(frozen=True)
class ScoringParams:
    gamma: float = 0.5
    energy_gate: float = 0.3
    mass_gate: float = 0.9
    top_k: int = 5
    penalty_clamp_eps: float = 1e-6

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0):
            raise ScoringError("gamma must be in [0, 1]")
        if not (0.0 < self.mass_gate <= 1.0):
            raise ScoringError("mass_gate must be in (0, 1]")
        if self.top_k < 1:
            raise ScoringError("top_k must be >= 1")
        if not (0.0 < self.penalty_clamp_eps < 1.0):
            raise ScoringError("penalty_clamp_eps must be in (0, 1)")


@dataclass(frozen=True)
class PsiConfig:
    """Multiplicative boosts for gap priorities."""

    base: float = 1.0
    pathognomonic: float = 2.0
    tsa_aligned: float = 1.5


def validate_evidence(kb: KnowledgeBase, evidence: EvidenceSet) -> None:
    unknown = evidence.touched - kb.finding_ids
    if unknown:
        raise ScoringError(f"evidence references unknown finding ids: {sorted(unknown)}")


def disease_energy(
    kb: KnowledgeBase,
    idf: Mapping[str, float],
    evidence: EvidenceSet,
    disease_id: str,
    params: ScoringParams,
) -> float:
    """Additive energy of one disease against the evidence.

    Matched findings add ln(w_j) + ln(phi); a zero-weight match contributes
    only its ln(phi) term (the rarity factor carries no information when the
    finding is ubiquitous). Every other linked finding, including denied and
    asked-but-unresolved ones, pays the miss penalty ln(1 - gamma * w_j) with
    the product clamped at 1 - eps so rare findings stay finite.
    """
    disease = kb.disease_by_id.get(disease_id)
    if disease is None:
        raise ScoringError(f"unknown disease id {disease_id!r}")
    total = 0.0
    for edge in disease.edges:
        w = idf[edge.target_id]
        if edge.target_id in evidence.positive:
            if w > 0.0:
                total += math.log(w)
            total += math.log(edge.phi)
        else:
            total += math.log(1.0 - min(params.gamma * w, 1.0 - params.penalty_clamp_eps))
    return total


def score_candidates(
    kb: KnowledgeBase,
    evidence: EvidenceSet,
    params: ScoringParams,
    candidates: Iterable[str],
) -> dict[str, float]:
    """Energies for each candidate, in sorted-id order for determinism."""
    return {
        did: disease_energy(kb, kb.idf, evidence, did, params)
        for did in sorted(candidates)
    }


@dataclass(frozen=True)
class CandidateEntry:
    disease_id: str
    energy: float
    mass: float


@dataclass(frozen=True)
class RankedCandidates:
    """Scored candidates; masses live on survivors only and sum to one there."""

    entries: tuple[CandidateEntry, ...]
    entropy: float
    survivors: tuple[str, ...]  # sorted by mass descending, ties by id

    @property
    def is_empty(self) -> bool:
        return not self.survivors

    @property
    def max_mass(self) -> float:
        return self.entries[0].mass if self.survivors else 0.0

    def top(self, k: int) -> tuple[CandidateEntry, ...]:
        by_id = {e.disease_id: e for e in self.entries}
        return tuple(by_id[d] for d in self.survivors[:k])

    def mass_of(self, disease_id: str) -> float:
        for e in self.entries:
            if e.disease_id == disease_id:
                return e.mass
        raise ScoringError(f"{disease_id!r} was not scored")


def rank_candidates(energies: Mapping[str, float], params: ScoringParams) -> RankedCandidates:
    """Gate by energy, then softmax-normalize the survivors.

    The gate precedes the softmax: only diseases with energy >= the gate get
    mass, computed with max-subtraction for stability. With no survivors the
    result is flagged empty (entropy 0) and the caller's low-coverage /
    uncertainty handling takes over.
    """
    if not energies:
        raise ScoringError("cannot rank an empty energy map")
    ids = sorted(energies)
    survivor_ids = [d for d in ids if energies[d] >= params.energy_gate]
    masses: dict[str, float] = {d: 0.0 for d in ids}
    entropy = 0.0
    if survivor_ids:
        peak = max(energies[d] for d in survivor_ids)
        weights = {d: math.exp(energies[d] - peak) for d in survivor_ids}
        z = sum(weights[d] for d in survivor_ids)
        for d in survivor_ids:
            masses[d] = weights[d] / z
        entropy = -sum(
            masses[d] * math.log(masses[d]) for d in survivor_ids if masses[d] > 0.0
        )
    order = sorted(ids, key=lambda d: (-masses[d], d))
    entries = tuple(CandidateEntry(d, float(energies[d]), masses[d]) for d in order)
    survivors = tuple(d for d in order if d in set(survivor_ids))
    return RankedCandidates(entries=entries, entropy=float(entropy), survivors=survivors)


def posterior_entropy(masses: Iterable[float]) -> float:
    """Shannon entropy in nats with 0 ln 0 := 0; input must sum to ~1."""
    vals = [float(m) for m in masses]
    if any(m < 0 for m in vals):
        raise ScoringError("masses must be nonnegative")
    if abs(sum(vals) - 1.0) > 1e-9:
        raise ScoringError(f"masses sum to {sum(vals)}, not 1")
    return -sum(m * math.log(m) for m in vals if m > 0.0)


@dataclass(frozen=True)
class GapContribution:
    disease_id: str
    psi: float
    mass: float


@dataclass(frozen=True)
class Gap:
    """A required-but-unresolved finding of a top candidate."""

    finding_id: str
    priority: float
    requiring: tuple[GapContribution, ...]

    def recompute_priority(self) -> float:
        return sum(c.psi * c.mass for c in self.requiring)


def gap_priority(
    kb: KnowledgeBase,
    ranked: RankedCandidates,
    evidence: EvidenceSet,
    psi: PsiConfig,
    top_k: int = 5,
    predicate_estimands: frozenset[str] = frozenset(),
) -> tuple[Gap, ...]:
    """Mass-weighted priorities for the unresolved required findings of the
    top-k survivors.

    pi(g) = sum over top-k diseases requiring g of mass * psi(g, d), where psi
    multiplies the base by the pathognomonic boost when the edge is marked so
    and by the alignment boost when g is a trend finding whose estimand family
    appeared among the emitted predicates. Findings already present, denied,
    or previously asked never re-enter. Sorted by priority descending, ties by
    finding id.
    """
    if not ranked.entries:
        raise ScoringError("gap enumeration needs a non-empty ranking")
    excluded = evidence.touched
    acc: dict[str, list[GapContribution]] = {}
    for entry in ranked.top(top_k):
        disease = kb.disease_by_id[entry.disease_id]
        for g in sorted(disease.required):
            if g in excluded:
                continue
            edge = disease.edge_for(g)
            psi_val = psi.base
            if edge is not None and edge.pathognomonic:
                psi_val *= psi.pathognomonic
            trend = kb.trend_by_id.get(g)
            if trend is not None and trend.estimand in predicate_estimands:
                psi_val *= psi.tsa_aligned
            acc.setdefault(g, []).append(
                GapContribution(disease_id=entry.disease_id, psi=psi_val, mass=entry.mass)
            )
    gaps = [
        Gap(finding_id=g, priority=sum(c.psi * c.mass for c in contribs), requiring=tuple(contribs))
        for g, contribs in acc.items()
    ]
    gaps.sort(key=lambda gap: (-gap.priority, gap.finding_id))
    return tuple(gaps)
