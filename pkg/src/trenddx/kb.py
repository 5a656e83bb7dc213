"""Symptom/trend/disease knowledge base: loading, validation, IDF weights, ablation.

The store is immutable after load and safe to share across threads.
Symptoms and trend definitions are treated uniformly as "findings": both get
rarity weights from the same inverse-frequency formula, computed over symptom
edges and trend edges respectively.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .predicates import TrendPredicate
from .predicates import DIRECTIONS as _DIRECTIONS
from .predicates import ESTIMANDS as _ESTIMANDS

SCHEMA_VERSION = "kb/1"
TEMPORAL_QUALIFIERS = ("acute", "subacute", "chronic", "unspecified")


class KbError(ValueError):
    """Raised when a knowledge-base file or value violates the schema."""


@dataclass(frozen=True)
class Edge:
    target_id: str
    phi: float
    temporal_qualifier: str = "unspecified"
    pathognomonic: bool = False

    def __post_init__(self) -> None:
        if not (0.5 <= self.phi <= 1.0):
            raise KbError(f"edge to {self.target_id!r}: phi={self.phi} outside [0.5, 1]")
        if self.temporal_qualifier not in TEMPORAL_QUALIFIERS:
            raise KbError(
                f"edge to {self.target_id!r}: unknown temporal qualifier {self.temporal_qualifier!r}"
            )


@dataclass(frozen=True)
class SymptomDef:
    id: str
    name: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrendDef:
    """A trend frame: which estimand/direction pair counts as this finding."""

    id: str
    estimand: str
    direction: str
    description: str = ""

    def __post_init__(self) -> None:
        if self.estimand not in _ESTIMANDS:
            raise KbError(f"trend {self.id!r}: unknown estimand {self.estimand!r}")
        if self.direction not in _DIRECTIONS:
            raise KbError(f"trend {self.id!r}: unknown direction {self.direction!r}")


@dataclass(frozen=True)
class Disease:
    id: str
    name: str
    symptom_edges: tuple[Edge, ...] = ()
    trend_edges: tuple[Edge, ...] = ()
    required: frozenset[str] = frozenset()

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self.symptom_edges + self.trend_edges

    def edge_for(self, finding_id: str) -> Edge | None:
        for e in self.edges:
            if e.target_id == finding_id:
                return e
        return None


@dataclass(frozen=True)
class KnowledgeBase:
    diseases: tuple[Disease, ...]
    symptoms: tuple[SymptomDef, ...]
    trends: tuple[TrendDef, ...]
    idf: Mapping[str, float]
    warnings: tuple[str, ...] = field(default_factory=tuple, compare=False)

    # -- derived lookups (cached, instances are immutable) ------------------

    @cached_property
    def disease_by_id(self) -> Mapping[str, Disease]:
        return {d.id: d for d in self.diseases}

    @cached_property
    def symptom_by_id(self) -> Mapping[str, SymptomDef]:
        return {s.id: s for s in self.symptoms}

    @cached_property
    def trend_by_id(self) -> Mapping[str, TrendDef]:
        return {t.id: t for t in self.trends}

    @cached_property
    def finding_ids(self) -> frozenset[str]:
        return frozenset(self.symptom_by_id) | frozenset(self.trend_by_id)

    @cached_property
    def diseases_by_finding(self) -> Mapping[str, tuple[str, ...]]:
        acc: dict[str, list[str]] = {}
        for d in self.diseases:
            for e in d.edges:
                acc.setdefault(e.target_id, []).append(d.id)
        return {k: tuple(v) for k, v in acc.items()}

    def matching_trend_ids(self, predicate: TrendPredicate) -> tuple[str, ...]:
        """Trend frames matched by a predicate: exact (estimand, direction) match."""
        return tuple(
            t.id
            for t in self.trends
            if t.estimand == predicate.estimand and t.direction == predicate.direction
        )


def compute_idf(
    diseases: Sequence[Disease],
    symptom_ids: Iterable[str],
    trend_ids: Iterable[str],
) -> dict[str, float]:
    """Rarity weight w_j = ln((|D| + 1) / (n_j + 1)) for every finding.

    n_j counts diseases with an edge to finding j; the +1 offsets keep the
    log defined at zero counts. Symptom counts come from symptom edges,
    trend counts from trend edges.
    """
    n_d = len(diseases)
    sym_counts: dict[str, int] = {s: 0 for s in symptom_ids}
    trend_counts: dict[str, int] = {t: 0 for t in trend_ids}
    for d in diseases:
        for e in d.symptom_edges:
            if e.target_id in sym_counts:
                sym_counts[e.target_id] += 1
        for e in d.trend_edges:
            if e.target_id in trend_counts:
                trend_counts[e.target_id] += 1
    weights = {}
    for fid, n_j in {**sym_counts, **trend_counts}.items():
        weights[fid] = math.log((n_d + 1) / (n_j + 1))
    return weights


def build_kb(
    diseases: Sequence[Disease],
    symptoms: Sequence[SymptomDef],
    trends: Sequence[TrendDef] = (),
) -> KnowledgeBase:
    """Validate entities, wire the IDF table, and freeze the store."""
    warnings: list[str] = []
    for label, ids in (
        ("disease", [d.id for d in diseases]),
        ("symptom", [s.id for s in symptoms]),
        ("trend", [t.id for t in trends]),
    ):
        seen: set[str] = set()
        for i in ids:
            if i in seen:
                raise KbError(f"duplicate {label} id {i!r}")
            seen.add(i)
    symptom_ids = {s.id for s in symptoms}
    trend_ids = {t.id for t in trends}
    if symptom_ids & trend_ids:
        raise KbError(f"finding ids shared between symptoms and trends: {sorted(symptom_ids & trend_ids)}")
    for d in diseases:
        targets: set[str] = set()
        for e in d.symptom_edges:
            if e.target_id not in symptom_ids:
                raise KbError(f"disease {d.id!r}: symptom edge to undeclared id {e.target_id!r}")
            if e.target_id in targets:
                raise KbError(f"disease {d.id!r}: duplicate edge to {e.target_id!r}")
            targets.add(e.target_id)
        for e in d.trend_edges:
            if e.target_id not in trend_ids:
                raise KbError(f"disease {d.id!r}: trend edge to undeclared id {e.target_id!r}")
            if e.target_id in targets:
                raise KbError(f"disease {d.id!r}: duplicate edge to {e.target_id!r}")
            targets.add(e.target_id)
        missing_req = set(d.required) - targets
        if missing_req:
            raise KbError(f"disease {d.id!r}: required findings without edges: {sorted(missing_req)}")
        if not targets:
            warnings.append(f"disease {d.id!r} has no edges")
    idf = compute_idf(diseases, sorted(symptom_ids), sorted(trend_ids))
    return KnowledgeBase(
        diseases=tuple(diseases),
        symptoms=tuple(symptoms),
        trends=tuple(trends),
        idf=idf,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# file format (UTF-8 JSON, schema "kb/1")


def _edge_from_dict(data: Mapping[str, Any], where: str) -> Edge:
    try:
        return Edge(
            target_id=data["target_id"],
            phi=float(data["phi"]),
            temporal_qualifier=data.get("temporal_qualifier", "unspecified"),
            pathognomonic=bool(data.get("pathognomonic", False)),
        )
    except KeyError as exc:
        raise KbError(f"{where}: edge missing field {exc}") from None


def kb_from_dict(data: Mapping[str, Any]) -> KnowledgeBase:
    if data.get("schema") != SCHEMA_VERSION:
        raise KbError(f"missing or unsupported schema field (expected {SCHEMA_VERSION!r})")
    try:
        symptoms = tuple(
            SymptomDef(id=s["id"], name=s["name"], synonyms=tuple(s.get("synonyms", ())))
            for s in data.get("symptoms", ())
        )
        trends = tuple(
            TrendDef(
                id=t["id"],
                estimand=t["estimand"],
                direction=t["direction"],
                description=t.get("description", ""),
            )
            for t in data.get("trends", ())
        )
        diseases = []
        for d in data.get("diseases", ()):
            diseases.append(
                Disease(
                    id=d["id"],
                    name=d["name"],
                    symptom_edges=tuple(
                        _edge_from_dict(e, f"disease {d.get('id')!r}") for e in d.get("symptom_edges", ())
                    ),
                    trend_edges=tuple(
                        _edge_from_dict(e, f"disease {d.get('id')!r}") for e in d.get("trend_edges", ())
                    ),
                    required=frozenset(d.get("required", ())),
                )
            )
    except KeyError as exc:
        raise KbError(f"record missing field {exc}") from None
    return build_kb(diseases, symptoms, trends)


def kb_to_dict(kb: KnowledgeBase) -> dict[str, Any]:
    def edge_dict(e: Edge) -> dict[str, Any]:
        return {
            "target_id": e.target_id,
            "phi": e.phi,
            "temporal_qualifier": e.temporal_qualifier,
            "pathognomonic": e.pathognomonic,
        }

    return {
        "schema": SCHEMA_VERSION,
        "diseases": [
            {
                "id": d.id,
                "name": d.name,
                "symptom_edges": [edge_dict(e) for e in d.symptom_edges],
                "trend_edges": [edge_dict(e) for e in d.trend_edges],
                "required": sorted(d.required),
            }
            for d in kb.diseases
        ],
        "symptoms": [
            {"id": s.id, "name": s.name, "synonyms": list(s.synonyms)} for s in kb.symptoms
        ],
        "trends": [
            {"id": t.id, "estimand": t.estimand, "direction": t.direction, "description": t.description}
            for t in kb.trends
        ],
    }


def load_kb(path: str | Path) -> KnowledgeBase:
    """Load and validate a knowledge-base file; deterministic for a given file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise KbError(f"{path}: not valid JSON ({exc})") from exc
    return kb_from_dict(data)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    Path(path).write_text(json.dumps(kb_to_dict(kb), indent=2, sort_keys=True), encoding="utf-8")


def kb_fingerprint(kb: KnowledgeBase) -> str:
    canon = json.dumps(kb_to_dict(kb), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# queries


def candidate_set(kb: KnowledgeBase, positive_findings: Iterable[str]) -> frozenset[str]:
    """Diseases with at least one edge to a positive finding; may be empty."""
    out: set[str] = set()
    for fid in positive_findings:
        if fid not in kb.finding_ids:
            raise KbError(f"unknown finding id {fid!r}")
        out.update(kb.diseases_by_finding.get(fid, ()))
    return frozenset(out)


@dataclass(frozen=True)
class CoverageReport:
    matched: int
    unmatched_tokens: tuple[str, ...]
    low_coverage: bool


def coverage_check(kb: KnowledgeBase, predicates: Sequence[TrendPredicate]) -> CoverageReport:
    """How many predicates hit a trend frame; low_coverage iff none do."""
    matched = 0
    unmatched: list[str] = []
    for p in predicates:
        if kb.matching_trend_ids(p):
            matched += 1
        else:
            unmatched.append(p.token())
    return CoverageReport(
        matched=matched,
        unmatched_tokens=tuple(unmatched),
        low_coverage=matched == 0,
    )


# ---------------------------------------------------------------------------
# prevalence-stratified edge ablation


def subsample_edges(kb: KnowledgeBase, fraction: float, seed: int) -> KnowledgeBase:
    """Keep a prevalence-stratified random fraction of edges; IDF is recomputed.

    Edges are sorted by the prevalence n_j of their target finding (ties by
    finding id, then disease id) and cut into four near-equal strata; within
    each stratum round(fraction * stratum size) edges survive uniformly at
    random under the seed. Required findings whose last edge is dropped leave
    the requirement set so the result still validates. The input is unchanged.
    """
    if not (0 < fraction <= 1.0):
        raise KbError("fraction must be in (0, 1]")
    if not kb.diseases:
        raise KbError("cannot subsample an empty knowledge base")
    if fraction == 1.0:
        return kb

    prevalence = {
        fid: len(kb.diseases_by_finding.get(fid, ())) for fid in kb.finding_ids
    }
    all_edges = []  # (disease_id, kind, target_id)
    for d in kb.diseases:
        for e in d.symptom_edges:
            all_edges.append((d.id, "symptom", e.target_id))
        for e in d.trend_edges:
            all_edges.append((d.id, "trend", e.target_id))
    all_edges.sort(key=lambda rec: (prevalence[rec[2]], rec[2], rec[0], rec[1]))

    rng = np.random.default_rng(seed)
    kept: set[tuple[str, str, str]] = set()
    for stratum in np.array_split(np.arange(len(all_edges)), 4):
        size = len(stratum)
        if size == 0:
            continue
        n_keep = int(math.floor(fraction * size + 0.5))
        chosen = rng.choice(size, size=n_keep, replace=False)
        for idx in chosen:
            kept.add(all_edges[stratum[idx]])

    new_diseases = []
    for d in kb.diseases:
        sym = tuple(e for e in d.symptom_edges if (d.id, "symptom", e.target_id) in kept)
        trd = tuple(e for e in d.trend_edges if (d.id, "trend", e.target_id) in kept)
        surviving = {e.target_id for e in sym} | {e.target_id for e in trd}
        new_diseases.append(
            replace(d, symptom_edges=sym, trend_edges=trd, required=frozenset(d.required & surviving))
        )
    return build_kb(new_diseases, kb.symptoms, kb.trends)
