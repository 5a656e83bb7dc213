"""Typed trend predicates: the only trend claims scoring may consume.

A predicate is the tuple (span, estimand, value, qual, direction,
source_finding_id). The estimand vocabulary is closed; serialization rejects
anything outside it so downstream consumers never see ad-hoc claims.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Mapping

ESTIMANDS = ("slope", "change_point_mass", "smooth_residual", "cohort_z")
DIRECTIONS = ("up", "down", "flat")
QUAL_FLAGS = ("UNSTABLE", "SPARSE")


@dataclass(frozen=True)
class TrendPredicate:
    span: tuple[float, float]
    estimand: str
    value: float
    qual: frozenset[str]
    direction: str
    source_finding_id: str | None = None

    def __post_init__(self) -> None:
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"unknown estimand {self.estimand!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        object.__setattr__(self, "qual", frozenset(self.qual))
        bad = self.qual - set(QUAL_FLAGS)
        if bad:
            raise ValueError(f"unknown quality flags {sorted(bad)}")
        object.__setattr__(self, "span", (float(self.span[0]), float(self.span[1])))

    @property
    def unstable(self) -> bool:
        return "UNSTABLE" in self.qual

    @property
    def sparse(self) -> bool:
        return "SPARSE" in self.qual

    def with_source(self, finding_id: str | None) -> "TrendPredicate":
        return replace(self, source_finding_id=finding_id)

    def token(self) -> str:
        """Compact verbatim form used in coverage reports."""
        return f"{self.estimand}:{self.direction}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "span": [self.span[0], self.span[1]],
            "estimand": self.estimand,
            "value": self.value,
            "qual": sorted(self.qual),
            "direction": self.direction,
            "source_finding_id": self.source_finding_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrendPredicate":
        extra = set(data) - {"span", "estimand", "value", "qual", "direction", "source_finding_id"}
        if extra:
            raise ValueError(f"unknown predicate fields {sorted(extra)}")
        span = data["span"]
        return cls(
            span=(float(span[0]), float(span[1])),
            estimand=data["estimand"],
            value=float(data["value"]),
            qual=frozenset(data.get("qual", ())),
            direction=data["direction"],
            source_finding_id=data.get("source_finding_id"),
        )
