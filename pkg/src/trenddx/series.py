"""Longitudinal series containers: irregular time series, ordinal severity levels, panels.

Timestamps are fractional days since the Unix epoch. ISO-8601 strings are
accepted everywhere a timestamp is expected and converted on construction,
so estimators only ever see floats.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

SECONDS_PER_DAY = 86400.0


class SeverityLevel(IntEnum):
    """Eight-step ordinal severity scale used by symptom timelines."""

    NONE = 0
    MINOR = 1
    MILD = 2
    MODERATE = 3
    MEDIUM = 4
    SEVERE = 5
    EXTREME = 6
    CRITICAL = 7

    @classmethod
    def from_name(cls, name: str) -> "SeverityLevel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown severity level {name!r}") from None

    @property
    def label(self) -> str:
        return self.name.capitalize()


SEVERITY_NAMES = tuple(level.label for level in SeverityLevel)


def to_epoch_days(value: float | int | str | _dt.datetime) -> float:
    """Convert a timestamp (ISO-8601 string, datetime, or number of days) to epoch days."""
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, _dt.datetime):
        dt = value
    else:
        dt = _dt.datetime.fromisoformat(str(value))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=_dt.timezone.utc)
    return dt.timestamp() / SECONDS_PER_DAY


def epoch_days_to_iso(days: float) -> str:
    dt = _dt.datetime.fromtimestamp(days * SECONDS_PER_DAY, tz=_dt.timezone.utc)
    return dt.isoformat()


@dataclass(frozen=True)
class TimeSeries:
    """Ordered (t, y) observations with strictly increasing timestamps.

    ``severities`` optionally carries the ordinal level each observation was
    derived from (e.g. a symptom timeline mapped onto its numeric scale).
    """

    t: np.ndarray
    y: np.ndarray
    severities: tuple[SeverityLevel, ...] | None = None

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        if t.ndim != 1 or y.ndim != 1 or t.shape != y.shape:
            raise ValueError("t and y must be 1-d arrays of equal length")
        if t.size < 1:
            raise ValueError("a time series needs at least one point")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(y)):
            raise ValueError("timestamps and values must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.severities is not None and len(self.severities) != t.size:
            raise ValueError("severity channel must align with the points")

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    @classmethod
    def from_points(
        cls, points: Iterable[tuple[float | str, float]]
    ) -> "TimeSeries":
        pts = [(to_epoch_days(t), float(y)) for t, y in points]
        pts.sort(key=lambda p: p[0])
        t, y = zip(*pts)
        return cls(np.array(t), np.array(y))

    @classmethod
    def from_severity_timeline(
        cls, timeline: Iterable[tuple[float | str, SeverityLevel | str]]
    ) -> "TimeSeries":
        """Map a (timestamp, severity) timeline onto the ordinal scale."""
        parsed: list[tuple[float, SeverityLevel]] = []
        for t, level in timeline:
            lv = level if isinstance(level, SeverityLevel) else SeverityLevel.from_name(str(level))
            parsed.append((to_epoch_days(t), lv))
        parsed.sort(key=lambda p: p[0])
        t = np.array([p[0] for p in parsed])
        y = np.array([float(p[1]) for p in parsed])
        return cls(t, y, severities=tuple(p[1] for p in parsed))


@dataclass(frozen=True)
class Panel:
    """One biomarker observed across patients: patient id -> TimeSeries."""

    patients: Mapping[str, TimeSeries] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.patients:
            raise ValueError("a panel needs at least one patient")
        object.__setattr__(self, "patients", dict(self.patients))

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def n_points(self) -> int:
        return sum(len(s) for s in self.patients.values())

    def items(self) -> Sequence[tuple[str, TimeSeries]]:
        return sorted(self.patients.items())

    def pooled(self) -> TimeSeries:
        """All observations time-ordered into one series (duplicate times nudged).

        Used by fallback estimators that only understand a single series.
        """
        pairs: list[tuple[float, float]] = []
        for _, s in self.items():
            pairs.extend(zip(s.t.tolist(), s.y.tolist()))
        pairs.sort()
        t = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        # strictly-increasing repair for collisions across patients
        for i in range(1, t.size):
            if t[i] <= t[i - 1]:
                t[i] = np.nextafter(t[i - 1], np.inf)
        return TimeSeries(t, y)
