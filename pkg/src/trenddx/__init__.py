"""trenddx: deterministic diagnostic consultation over longitudinal records.

Three layers, importable separately:

- statistics: robust trend estimators, a change-point posterior, GP
  smoothing, multiple imputation, cohort anomaly flags (``estimators``),
  routed through typed trend predicates (``router``, ``predicates``);
- scoring: rarity-weighted additive energies over a symptom/trend/disease
  knowledge base with a gated softmax ranking (``kb``, ``scoring``);
- consultation: a bounded question loop that fills the highest-priority
  evidence gaps and re-ranks after every answer (``engine``), plus a
  scripted-patient benchmark harness (``harness``) and a session HTTP
  service / CLI (``service``, ``cli``).
"""

from .engine import (
    ConsultationConfig,
    ConsultationState,
    Question,
    TerminalReason,
    start_session,
    step,
)
from .kb import KnowledgeBase, load_kb, save_kb
from .predicates import TrendPredicate
from .router import AnalysisPlan, Intent, RouterConfig, parse_intent, run_query, select_plan
from .scoring import EvidenceSet, PsiConfig, ScoringParams, rank_candidates
from .series import Panel, SeverityLevel, TimeSeries

__version__ = "0.1.0"

__all__ = [
    "AnalysisPlan",
    "ConsultationConfig",
    "ConsultationState",
    "EvidenceSet",
    "Intent",
    "KnowledgeBase",
    "Panel",
    "PsiConfig",
    "Question",
    "RouterConfig",
    "ScoringParams",
    "SeverityLevel",
    "TerminalReason",
    "TimeSeries",
    "TrendPredicate",
    "load_kb",
    "parse_intent",
    "rank_candidates",
    "run_query",
    "save_kb",
    "select_plan",
    "start_session",
    "step",
    "__version__",
]
