"""Route analysis requests to estimator plans and execute them with fallbacks.

A request flows query -> parsed intent -> plan -> executed plan record. Intent
parsing is deterministic keyword matching (an external planner can be plugged
in; its output is validated against the plan schema before use). Failed fits
downgrade along the plan's fallback chain and every predicate emitted after a
downgrade carries the UNSTABLE flag, so scoring never receives overconfident
trend claims.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import estimators as est
from .estimators import (
    CohortStats,
    EstimatorError,
    FitFailure,
    GpKernelParams,
)
from .predicates import TrendPredicate
from .series import Panel, TimeSeries

BUCKETS = ("change_point", "population_norm", "smooth_trajectory", "trend_test")

#: Estimator families listed in the method menu but not registered here; a
#: plan naming one fails validation instead of silently running something else.
UNAVAILABLE_BUCKETS = (
    "structural_time_series",
    "regularized_var",
    "cox_time_dependent",
    "wavelet",
)

DEFAULT_KEYWORDS: dict[str, tuple[str, ...]] = {
    # first matching rule wins, in this order
    "change_point": ("abrupt", "breakpoint", "sudden", "worsening-spike", "spike", "jump"),
    "population_norm": ("population norm", "cohort", "compare to normal", "z-score"),
    "smooth_trajectory": ("smooth", "trajectory", "gradual", "smoothed"),
}


class RouterError(ValueError):
    pass


@dataclass(frozen=True)
class RouterConfig:
    keywords: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_KEYWORDS)
    )
    flat_slope_eps: float = 1e-3  # |slope| below this reads as flat, levels/day
    budget: int = 2  # fit attempts per step before downgrading
    mk_z_threshold: float = 1.96
    gp_lengthscale: float = 30.0
    gp_signal_var: float = 1.0
    gp_noise_var: float = 0.1
    impute_k: int = 5

    def gp_params(self) -> GpKernelParams:
        return GpKernelParams(self.gp_lengthscale, self.gp_signal_var, self.gp_noise_var)


@dataclass(frozen=True)
class Intent:
    bucket: str
    raw_query: str
    matched_keywords: tuple[str, ...] = ()


def parse_intent(query: str, config: RouterConfig | None = None) -> Intent:
    """Keyword rules over the query, case-insensitive whole-word matching.

    Buckets are tried in the order change_point, population_norm,
    smooth_trajectory; anything else is a trend test.
    """
    if not query or not query.strip():
        raise RouterError("empty query")
    config = config or RouterConfig()
    lowered = query.lower()

    def hits(kw: str) -> bool:
        return re.search(rf"(?<!\w){re.escape(kw.lower())}(?!\w)", lowered) is not None

    for bucket in ("change_point", "population_norm", "smooth_trajectory"):
        matched = tuple(kw for kw in config.keywords.get(bucket, ()) if hits(kw))
        if matched:
            return Intent(bucket=bucket, raw_query=query, matched_keywords=matched)
    return Intent(bucket="trend_test", raw_query=query, matched_keywords=())


@dataclass(frozen=True)
class SeriesMeta:
    n_points: int
    has_cohort_stats: bool = False
    has_gaps: bool = False


@dataclass(frozen=True)
class PlanStep:
    estimator: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class AnalysisPlan:
    steps: tuple[PlanStep, ...]
    fallbacks: tuple[str, ...]
    budget: int = 2

    def __post_init__(self) -> None:
        if not self.steps:
            raise RouterError("a plan needs at least one step")
        if not self.fallbacks or self.fallbacks[-1] != "simple_slope":
            raise RouterError("fallback chain must terminate in 'simple_slope'")
        if self.budget < 1:
            raise RouterError("budget must be >= 1")


def meta_for(data: TimeSeries | Panel, has_cohort_stats: bool = False, has_gaps: bool = False) -> SeriesMeta:
    n = len(data) if isinstance(data, TimeSeries) else data.n_points
    return SeriesMeta(n_points=n, has_cohort_stats=has_cohort_stats, has_gaps=has_gaps)


def select_plan(intent: Intent, meta: SeriesMeta, config: RouterConfig | None = None) -> AnalysisPlan:
    """Deterministic plan for one of the four buckets.

    Trend tests use the random-intercept model with AR(1) residuals when the
    series is long enough (n > 6) and the pairwise-median slope otherwise;
    change points go to the exhaustive posterior grid; population-norm
    requests z-score the fitted slope against cohort statistics; smoothing
    requests run the GP posterior sweep. Gappy slope-based plans get a
    multiple-imputation pre-step.
    """
    config = config or RouterConfig()
    if intent.bucket not in BUCKETS:
        raise RouterError(f"unknown bucket {intent.bucket!r}")

    def slope_step() -> PlanStep:
        if meta.n_points > 6:
            return PlanStep("mixed_effects", {"use_ar1": True})
        return PlanStep("theil_sen", {})

    steps: list[PlanStep]
    if intent.bucket == "trend_test":
        steps = [slope_step()]
        fallbacks = ("mann_kendall", "simple_slope")
    elif intent.bucket == "change_point":
        steps = [PlanStep("change_point_grid", {})]
        fallbacks = ("simple_slope",)
    elif intent.bucket == "population_norm":
        steps = [slope_step(), PlanStep("cohort_zscore", {})]
        fallbacks = ("simple_slope",)
    else:  # smooth_trajectory
        steps = [PlanStep("gp_sweep", {})]
        fallbacks = ("simple_slope",)

    if meta.has_gaps and intent.bucket in ("trend_test", "population_norm"):
        # slope-style estimates pool naturally across imputation stacks;
        # the grid search and GP consume irregular series directly
        steps.insert(0, PlanStep("impute_stacks", {"k": config.impute_k}))
    return AnalysisPlan(steps=tuple(steps), fallbacks=fallbacks, budget=config.budget)


# ---------------------------------------------------------------------------
# plan execution


@dataclass(frozen=True)
class DowngradeEvent:
    stage: str  # "head" or the fallback estimator that failed
    estimator: str
    attempt: int
    reason: str


@dataclass(frozen=True)
class PlanExecution:
    plan: AnalysisPlan
    predicates: tuple[TrendPredicate, ...]
    downgrades: tuple[DowngradeEvent, ...]
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def unstable(self) -> bool:
        return bool(self.downgrades)


def _as_series(data: TimeSeries | Panel) -> TimeSeries:
    return data if isinstance(data, TimeSeries) else data.pooled()


def _direction(value: float, eps: float) -> str:
    if value > eps:
        return "up"
    if value < -eps:
        return "down"
    return "flat"


def _slope_of(data: TimeSeries | Panel, estimator: str, params: Mapping[str, Any], config: RouterConfig) -> tuple[float, dict]:
    if estimator == "mixed_effects":
        panel = data if isinstance(data, Panel) else Panel({"_series": data})
        fit = est.fit_mixed_effects(panel, use_ar1=bool(params.get("use_ar1", False)))
        if not fit.converged:
            raise FitFailure("mixed-effects profile hit the grid boundary")
        return fit.beta1, {"fit": fit}
    if estimator == "theil_sen":
        return est.theil_sen(_as_series(data)), {}
    if estimator == "simple_slope":
        slope, intercept = est.ols_slope(_as_series(data))
        return slope, {"intercept": intercept}
    raise RouterError(f"{estimator!r} does not produce a slope")


def _run_single(
    estimator: str,
    data: TimeSeries | Panel,
    params: Mapping[str, Any],
    config: RouterConfig,
    cohort_stats: CohortStats | None,
) -> tuple[list[TrendPredicate], dict[str, Any]]:
    series = _as_series(data)
    span = series.span
    if estimator in ("mixed_effects", "theil_sen", "simple_slope"):
        slope, details = _slope_of(data, estimator, params, config)
        pred = TrendPredicate(
            span=span,
            estimand="slope",
            value=float(slope),
            qual=frozenset(),
            direction=_direction(slope, config.flat_slope_eps),
        )
        return [pred], details
    if estimator == "mann_kendall":
        res = est.mann_kendall(series, z_threshold=config.mk_z_threshold)
        n = len(series)
        tau = res.s / (n * (n - 1) / 2)
        # rank-based trend strength in [-1, 1]; only ever emitted on a
        # downgrade path, so it always arrives flagged UNSTABLE downstream
        pred = TrendPredicate(
            span=span, estimand="slope", value=float(tau), qual=frozenset(), direction=res.direction
        )
        return [pred], {"mann_kendall": res}
    if estimator == "change_point_grid":
        res = est.change_point_posterior(series)
        mode = res.mode
        mu1 = float(np.mean(series.y[:mode]))
        mu2 = float(np.mean(series.y[mode:]))
        pred = TrendPredicate(
            span=(float(series.t[mode - 1]), float(series.t[mode])),
            estimand="change_point_mass",
            value=float(res.mode_mass),
            qual=frozenset(),
            direction="up" if mu2 > mu1 else ("down" if mu2 < mu1 else "flat"),
        )
        return [pred], {"change_point": res}
    if estimator == "gp_sweep":
        gp_params = config.gp_params()
        posts = [est.gp_posterior(series, float(t), gp_params) for t in series.t]
        resid = series.y - np.array([p.mean for p in posts])
        rms = float(np.sqrt(np.mean(resid**2)))
        dt = span[1] - span[0]
        smooth_slope = (posts[-1].mean - posts[0].mean) / dt if dt > 0 else 0.0
        pred = TrendPredicate(
            span=span,
            estimand="smooth_residual",
            value=rms,
            qual=frozenset(),
            direction=_direction(smooth_slope, config.flat_slope_eps),
        )
        return [pred], {"gp_posteriors": posts}
    raise RouterError(f"estimator {estimator!r} is not registered")


def _run_combo(
    steps: Sequence[PlanStep],
    data: TimeSeries | Panel,
    config: RouterConfig,
    cohort_stats: CohortStats | None,
    rng: np.random.Generator,
) -> tuple[list[TrendPredicate], dict[str, Any]]:
    """Run a head-step combination: optional impute pre-step, the main
    estimator, optional cohort z-score transform of the fitted slope."""
    steps = list(steps)
    details: dict[str, Any] = {}

    imputed: est.ImputationStacks | None = None
    if steps and steps[0].estimator == "impute_stacks":
        pre = steps.pop(0)
        series = _as_series(data)
        if len(series) < 2:
            raise EstimatorError("imputation needs at least 2 points")
        t = series.t
        step_size = float(np.median(np.diff(t)))
        grid = [g for g in np.arange(t[0], t[-1], step_size) if not np.any(np.isclose(g, t))]
        imputed = est.impute_stacks(series, grid, k=int(pre.params.get("k", config.impute_k)), seed=int(rng.integers(2**31)))
        details["imputation"] = {"k": imputed.k, "noise_var": imputed.noise_var}

    if not steps:
        raise RouterError("plan has no estimator step")
    main = steps.pop(0)

    if imputed is not None:
        if main.estimator not in ("mixed_effects", "theil_sen", "simple_slope"):
            raise RouterError(f"imputation pre-step cannot feed {main.estimator!r}")
        slopes = [_slope_of(stack, main.estimator, main.params, config)[0] for stack in imputed.stacks]
        pooled = est.rubin_pool(slopes)
        details["pooled"] = pooled
        series = _as_series(data)
        preds = [
            TrendPredicate(
                span=series.span,
                estimand="slope",
                value=float(pooled.point),
                qual=frozenset(),
                direction=_direction(pooled.point, config.flat_slope_eps),
            )
        ]
    else:
        preds, d = _run_single(main.estimator, data, main.params, config, cohort_stats)
        details.update(d)

    for post in steps:
        if post.estimator != "cohort_zscore":
            raise RouterError(f"unsupported post-step {post.estimator!r}")
        if cohort_stats is None:
            raise EstimatorError("population-norm request without cohort statistics")
        if not preds or preds[0].estimand != "slope":
            raise EstimatorError("cohort z-score needs a fitted slope")
        zres = est.cohort_zscore(preds[0].value, cohort_stats)
        details["cohort_z"] = zres
        direction = "flat" if not zres.anomalous else ("up" if zres.z > 0 else "down")
        preds = [
            TrendPredicate(
                span=preds[0].span,
                estimand="cohort_z",
                value=float(zres.z),
                qual=frozenset(),
                direction=direction,
            )
        ]
    return preds, details


def execute_plan(
    plan: AnalysisPlan,
    data: TimeSeries | Panel,
    config: RouterConfig | None = None,
    cohort_stats: CohortStats | None = None,
    seed: int = 0,
) -> PlanExecution:
    """Run the plan head (up to budget attempts), falling back on failure.

    Every predicate emitted after any downgrade carries UNSTABLE; series with
    fewer than 4 points mark everything SPARSE. When even the terminal
    fallback fails, a single zero slope predicate flagged {UNSTABLE, SPARSE}
    is emitted so downstream scoring still sees an explicit, maximally hedged
    claim rather than nothing.
    """
    config = config or RouterConfig()
    rng = np.random.default_rng(seed)
    n = len(data) if isinstance(data, TimeSeries) else data.n_points
    sparse = n < 4
    downgrades: list[DowngradeEvent] = []
    preds: list[TrendPredicate] | None = None
    details: dict[str, Any] = {}

    chains: list[tuple[str, Sequence[PlanStep]]] = [("head", plan.steps)]
    chains.extend((fb, (PlanStep(fb, {}),)) for fb in plan.fallbacks)

    for stage, steps in chains:
        for attempt in range(1, plan.budget + 1):
            try:
                preds, details = _run_combo(steps, data, config, cohort_stats, rng)
                break
            except (EstimatorError, FitFailure) as exc:
                downgrades.append(
                    DowngradeEvent(stage=stage, estimator=steps[-1].estimator, attempt=attempt, reason=str(exc))
                )
        if preds is not None:
            break

    if preds is None:
        series_span = _as_series(data).span if n > 0 else (0.0, 0.0)
        preds = [
            TrendPredicate(
                span=series_span,
                estimand="slope",
                value=0.0,
                qual=frozenset({"UNSTABLE", "SPARSE"}),
                direction="flat",
            )
        ]
    flags = frozenset(
        f for f, on in (("UNSTABLE", bool(downgrades)), ("SPARSE", sparse)) if on
    )
    final = tuple(
        TrendPredicate(
            span=p.span,
            estimand=p.estimand,
            value=p.value,
            qual=p.qual | flags,
            direction=p.direction,
            source_finding_id=p.source_finding_id,
        )
        for p in preds
    )
    return PlanExecution(plan=plan, predicates=final, downgrades=tuple(downgrades), details=details)


Planner = Callable[[Intent, SeriesMeta], AnalysisPlan]


def run_query(
    query: str,
    data: TimeSeries | Panel,
    config: RouterConfig | None = None,
    cohort_stats: CohortStats | None = None,
    has_gaps: bool = False,
    seed: int = 0,
    planner: Planner | None = None,
) -> tuple[Intent, PlanExecution]:
    """Full pipeline: parse the query, pick (or delegate) a plan, execute it.

    An external planner may substitute its own plan; the result is validated
    by the AnalysisPlan schema on construction, so malformed plans cannot run.
    """
    config = config or RouterConfig()
    intent = parse_intent(query, config)
    meta = meta_for(data, has_cohort_stats=cohort_stats is not None, has_gaps=has_gaps)
    plan = (planner or (lambda i, m: select_plan(i, m, config)))(intent, meta)
    if not isinstance(plan, AnalysisPlan):
        raise RouterError("planner must return an AnalysisPlan")
    execution = execute_plan(plan, data, config, cohort_stats=cohort_stats, seed=seed)
    return intent, execution
