"""From natural-language request to typed trend predicates.

Each query is parsed into an intent bucket, the bucket picks an estimator
plan with a fallback chain, and execution emits the typed predicates that are
the only trend claims the scorer will ever see. Failures downgrade instead of
erroring: watch the UNSTABLE flag appear.
"""

import json

import numpy as np

from trenddx.estimators import CohortStats
from trenddx.router import RouterConfig, parse_intent, run_query
from trenddx.series import Panel, TimeSeries

rng = np.random.default_rng(11)
config = RouterConfig()

print("=== intent parsing (keyword rules, first match wins) ===")
for query in (
    "any abrupt breakpoint in AFP?",
    "compare slope to population norm",
    "show a smooth trajectory of glucose",
    "is the headache trend stable?",
):
    intent = parse_intent(query, config)
    print(f"  {query!r:45s} -> {intent.bucket} {list(intent.matched_keywords)}")

print()
print("=== change-point request on a step series ===")
step = TimeSeries(np.arange(20.0), np.array([0.0] * 10 + [5.0] * 10))
intent, ex = run_query("sudden worsening of AFP?", step, config)
print(f"plan: {[s.estimator for s in ex.plan.steps]}, fallbacks {list(ex.plan.fallbacks)}")
print(f"predicate: {json.dumps(ex.predicates[0].to_dict())}")
print(f"posterior mode tau = {ex.details['change_point'].mode}")

print()
print("=== healthy long series: clean slope, no flags ===")
t = np.arange(0.0, 100.0, 5.0)
_, ex = run_query("overall trend of creatinine", TimeSeries(t, 0.02 * t + rng.normal(0, 0.01, t.size)), config)
print(f"predicate: {json.dumps(ex.predicates[0].to_dict())}")

print()
print("=== three-point series: SPARSE flag forced ===")
_, ex = run_query("overall trend", TimeSeries(np.arange(3.0), np.array([1.0, 1.2, 1.5])), config)
print(f"predicate: {json.dumps(ex.predicates[0].to_dict())}")

print()
print("=== forced downgrade: profile likelihood pinned at its boundary ===")
tt = np.arange(12.0)
panel = Panel({"a": TimeSeries(tt, 0.5 * tt + 100), "b": TimeSeries(tt, 0.5 * tt - 100)})
_, ex = run_query("overall trend", panel, config)
for event in ex.downgrades:
    print(f"  downgrade at {event.stage}/{event.estimator} (attempt {event.attempt}): {event.reason}")
print(f"predicate: {json.dumps(ex.predicates[0].to_dict())}")

print()
print("=== population-norm request with cohort statistics ===")
stats = CohortStats(mu=0.0, sigma=0.005)
_, ex = run_query("compare to population norm", TimeSeries(t, 0.02 * t), config, cohort_stats=stats)
print(f"predicate: {json.dumps(ex.predicates[0].to_dict())}")

print()
print("=== gappy series: imputation pre-step, pooled slope ===")
gap_t = np.array([0.0, 3.0, 6.0, 40.0, 43.0, 46.0, 49.0, 52.0])
_, ex = run_query("overall trend", TimeSeries(gap_t, 0.1 * gap_t + 2), config, has_gaps=True, seed=5)
print(f"plan: {[s.estimator for s in ex.plan.steps]}")
print(f"predicate: {json.dumps(ex.predicates[0].to_dict())}")
pooled = ex.details["pooled"]
print(f"pooled across {pooled.k} stacks: total variance {pooled.total_var:.2e}")

print()
print("=== everything failing still yields an explicit, hedged claim ===")
_, ex = run_query("overall trend", TimeSeries(np.array([0.0]), np.array([1.0])), config)
print(f"sentinel: {json.dumps(ex.predicates[0].to_dict())}")
