"""Cohort benchmark, round-by-round attribution, and edge ablation.

The generated cohort is analytically controlled: every patient's two
candidate conditions tie at round 0 (the deterministic tie-break gets exactly
half right) and the first answered question splits them, so the interactive
lift is forced by construction rather than tuned.
"""

from trenddx.harness import (
    ambiguous_cohort_config,
    calibrate_tau_h,
    generate_ambiguous_cohort,
    kb_ablation_sweep,
    round_attribution,
    run_benchmark,
)

kb, cohort = generate_ambiguous_cohort(n_pairs=50, seed=0)
config = ambiguous_cohort_config(r_max=3, seed=0)
print(f"store: {len(kb.diseases)} diseases; cohort: {len(cohort)} scripted patients")

report = run_benchmark(kb, cohort, config)
print()
print("=== round-by-round attribution ===")
print(f"{'round':>5} {'top-1 acc':>10} {'gain':>8} {'cum. share':>11}")
for row in round_attribution(report):
    gain = "-" if row.gain is None else f"{row.gain:+.2f}"
    share = "-" if row.cumulative_share is None else f"{100 * row.cumulative_share:.1f}%"
    print(f"{row.round:>5} {row.accuracy:>10.2f} {gain:>8} {share:>11}")
print(
    f"final: top-1 {report.top1_accuracy:.1f}, top-2 {report.top2_accuracy:.1f}, "
    f"macro F1 {report.macro_f1:.3f}, recall {report.disease_recall:.3f}"
)

print()
print("=== entropy cutoff calibration (20th percentile of terminal entropies) ===")
tau = calibrate_tau_h(kb, cohort[:20], config)
print(f"calibrated tau_H = {tau:.4f}")

print()
print("=== knowledge-base edge ablation ===")
rows = kb_ablation_sweep(kb, [0.25, 0.5, 0.75, 1.0], cohort, config, seeds=[0, 1, 2])
print(f"{'subset':<12} {'frac':>5} {'acc':>14} {'delta':>7}")
for row in rows:
    print(
        f"{row.subset:<12} {row.fraction:>5.2f} "
        f"{row.mean_accuracy:>7.2f}+-{row.std_accuracy:<5.2f} {row.delta_vs_full:>+7.2f}"
    )
print()
print("the 1.0 row reproduces the unablated benchmark exactly; sparser stores")
print("lose the shared findings that make the pair candidates reachable at all")
