"""A full consultation, round by round.

Two candidate conditions tie on the presenting evidence; the engine asks for
their highest-priority discriminators, parses the answers (note the free-text
turn with a severity word and a negation), re-scores, and stops at the mass
gate. The audit trail replays at the end.
"""

import json

from trenddx import engine
from trenddx.harness import ambiguous_cohort_config, assemble_session_inputs, generate_ambiguous_cohort

kb, cohort = generate_ambiguous_cohort(n_pairs=50, seed=3)
config = ambiguous_cohort_config(r_max=3, seed=3).consultation
patient = cohort[0]  # gold: D000A

evidence, predicates = assemble_session_inputs(kb, patient, ambiguous_cohort_config(seed=3))
print(f"patient {patient.patient_id}, gold disease {sorted(patient.gold_diseases)}")
print(f"initial positive findings: {sorted(evidence.positive)}")
print("router predicates from the indicator stream:")
for p in predicates:
    print(f"  {json.dumps(p.to_dict())}")

state = engine.start_session(kb, evidence, predicates, config)
print()
print("=== round 0 ===")
for e in state.ranked.top(3):
    print(f"  {e.disease_id:8s} energy {e.energy:+.3f}  mass {e.mass:.3f}")
print(f"entropy {state.ranked.entropy:.4f}; stop checks: mass<0.9, H>=0.05, rounds, gaps -> continue")
print("gap queue:")
for g in state.gap_queue:
    print(f"  {g.finding_id}: priority {g.priority:.3f}")
print(f"question: {state.pending_question.text}")

answer = "Severe discriminator S000_discA, but no discriminator S000_discB"
print()
print(f"=== round 1: free-text answer {answer!r} ===")
state = engine.step(kb, state, answer, config)
rec = state.log[-1]
print(f"parsed delta: +{list(rec.delta.add_positive)} -{list(rec.delta.add_negative)} "
      f"severities {dict(rec.delta.severities)}")
for e in state.ranked.top(3):
    print(f"  {e.disease_id:8s} energy {e.energy:+.3f}  mass {e.mass:.3f}")
print(f"terminal: {state.terminal.reason} (uncertainty={state.terminal.uncertainty_flag})")

print()
print("=== audit trail replays byte-exactly ===")
engine.replay_trace(kb, state, config)
trace = engine.export_trace(state)
print(f"trace: {len(trace['rounds'])} round record(s), final round {trace['final_round']}")
print(json.dumps(trace["rounds"][0]["delta"], sort_keys=True))
