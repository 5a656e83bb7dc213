"""Shared fixtures: toy knowledge bases sized so the energy arithmetic is
checkable by hand.

The rarity weight of a finding is ln((|D|+1)/(n+1)), so its log contribution
turns positive only once the catalog is big enough; fixtures that need
decisive single-answer updates therefore pad the store with unrelated
diseases, while tiny structural fixtures relax the energy gate instead.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from trenddx.engine import ConsultationConfig
from trenddx.kb import Disease, Edge, KnowledgeBase, SymptomDef, TrendDef, build_kb, load_kb
from trenddx.scoring import EvidenceSet, ScoringParams

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fifty_kb() -> KnowledgeBase:
    return load_kb(DATA / "kb_fifty.json")


@pytest.fixture(scope="session")
def fifty_kb_raw() -> dict:
    return json.loads((DATA / "kb_fifty.json").read_text(encoding="utf-8"))


def make_pair_kb(n_padding: int = 0) -> KnowledgeBase:
    """Two focal diseases split by pathognomonic discriminators, optionally
    padded with unrelated diseases to raise the discriminators' weights."""
    symptoms = [
        SymptomDef("s_shared", "fever"),
        SymptomDef("s_discA", "marker A", synonyms=("alpha marker",)),
        SymptomDef("s_discB", "marker B"),
    ]
    trends = [TrendDef("t_rise", estimand="slope", direction="up", description="lab level")]
    diseases = [
        Disease(
            "dA",
            "disease A",
            symptom_edges=(Edge("s_shared", 1.0), Edge("s_discA", 1.0, pathognomonic=True)),
            trend_edges=(Edge("t_rise", 1.0),),
            required=frozenset({"s_discA"}),
        ),
        Disease(
            "dB",
            "disease B",
            symptom_edges=(Edge("s_shared", 1.0), Edge("s_discB", 1.0, pathognomonic=True)),
            trend_edges=(Edge("t_rise", 1.0),),
            required=frozenset({"s_discB"}),
        ),
    ]
    for i in range(n_padding):
        sid = f"s_pad{i:03d}"
        symptoms.append(SymptomDef(sid, f"padding finding {i}"))
        diseases.append(
            Disease(f"d_pad{i:03d}", f"padding disease {i}", symptom_edges=(Edge(sid, 1.0),))
        )
    return build_kb(diseases, symptoms, trends)


@pytest.fixture()
def pair_kb() -> KnowledgeBase:
    return make_pair_kb()


@pytest.fixture()
def decisive_kb() -> KnowledgeBase:
    """Pair fixture padded to |D| = 100 so one confirmed discriminator pushes
    the winner's mass above the 0.9 gate (hand arithmetic in test_engine)."""
    return make_pair_kb(n_padding=98)


@pytest.fixture()
def pair_config() -> ConsultationConfig:
    # tiny catalog: weights sit below e, so the production gate would empty
    # the ranking; structural tests relax it
    return ConsultationConfig(
        scoring=ScoringParams(gamma=0.2, energy_gate=-10.0),
        tau_h=0.05,
        r_max=4,
    )


@pytest.fixture()
def decisive_config() -> ConsultationConfig:
    return ConsultationConfig(scoring=ScoringParams(gamma=0.2), tau_h=0.05, r_max=4)


@pytest.fixture()
def shared_evidence() -> EvidenceSet:
    return EvidenceSet(positive=frozenset({"s_shared"}))
