from __future__ import annotations

from pathlib import Path

import pytest

from diler_eval.model import Compound, Hypothesis, HypothesisSet

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"

ASPIRIN_KEY = "BSYNRYPXCCBAUM-UHFFFAOYSA-N"
ASPIRIN_SMILES = "CC(=O)OC1=CC=CC=C1C(=O)O"


def steps(n: int) -> tuple[str, ...]:
    return tuple(f"{i}. step {i}" for i in range(1, n + 1))


def hyp(title="Reactive metabolite", direction="Hepatotoxic", categories=("Reactive Bioactivation",),
        n_steps=6, confidence="Medium", assay=None) -> Hypothesis:
    return Hypothesis(title, steps(n_steps), direction, confidence, tuple(categories), assay)


def compound(key=ASPIRIN_KEY, smiles=ASPIRIN_SMILES, label=1, severity=None, split="test") -> Compound:
    return Compound(key, smiles, label, severity, split)


def hset(c: Compound, *hyps: Hypothesis, source="reference") -> HypothesisSet:
    return HypothesisSet(c, tuple(hyps), source)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
