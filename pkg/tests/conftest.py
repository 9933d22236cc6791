from __future__ import annotations

import os
from pathlib import Path

import pytest

from refgame.synth import make_synthetic_corpus

GOLDEN_DIR = Path(__file__).parent / "golden"

# released-corpus root (optional); dataset-gated tests skip when unset
DATA_ROOT = os.environ.get("REFGAME_DATA", "")


def dataset_available() -> bool:
    return bool(DATA_ROOT) and (Path(DATA_ROOT) / "dialogues.json").exists()


requires_dataset = pytest.mark.skipif(
    not dataset_available(),
    reason="released corpus not available (set REFGAME_DATA to an imported corpus directory)",
)


@pytest.fixture(scope="session")
def small_corpus():
    """6 scripted dialogues; enough for structural tests."""
    return make_synthetic_corpus(6, seed=11)


@pytest.fixture(scope="session")
def medium_corpus():
    """60 scripted dialogues; enough for stats/agreement distributions."""
    return make_synthetic_corpus(60, seed=7)


# test_acceptance.py appends one line per criterion here; printed at the end
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
