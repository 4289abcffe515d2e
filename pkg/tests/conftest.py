import numpy as np
import pytest

from reinsopt import settings
from reinsopt.losses import simulate_total_losses

REFERENCE_M = 1_000_000
REFERENCE_SEED = 1

# criterion id -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def million():
    """One m=10^6 sample per model under the reference portfolio (shared by slow tests)."""
    return {
        name: simulate_total_losses(settings.PORTFOLIO, model, REFERENCE_M,
                                    seed=np.random.SeedSequence(REFERENCE_SEED, spawn_key=(i,)))
        for i, (name, model) in enumerate(settings.MODELS.items())
    }


@pytest.fixture(scope="session")
def gamma_sample():
    return simulate_total_losses(settings.PORTFOLIO, settings.SEVERITIES["gamma"], 50_000, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"CRITERION {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
