import numpy as np
import pytest

from flowfuse.graphbuild import make_samples
from flowfuse.synth import SynthConfig, simulate
from flowfuse.training import TrainConfig, prepare


def tiny_series(M=5, D=3, P=4, seed=0):
    return simulate(SynthConfig(M=M, D=D, P=P, seed=seed, base_mean=3.0)).series()


@pytest.fixture(scope="session")
def tiny():
    """Prepared split of a 5-zone, 3-day, P=4 trace (8 samples)."""
    taxi, aux = tiny_series()
    return prepare(taxi, aux, 3, 4, TrainConfig())


@pytest.fixture(scope="session")
def tiny_samples():
    taxi, aux = tiny_series()
    return make_samples(taxi, aux, 3, 4)


def permute_counts(counts, perm):
    p = np.asarray(perm)
    return counts[:, p][:, :, p]


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
