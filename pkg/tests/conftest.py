import numpy as np
import pytest

from emoda.data import SOURCE, TARGET, SynthConfig, generate_synthetic
from emoda.model import ModelBundle, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SynthConfig.small(source_counts=(20, 20, 20, 20), target_counts=(20, 20, 20, 20), seed=3)
    samples = generate_synthetic(cfg)
    return ([s for s in samples if s.domain == SOURCE], [s for s in samples if s.domain == TARGET])


@pytest.fixture
def small_model():
    return ModelBundle(ModelConfig.small(), seed=11)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion; the lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


_ACCEPTANCE = pytest.StashKey()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
