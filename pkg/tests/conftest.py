import numpy as np
import pytest

from pedcross.dataset import SynthConfig, generate_synthetic_dataset
from pedcross.nn import stack_samples
from pedcross.pose import preprocess


def features_of(samples):
    return [(preprocess(s.raw), s.label) for s in samples]


@pytest.fixture(scope="session")
def synth_split():
    """300/class train and a disjoint 100/class test draw, noise 0.02, seed 7."""
    train = generate_synthetic_dataset(SynthConfig(seed=7, noise_std=0.02, count_per_class=300))
    test = generate_synthetic_dataset(SynthConfig(seed=7, noise_std=0.02, count_per_class=100), offset=len(train))
    return stack_samples(features_of(train)), stack_samples(features_of(test))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when == "call" and "test_acceptance.py" in rep.nodeid:
                lines.append((rep.nodeid.split("::")[-1], outcome))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
