import numpy as np
import pytest
import torch

from sepasd.dataset import SynthSpec, synth_generate

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three machine types, a handful of 2 s clips each."""
    spec = SynthSpec(machine_types=("alpha", "beta", "gamma"), clips_per_type=6, test_clips_per_type=8,
                     clip_seconds=2.0, seed=3)
    out = tmp_path_factory.mktemp("tiny")
    return synth_generate(spec, out), out


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
