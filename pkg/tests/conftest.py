import pytest
import torch

from fevgan.ablation import tiny_config
from fevgan.identity import SurrogateBackend
from fevgan.synthetic import make_synthetic_dataset

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def backend():
    return SurrogateBackend(seed=0)


@pytest.fixture(scope="session")
def synth4():
    return make_synthetic_dataset(4, seed=0)


@pytest.fixture(scope="session")
def overfit_batch(synth4):
    # four subjects, four different expressions
    return [synth4[i] for i in (0, 7, 14, 21)]


@pytest.fixture
def tiny():
    return tiny_config


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""

    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
