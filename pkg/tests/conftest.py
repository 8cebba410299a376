import numpy as np
import pytest
import torch

from stochtraffic.gan import GanConfig, GanTrainer, TrajectoryGenerator
from stochtraffic.scenario import ScenarioConfig
from stochtraffic.traffic import synthesize_records
from stochtraffic.trajectories import extract_windows, resample

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synthetic_windows():
    """Scene windows cut from a few short rule-driver runs."""
    records = synthesize_records(ScenarioConfig(), range(3), 60)
    return extract_windows(resample(records, 0.1))


@pytest.fixture(scope="session")
def small_generator(synthetic_windows):
    """Generator after a short training run; good enough to drive traffic."""
    trainer = GanTrainer(GanConfig(), seed=0)
    for _ in range(150):
        trainer.train_step(trainer.sample_batch(synthetic_windows))
    trainer.gen.eval()
    return trainer.gen


@pytest.fixture
def untrained_generator():
    torch.manual_seed(0)
    return TrajectoryGenerator(GanConfig()).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


VERDICTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance verdict line and fail the test when it is negative."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config.stash[VERDICTS_KEY].append(line)
        print(line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
