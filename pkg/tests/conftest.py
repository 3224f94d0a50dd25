"""Small simulator datasets and trained models shared across test modules."""

import pytest

from tdcr.dataset import materialize, standard_recipe
from tdcr.experiments import train_pair
from tdcr.robot import HysteresisParams, RobotParams
from tdcr.training import TrainConfig

SMALL_RENDER = dict(noise_sigma=0.0005, n_raw=512, segments=32)
SMALL_HIDDEN = (16, 32, 64, 128)


def small_dataset(out_dir, levels=4, deadband=0.0016, M=16, seed=0, test_count=20):
    p = RobotParams()
    return materialize(standard_recipe(p, levels, 2, seed), robot=p,
                       hysteresis=HysteresisParams(deadband=deadband), M=M, seed=seed,
                       out_dir=out_dir, test_count=test_count, recipe="standard", **SMALL_RENDER)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    return small_dataset(tmp_path_factory.mktemp("small"))


@pytest.fixture(scope="session")
def delta0_manifest(tmp_path_factory):
    return small_dataset(tmp_path_factory.mktemp("delta0"), levels=8, deadband=0.0, test_count=30)


@pytest.fixture(scope="session")
def delta0_pair(delta0_manifest):
    cfg = TrainConfig(lr=0.01, lr_decay_every=100, patience=100, max_epochs=300, step_budget=3000)
    return train_pair(delta0_manifest, SMALL_HIDDEN, cfg)


# Acceptance results, one line per criterion, printed after the run.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
