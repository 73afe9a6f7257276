"""Session fixtures for the acceptance suite.

The heavyweight fixtures train real desk-scale models through the CLI so
that checkpoints, loss logs, and manifests exist on disk exactly as a user
would produce them. Everything is keyed by explicit seeds; the held-out
item streams are disjoint from every training stream by construction.
"""

import time

import numpy as np
import pytest

from duetdiff.artifacts import load_model
from duetdiff.cli import main
from duetdiff.synthdata import SynthConfig
from duetdiff.training import sample_training_item

ACCEPT_SEEDS = (0, 1, 2)

_ACCEPTANCE_LINES = []


@pytest.fixture
def accept():
    """Record one human-readable verdict line per acceptance criterion."""

    def _record(line):
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _train(out_dir, *sets):
    argv = ["train", "--out", str(out_dir)]
    for kv in sets:
        argv += ["--set", kv]
    t0 = time.time()
    code = main(argv)
    wall = time.time() - t0
    assert code == 0, f"training run failed: {sets}"
    return wall


def _load_runs(space, prefix, seeds, *sets, stage1=False):
    runs = []
    for seed in seeds:
        out = space / f"{prefix}_{seed}"
        wall = _train(out, f"seed={seed}", *sets)
        model, header = load_model(out / "final.ckpt")
        run = {"seed": seed, "out": out, "model": model, "header": header, "wall": wall}
        if stage1:
            run["stage1_model"], _ = load_model(out / "stage1.ckpt")
        runs.append(run)
    return runs


@pytest.fixture(scope="session")
def desk_space(tmp_path_factory):
    return tmp_path_factory.mktemp("desk")


@pytest.fixture(scope="session")
def full_runs(desk_space):
    """Three desk-default curriculum runs; stage1 checkpoints kept for the
    matched-budget detection-loss comparison."""
    return _load_runs(desk_space, "full", ACCEPT_SEEDS, stage1=True)


@pytest.fixture(scope="session")
def ar_runs(desk_space):
    """Same curriculum and parameter count, causal left-to-right training."""
    return _load_runs(desk_space, "ar", ACCEPT_SEEDS, "train.mode=ar")


@pytest.fixture(scope="session")
def nortd_runs(desk_space):
    """lambda = 0 arms matched step-for-step to the stage1 leg of full_runs:
    same LR trajectory (total_steps pinned to the full-run value), same item,
    mask, corruption, and dropout streams; only the detection loss term is
    removed."""
    return _load_runs(
        desk_space,
        "nortd",
        ACCEPT_SEEDS,
        "train.lambda=0",
        "train.stage2_steps=0",
        "lr.total_steps=560",
    )


@pytest.fixture(scope="session")
def synth_cfg():
    return SynthConfig()


@pytest.fixture(scope="session")
def heldout_256(synth_cfg):
    """200 noise-free held-out songs at full length, same stream the CLI
    evaluator draws from ((data.seed, 17)), disjoint from training draws."""
    rng = np.random.default_rng(np.random.SeedSequence((1234, 17)))
    return [sample_training_item(256, synth_cfg, rng) for _ in range(200)]


@pytest.fixture(scope="session")
def heldout_64(synth_cfg):
    """100 held-out songs at stage1 length from a second disjoint stream."""
    rng = np.random.default_rng(np.random.SeedSequence((1234, 18)))
    return [sample_training_item(64, synth_cfg, rng) for _ in range(100)]
