"""Shared fixtures: the synthetic dataset and a trained micro model.

Both are session-scoped because training costs ~20 s; every test that
needs a learned model reuses the same run. The acceptance tests append
their one-line verdicts to a list that is echoed in the terminal summary
so the criterion results are visible even without -s.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from exquisitenet.data import PipelineConfig, synth_generate
from exquisitenet.model import MICRO, build
from exquisitenet.train import train

_criterion_lines = []


def record_criterion(line):
    _criterion_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_ds(tmp_path_factory):
    """4-class synthetic set: 400 train / 80 test images at 64x64."""
    out = str(tmp_path_factory.mktemp("synth"))
    train_split, test_split = synth_generate(
        classes=4, per_class=100, resolution=64, seed=7, out_dir=out)
    return SimpleNamespace(train=train_split, test=test_split, root=out)


@pytest.fixture(scope="session")
def pipe64():
    return PipelineConfig(resolution=64, mean=(0.5, 0.5, 0.5),
                          std=(0.5, 0.5, 0.5))


@pytest.fixture(scope="session")
def trained_micro(synth_ds, pipe64, tmp_path_factory):
    """Micro model trained for 30 epochs under the desk-scale protocol
    (Ranger, lr 0.001, batch 50). Wall time is recorded because one
    criterion puts a budget on it."""
    ckpt = str(tmp_path_factory.mktemp("ckpt") / "micro.eqw")
    model = build(MICRO, np.random.default_rng(0))
    t0 = time.perf_counter()
    result = train(model, synth_ds.train, synth_ds.test, pipe64,
                   epochs=30, batch_size=50, lr=0.001, optim_name="ranger",
                   eval_every=10, out_path=ckpt, seed=0)
    wall = time.perf_counter() - t0
    return SimpleNamespace(model=model, result=result, wall=wall,
                           checkpoint=result.checkpoint,
                           manifest=result.manifest)
