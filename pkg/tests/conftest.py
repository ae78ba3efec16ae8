import time
from dataclasses import dataclass

import numpy as np
import pytest

from girn.numcore import RngStream
from girn.skeldata import (GroupSample, JointTrack, PersonPose, SynthConfig, preprocess,
                           synth_generate)

FEW_JOINTS = ("Nose", "Neck", "MidHip", "LWrist", "RWrist", "LAnkle", "RAnkle")


def random_person(gen, team, frames, center=(0.0, 0.0), action=None, pid="", joints=FEW_JOINTS,
                  spread=30.0):
    tracks = {n: JointTrack.from_xy(gen.normal(center, spread, size=(frames, 2)))
              for n in joints}
    return PersonPose(tracks, team, action, pid)


def random_scene(gen, n_persons=12, frames=21, with_ball=True, label=None):
    """Loose two-team scene in pixel-like units, no court structure."""
    persons = []
    for i in range(n_persons):
        team = "left" if i % 2 == 0 else "right"
        cx = -300.0 if team == "left" else 300.0
        persons.append(random_person(gen, team, frames, (cx + gen.uniform(-150, 150),
                                                         gen.uniform(-150, 150)),
                                     int(gen.integers(9)), f"p{i}"))
    ball = JointTrack.from_xy(gen.normal(0, 200, size=(frames, 2))) if with_ball else None
    label = int(gen.integers(8)) if label is None else label
    return GroupSample(persons, label, (1280, 720), ball, "rand")


@pytest.fixture(scope="session")
def small_synth():
    """Raw synthetic splits, small enough for unit tests."""
    return synth_generate(SynthConfig(n_train=48, n_val=16, n_test=16), RngStream(0))


@pytest.fixture(scope="session")
def small_pre(small_synth):
    """Preprocessed version of ``small_synth``."""
    return {k: [preprocess(s) for s in v] for k, v in small_synth.items()}


@dataclass
class DeskRun:
    cfg: object
    mcfg: object
    raw: dict
    pre: dict
    run: object
    test_accuracy: float
    seconds: float


@pytest.fixture(scope="session")
def desk_run():
    """The default-config pipeline on the 2000/250/250 synthetic task, trained once.

    Timed from data generation to the test-set score.
    """
    from girn.cli import load_splits
    from girn.config import RunConfig
    from girn.evalkit import accuracy, predict_labels
    from girn.trainer import run_training

    cfg = RunConfig()
    t0 = time.perf_counter()
    raw = load_splits(cfg)
    kw = cfg.preprocess_kwargs()
    pre = {k: [preprocess(s, **kw) for s in v] for k, v in raw.items()}
    mcfg = cfg.model_config()
    run = run_training(mcfg, cfg.train_config(), pre["train"], pre["val"])
    acc = accuracy(predict_labels(run.params, pre["test"], mcfg),
                   [s.group_label for s in pre["test"]])
    return DeskRun(cfg, mcfg, raw, pre, run, acc, time.perf_counter() - t0)


# --- acceptance report ---------------------------------------------------------

_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []


@pytest.fixture
def criterion(request):
    """``report(number, passed, detail)`` prints a pass/fail line and asserts on it."""
    lines = request.config.stash[_REPORT]

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        print(line)
        lines.append((number, line))
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
