from __future__ import annotations

import time
from types import SimpleNamespace

import numpy as np
import pytest

from misprompt.data import SyntheticTask, apply_case, gen_synthetic
from misprompt.model import ModelConfig, init_backbone
from misprompt.prompts import CASES, PromptMode, init_bank
from misprompt.train import PromptedModel


def tiny_config(d: int = 8, n_layers: int = 2, num_classes: int = 4) -> ModelConfig:
    return ModelConfig(d=d, n_layers=n_layers, num_classes=num_classes)


def tiny_model(mode=PromptMode.ATTENTION, *, d=8, n_layers=2, prompt_len=4, start=0, end=None,
               seed=0, num_classes=4) -> PromptedModel:
    backbone = init_backbone(tiny_config(d, n_layers, num_classes), seed=seed)
    backbone.freeze()
    end = n_layers - 1 if end is None else end
    bank = init_bank(d, n_layers, prompt_len, start, end, mode, seed=seed)
    return PromptedModel(backbone, bank)


def mixed_samples(n: int = 12, seed: int = 0, classes: int = 4):
    """Complete samples turned round-robin into every missing case."""
    base = gen_synthetic(n, classes, seed=seed)
    return [apply_case(s, CASES[i % 3]) for i, s in enumerate(base)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def task():
    return SyntheticTask()


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Default desk config with its backbone pretrained once per session."""
    from misprompt import harness
    from misprompt.config import ExperimentConfig

    cfg = ExperimentConfig()
    out = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    splits = harness.make_splits(cfg)
    path = harness.run_pretrain(cfg, out, splits)
    return SimpleNamespace(cfg=cfg, splits=splits, pretrained=path, out=out,
                           pretrain_seconds=time.perf_counter() - t0)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
