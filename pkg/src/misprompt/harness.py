"""Experiment pipeline: pretrain, freeze, prompt-train, evaluate, sweep.

Output layout under ``out``::

    pretrain/backbone.ckpt, pretrain/loss.csv
    <mode>/model.ckpt, <mode>/loss.csv, <mode>/report.csv
    manifest.json
    sweep-*/<cell>/...   (one isolated directory per sweep cell)
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .config import ExperimentConfig, parse_layer_pair
from .data import (
    MissingSpec,
    MultimodalSample,
    Scenario,
    SyntheticTask,
    apply_partition,
    derive_seed,
    gen_synthetic,
    partition,
)
from .errors import ConfigError, DependencyError
from .metrics import evaluate
from .model import BackboneParams, ModelConfig, count_params, init_backbone, init_head
from .prompts import CASES, PromptBank, PromptMode, init_bank
from .train import PromptedModel, TrainConfig, pretrain, train_loop

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["mode", "scenario", "train_eta", "test_eta", "case", "metric", "value", "seed", "config_hash"]


# building blocks --------------------------------------------------------------


def synthetic_task(cfg: ExperimentConfig) -> SyntheticTask:
    d = cfg.data
    return SyntheticTask(
        classes=d.classes, text_words=d.text_words, keywords=d.keywords, hint_fidelity=d.hint_fidelity,
        image_size=d.image_size, channels=d.channels, patch_size=d.patch_size, image_noise=d.image_noise,
        hint_amplitude=d.hint_amplitude, max_text_len=cfg.model.max_text_len, vocab_size=cfg.model.vocab_size,
    )


def model_config(cfg: ExperimentConfig, classifier_hidden: int | None = None) -> ModelConfig:
    d = cfg.data
    num_patches = (d.image_size // d.patch_size) ** 2
    return ModelConfig(
        vocab_size=cfg.model.vocab_size, d=cfg.model.d, n_layers=cfg.model.layers,
        max_text_len=cfg.model.max_text_len, num_patches=num_patches,
        patch_dim=d.patch_size * d.patch_size * d.channels, num_classes=d.classes,
        classifier_hidden=cfg.model.classifier_hidden if classifier_hidden is None else classifier_hidden,
    )


@dataclass
class Splits:
    train: list[MultimodalSample]
    test: list[MultimodalSample]
    pretrain: list[MultimodalSample]


def make_splits(cfg: ExperimentConfig) -> Splits:
    """Task data split into train/test, plus an independent pretraining corpus."""
    seed = cfg.data.seed
    task = synthetic_task(cfg)
    samples = gen_synthetic(cfg.data.n, cfg.data.classes, seed=seed, task=task)
    n_test = int(round(cfg.data.n * cfg.data.test_fraction))
    corpus = gen_synthetic(cfg.data.pretrain_n, cfg.data.classes, seed=derive_seed(seed, "pretrain"), task=task)
    return Splits(train=samples[n_test:], test=samples[:n_test], pretrain=corpus)


def test_view(cfg: ExperimentConfig, test: Sequence[MultimodalSample], eta: float,
              scenario: str | None = None) -> list[MultimodalSample]:
    scenario = scenario or cfg.missing.test_scenario or cfg.missing.scenario
    spec = MissingSpec(eta, Scenario(scenario), seed=derive_seed(cfg.data.seed, "test", scenario, int(eta * 1000)))
    return apply_partition(test, partition(len(test), spec))


def train_spec(cfg: ExperimentConfig, eta: float | None = None, scenario: str | None = None) -> MissingSpec:
    eta = cfg.missing.train_eta if eta is None else eta
    scenario = scenario or cfg.missing.scenario
    return MissingSpec(eta, Scenario(scenario), seed=derive_seed(cfg.data.seed, "train", scenario, int(eta * 1000)))


def stage_config(cfg: ExperimentConfig, stage: str) -> TrainConfig:
    s = getattr(cfg, stage)
    return TrainConfig(
        total_steps=s.steps, batch_size=s.batch_size, base_lr=s.lr, weight_decay=s.weight_decay,
        warmup_fraction=s.warmup, loss_kind=cfg.eval.loss, seed=derive_seed(cfg.data.seed, stage),
        resample_cases=cfg.missing.resample_per_epoch and stage == "train",
    )


def run_pretrain(cfg: ExperimentConfig, out: Path, splits: Splits | None = None) -> Path:
    """Train a fresh backbone on complete data and freeze it."""
    splits = splits or make_splits(cfg)
    out = Path(out) / "pretrain"
    out.mkdir(parents=True, exist_ok=True)
    backbone = init_backbone(model_config(cfg), seed=derive_seed(cfg.data.seed, "backbone"))
    model = PromptedModel(backbone)
    result = pretrain(splits.pretrain, model, stage_config(cfg, "pretrain"))
    path = out / "backbone.ckpt"
    model.save(path)
    result.write_csv(out / "loss.csv")
    (out / "config_hash").write_text(pretrain_digest(cfg) + "\n")
    return path


def pretrain_digest(cfg: ExperimentConfig) -> str:
    """Hash of the config sections the pretrained backbone depends on."""
    text = cfg.to_text()
    keep = []
    for block in text.split("\n\n"):
        if block.startswith(("[data]", "[model]", "[pretrain]")):
            keep.append(block)
    return hashlib.sha256("\n\n".join(keep).encode()).hexdigest()[:16]


def load_pretrained(cfg: ExperimentConfig, path: Path, classifier_hidden: int | None = None) -> BackboneParams:
    """Frozen backbone and pooler from ``path`` with a freshly initialised classifier."""
    if not Path(path).exists():
        raise DependencyError(f"pretrained backbone not found at {path}; run the pretrain stage first")
    arrays = checkpoint.load(path)
    mc = model_config(cfg, classifier_hidden)
    backbone = init_backbone(mc, seed=derive_seed(cfg.data.seed, "backbone"))
    for name, t in backbone.named_tensors().items():
        if name.startswith("backbone/") or name.startswith("head/pooler"):
            t.data[...] = arrays[name]
    fresh = init_head(mc, seed=derive_seed(cfg.data.seed, "head"))
    backbone.head.classifier.data[...] = fresh.classifier.data
    backbone.head.classifier_bias.data[...] = fresh.classifier_bias.data
    if fresh.hidden is not None:
        backbone.head.hidden.data[...] = fresh.hidden.data
        backbone.head.hidden_bias.data[...] = fresh.hidden_bias.data
    backbone.freeze()
    return backbone


def build_bank(cfg: ExperimentConfig, mode: str, length: int | None = None,
               start: int | None = None, end: int | None = None) -> PromptBank:
    p = cfg.prompt
    return init_bank(
        cfg.model.d, cfg.model.layers,
        prompt_len=p.length if length is None else length,
        start_layer=p.start if start is None else start,
        end_layer=p.end if end is None else end,
        mode=PromptMode(mode), seed=derive_seed(cfg.data.seed, "bank"),
    )


def run_train(cfg: ExperimentConfig, out: Path, mode: str, splits: Splits | None = None, *,
              pretrained: Path | None = None, bank: PromptBank | None = None,
              classifier_hidden: int | None = None, eta: float | None = None,
              scenario: str | None = None) -> PromptedModel:
    """Prompt-train (or baseline-train) on the frozen backbone; writes model.ckpt and loss.csv."""
    splits = splits or make_splits(cfg)
    out = Path(out)
    pretrained = pretrained or out.parent / "pretrain" / "backbone.ckpt"
    backbone = load_pretrained(cfg, pretrained, classifier_hidden)
    bank = bank if bank is not None else build_bank(cfg, mode)
    model = PromptedModel(backbone, bank)
    out.mkdir(parents=True, exist_ok=True)
    result = train_loop(splits.train, model, stage_config(cfg, "train"), train_spec(cfg, eta, scenario))
    model.save(out / "model.ckpt")
    result.write_csv(out / "loss.csv")
    return model


def load_trained(cfg: ExperimentConfig, run_dir: Path, mode: str) -> PromptedModel:
    path = Path(run_dir) / "model.ckpt"
    if not path.exists():
        raise DependencyError(f"trained model not found at {path}; run the train stage first")
    arrays = checkpoint.load(path)
    hidden = arrays["head/hidden"].shape[1] if "head/hidden" in arrays else 0
    backbone = init_backbone(model_config(cfg, hidden))
    backbone.freeze()
    layers = sorted({int(k.rsplit("/", 1)[1]) for k in arrays if k.startswith("prompt/")})
    if PromptMode(mode) is PromptMode.NONE:
        bank = build_bank(cfg, mode)
    elif not layers:
        raise DependencyError(f"{path} holds no prompts but mode is {mode!r}")
    else:
        length = arrays[f"prompt/{CASES[0].value}/{layers[0]}"].shape[0]
        bank = build_bank(cfg, mode, length=length, start=layers[0], end=layers[-1])
    model = PromptedModel(backbone, bank)
    model.load(arrays)
    return model


def report_rows(cfg: ExperimentConfig, mode: str, model: PromptedModel, test: Sequence[MultimodalSample],
                train_eta: float, test_eta: float, scenario: str, metric: str | None = None) -> list[dict]:
    metric = metric or cfg.eval.metric
    view = test_view(cfg, test, test_eta, scenario)
    ev = evaluate(model, view, metric)
    base = dict(mode=mode, scenario=scenario, train_eta=_fmt(train_eta), test_eta=_fmt(test_eta),
                metric=metric, seed=cfg.data.seed, config_hash=cfg.digest())
    rows = [dict(base, case="overall", value=repr(ev.overall))]
    for case in CASES:
        if case in ev.per_case:
            rows.append(dict(base, case=case.value, value=repr(ev.per_case[case])))
    return rows


def run_eval(cfg: ExperimentConfig, out: Path, mode: str, splits: Splits | None = None,
             model: PromptedModel | None = None) -> Path:
    splits = splits or make_splits(cfg)
    out = Path(out)
    model = model or load_trained(cfg, out, mode)
    scenario = cfg.missing.test_scenario or cfg.missing.scenario
    rows = report_rows(cfg, mode, model, splits.test, cfg.missing.train_eta, cfg.missing.test_eta, scenario)
    path = out / "report.csv"
    write_csv(path, REPORT_COLUMNS, rows)
    return path


def write_manifest(cfg: ExperimentConfig, out: Path, stages: list[str], mode: str | None) -> Path:
    seeds = {k: derive_seed(cfg.data.seed, k) for k in ("pretrain", "backbone", "head", "bank", "train")}
    payload = {
        "config_hash": cfg.digest(),
        "config": cfg.to_text(),
        "mode": mode,
        "stages": stages,
        "seed": cfg.data.seed,
        "derived_seeds": seeds,
    }
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def run_pipeline(cfg: ExperimentConfig, out: str | Path, mode: str | None = None) -> Path:
    """pretrain -> freeze -> prompt-train -> evaluate; returns the report path."""
    mode = PromptMode(mode or cfg.prompt.mode).value
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    write_manifest(cfg, out, ["pretrain", "train", "eval"], mode)
    run_pretrain(cfg, out, splits)
    model = run_train(cfg, out / mode, mode, splits)
    return run_eval(cfg, out / mode, mode, splits, model)


# sweeps -------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:g}"


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _ensure_pretrained(cfg: ExperimentConfig, out: Path, splits: Splits) -> Path:
    path = out / "pretrain" / "backbone.ckpt"
    stamp = out / "pretrain" / "config_hash"
    if not (path.exists() and stamp.exists() and stamp.read_text().strip() == pretrain_digest(cfg)):
        run_pretrain(cfg, out, splits)
    return path


def _plot_script(csv_name: str, title: str, x_col: int, y_col: int, xlabel: str) -> str:
    return (
        f"# gnuplot script; run: gnuplot {csv_name[:-4]}.gp\n"
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\n"
        f"set xlabel '{xlabel}'\n"
        "set ylabel 'metric'\n"
        "set terminal pngcairo size 800,500\n"
        f"set output '{csv_name[:-4]}.png'\n"
        f"plot '{csv_name}' using {x_col}:{y_col} with linespoints\n"
    )


GRID_ETA_COLUMNS = ["mode", "scenario", "train_eta", "test_scenario", "test_eta", "metric", "value",
                    "seed", "config_hash"]


def sweep_missing_rate(cfg: ExperimentConfig, out: str | Path, etas: Sequence[float] | None = None,
                       scenarios: Sequence[str] | None = None, test_etas: Sequence[float] | None = None,
                       test_scenario: str | None = None, mode: str | None = None) -> Path:
    """Train once per (scenario, train eta); evaluate at every test eta."""
    mode = PromptMode(mode or cfg.prompt.mode).value
    etas = list(etas if etas is not None else cfg.sweep.etas)
    test_etas = list(test_etas if test_etas is not None else (cfg.sweep.test_etas or etas))
    scenarios = list(scenarios if scenarios is not None else cfg.sweep.scenarios)
    for eta in etas + test_etas:
        if not 0 <= eta <= 100:
            raise ConfigError(f"missing rate {eta} outside [0, 100]")
    out = Path(out)
    root = out / "sweep-eta"
    root.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    pre = _ensure_pretrained(cfg, out, splits)
    rows = []
    for scenario in scenarios:
        for eta in etas:
            cell = root / f"{mode}-{scenario}-{_fmt(eta)}"
            model = run_train(cfg, cell, mode, splits, pretrained=pre, eta=eta, scenario=scenario)
            tscen = test_scenario or cfg.missing.test_scenario or scenario
            for teta in test_etas:
                ev = evaluate(model, test_view(cfg, splits.test, teta, tscen), cfg.eval.metric)
                rows.append(dict(mode=mode, scenario=scenario, train_eta=_fmt(eta), test_scenario=tscen,
                                 test_eta=_fmt(teta), metric=cfg.eval.metric, value=repr(ev.overall),
                                 seed=cfg.data.seed, config_hash=cfg.digest()))
    path = root / "grid.csv"
    write_csv(path, GRID_ETA_COLUMNS, rows)
    (root / "grid.gp").write_text(_plot_script("grid.csv", "metric vs test missing rate", 5, 7, "test eta (%)"))
    return path


def default_layer_pairs(n_layers: int) -> list[tuple[int, int]]:
    """Every contiguous range; the early half ``(0, N/2 - 1)`` is always among them."""
    return [(s, e) for s in range(n_layers) for e in range(s, n_layers)]


def sweep_prompt_layers(cfg: ExperimentConfig, out: str | Path,
                        pairs: Sequence[tuple[int, int]] | None = None, mode: str | None = None) -> Path:
    mode = PromptMode(mode or cfg.prompt.mode).value
    n = cfg.model.layers
    if pairs is None:
        pairs = ([parse_layer_pair(p, n) for p in cfg.sweep.layer_pairs]
                 if cfg.sweep.layer_pairs else default_layer_pairs(n))
    out = Path(out)
    root = out / "sweep-layers"
    root.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    pre = _ensure_pretrained(cfg, out, splits)
    scenario = cfg.missing.test_scenario or cfg.missing.scenario
    rows = []
    for start, end in pairs:
        parse_layer_pair(f"{start}-{end}", n)
        bank = build_bank(cfg, mode, start=start, end=end)
        model = run_train(cfg, root / f"{mode}-{start}-{end}", mode, splits, pretrained=pre, bank=bank)
        ev = evaluate(model, test_view(cfg, splits.test, cfg.missing.test_eta, scenario), cfg.eval.metric)
        rows.append(dict(mode=mode, start=start, end=end, num_layers=end - start + 1,
                         metric=cfg.eval.metric, value=repr(ev.overall),
                         seed=cfg.data.seed, config_hash=cfg.digest()))
    path = root / "grid.csv"
    write_csv(path, ["mode", "start", "end", "num_layers", "metric", "value", "seed", "config_hash"], rows)
    (root / "grid.gp").write_text(_plot_script("grid.csv", "metric vs prompted layers", 4, 6, "prompted layers"))
    return path


def augmented_hidden_width(prompt_params: int, d: int, num_classes: int) -> int:
    """Hidden width whose extra head parameters best match ``prompt_params``."""
    # extra = H*(d + 1 + C) + C - (d*C + C)
    return max(1, int(round((prompt_params + d * num_classes) / (d + 1 + num_classes))))


def full_scale_ratio(length: int) -> float:
    """Prompt/backbone ratio at full size with prompts on layers 0-5."""
    bank = init_bank(768, 12, prompt_len=length, start_layer=0, end_layer=5, mode=PromptMode.INPUT)
    return count_params(ModelConfig.full_scale(), bank)[2]


def sweep_prompt_length(cfg: ExperimentConfig, out: str | Path, lengths: Sequence[int] | None = None,
                        mode: str | None = None) -> Path:
    """Metric and parameter ratio per prompt length, plus a parameter-matched baseline."""
    mode = PromptMode(mode or cfg.prompt.mode).value
    if lengths is None:
        lengths = cfg.sweep.lengths or [n for n in (1, 2, 4, 8, 16, 32)
                                        if mode != PromptMode.ATTENTION.value or n % 2 == 0]
    lengths = list(lengths)
    for length in lengths:
        if length < 1:
            raise ConfigError(f"prompt length must be >= 1, got {length}")
        if mode == PromptMode.ATTENTION.value and length % 2:
            raise ConfigError(f"attention-level prompts need even lengths, got {length}")
    out = Path(out)
    root = out / "sweep-length"
    root.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    pre = _ensure_pretrained(cfg, out, splits)
    scenario = cfg.missing.test_scenario or cfg.missing.scenario
    view = test_view(cfg, splits.test, cfg.missing.test_eta, scenario)
    base = dict(metric=cfg.eval.metric, seed=cfg.data.seed, config_hash=cfg.digest())
    rows = []
    for length in lengths:
        bank = build_bank(cfg, mode, length=length)
        model = run_train(cfg, root / f"{mode}-{length}", mode, splits, pretrained=pre, bank=bank)
        _, _, ratio = count_params(model.backbone, bank)
        ev = evaluate(model, view, cfg.eval.metric)
        rows.append(dict(base, mode=mode, length=length, prompt_params=bank.param_count(), ratio=repr(ratio),
                         full_scale_ratio=repr(full_scale_ratio(length)), value=repr(ev.overall)))

        hidden = augmented_hidden_width(bank.param_count(), cfg.model.d, cfg.data.classes)
        empty = build_bank(cfg, "baseline")
        aug = run_train(cfg, root / f"baseline_aug-{length}", "baseline", splits, pretrained=pre,
                        bank=empty, classifier_hidden=hidden)
        plain = count_params(model_config(cfg, 0))[0]
        extra = count_params(aug.backbone)[0] - plain
        frozen = count_params(aug.backbone)[1]
        ev = evaluate(aug, view, cfg.eval.metric)
        rows.append(dict(base, mode="baseline_aug", length=length, prompt_params=extra, ratio=repr(extra / frozen),
                         full_scale_ratio="", value=repr(ev.overall)))
    path = root / "grid.csv"
    write_csv(path, ["mode", "length", "prompt_params", "ratio", "full_scale_ratio", "metric", "value",
                     "seed", "config_hash"], rows)
    (root / "grid.gp").write_text(_plot_script("grid.csv", "metric vs prompt length", 2, 7, "prompt length"))
    return path


def params_table(cfg: ExperimentConfig) -> list[dict]:
    """Parameter accounting for the configured desk model and the full-size one."""
    rows = []
    for label, mc, bank in (
        ("desk", model_config(cfg), build_bank(cfg, cfg.prompt.mode)),
        ("full", ModelConfig.full_scale(),
         init_bank(768, 12, 16, 0, 5, PromptMode.INPUT)),
    ):
        trainable, frozen, ratio = count_params(mc, bank)
        rows.append(dict(scale=label, prompt_params=bank.param_count(), trainable=trainable,
                         frozen=frozen, ratio=ratio))
    return rows


def checkpoint_param_count(path: str | Path) -> dict[str, int]:
    """Brute-force entry count per name prefix straight from a checkpoint file."""
    counts: dict[str, int] = {"backbone": 0, "head": 0, "prompt": 0}
    for name, arr in checkpoint.load(path).items():
        counts[name.split("/", 1)[0]] += int(np.prod(arr.shape))
    return counts
