"""Experiment configuration: INI-style ``key = value`` text under section headers.

Every section maps onto one dataclass below; unknown sections or keys are
rejected with the offending line number.  ``to_text`` renders the canonical
form that is hashed into run manifests.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class DataConfig:
    n: int = 2000
    classes: int = 4
    seed: int = 0
    test_fraction: float = 0.25
    pretrain_n: int = 1500
    text_words: int = 8
    keywords: int = 3
    hint_fidelity: float = 0.85
    image_size: int = 8
    channels: int = 3
    patch_size: int = 4
    image_noise: float = 0.5
    hint_amplitude: float = 0.4


@dataclass
class ModelSection:
    d: int = 32
    layers: int = 6
    max_text_len: int = 16
    vocab_size: int = 256
    classifier_hidden: int = 0


@dataclass
class PromptConfig:
    mode: str = "attention"
    length: int = 16
    start: int = 0
    end: int = 2


@dataclass
class MissingConfig:
    scenario: str = "missing_both"
    train_eta: float = 70.0
    test_scenario: str = ""
    test_eta: float = 70.0
    resample_per_epoch: bool = False


@dataclass
class StageConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 1e-2
    weight_decay: float = 2e-2
    warmup: float = 0.1


@dataclass
class EvalConfig:
    metric: str = "accuracy"
    loss: str = "cross_entropy_multiclass"


@dataclass
class SweepConfig:
    etas: list[float] = field(default_factory=lambda: [10.0, 30.0, 50.0, 70.0, 90.0])
    test_etas: list[float] = field(default_factory=list)
    scenarios: list[str] = field(default_factory=lambda: ["missing_text", "missing_image", "missing_both"])
    layer_pairs: list[str] = field(default_factory=list)
    # empty: 1, 2, 4, 8, 16, 32 (odd lengths dropped in attention mode)
    lengths: list[int] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    missing: MissingConfig = field(default_factory=MissingConfig)
    pretrain: StageConfig = field(default_factory=lambda: StageConfig(steps=800, lr=1e-3, weight_decay=1e-2))
    train: StageConfig = field(default_factory=StageConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_text(self) -> str:
        lines = []
        for sec in fields(self):
            lines.append(f"[{sec.name}]")
            obj = getattr(self, sec.name)
            for f in fields(obj):
                lines.append(f"{f.name} = {_render(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some keys changed: ``cfg.replace(prompt={"mode": "input"})``."""
        out = dataclasses.replace(self)
        for name in (f.name for f in fields(self)):
            setattr(out, name, dataclasses.replace(getattr(self, name), **sections.get(name, {})))
        return out


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_render(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _convert(raw: str, tp):
    origin = typing.get_origin(tp)
    if origin is list:
        (inner,) = typing.get_args(tp)
        return [_convert(x.strip(), inner) for x in raw.split(",") if x.strip()]
    if tp is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return tp(raw)


def _line_of(text: str, section: str, key: str | None = None) -> int:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return no
    return 0


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    cfg = ExperimentConfig()
    sections = {f.name: f for f in fields(cfg)}
    for sec in parser.sections():
        if sec not in sections:
            raise ConfigError(f"line {_line_of(text, sec)}: unknown section [{sec}]")
        obj = getattr(cfg, sec)
        hints = typing.get_type_hints(type(obj))
        for key, raw in parser.items(sec):
            if key not in hints:
                raise ConfigError(f"line {_line_of(text, sec, key)}: unknown key {key!r} in [{sec}]")
            try:
                setattr(obj, key, _convert(raw, hints[key]))
            except ValueError as exc:
                raise ConfigError(f"line {_line_of(text, sec, key)}: bad value for {sec}.{key}: {exc}") from None
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def validate(cfg: ExperimentConfig) -> None:
    from .data import Scenario
    from .prompts import PromptMode

    try:
        PromptMode(cfg.prompt.mode)
        Scenario(cfg.missing.scenario)
        if cfg.missing.test_scenario:
            Scenario(cfg.missing.test_scenario)
        for s in cfg.sweep.scenarios:
            Scenario(s)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for eta in [cfg.missing.train_eta, cfg.missing.test_eta, *cfg.sweep.etas, *cfg.sweep.test_etas]:
        if not 0 <= eta <= 100:
            raise ConfigError(f"missing rate {eta} outside [0, 100]")
    if not 0 < cfg.data.test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    if cfg.prompt.end >= cfg.model.layers:
        raise ConfigError(f"prompt end layer {cfg.prompt.end} >= model layers {cfg.model.layers}")
    if cfg.model.max_text_len < 2:
        raise ConfigError("max_text_len must be >= 2")
    for stage in (cfg.pretrain, cfg.train):
        if stage.steps < 1 or stage.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
    if cfg.eval.metric not in ("accuracy", "f1_macro", "auroc"):
        raise ConfigError(f"unknown metric {cfg.eval.metric!r}")


def parse_layer_pair(text: str, n_layers: int) -> tuple[int, int]:
    from .errors import RangeError

    m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"layer pair must look like 'start-end', got {text!r}")
    start, end = int(m.group(1)), int(m.group(2))
    if not 0 <= start <= end < n_layers:
        raise RangeError(f"layer pair ({start}, {end}) invalid for {n_layers} layers")
    return start, end
