"""Frozen-backbone training: only prompts, pooler and classifier move."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .data import MissingSpec, MultimodalSample, apply_case, derive_seed, partition, resample_cases_per_epoch
from .embedding import JointSequence, Vocab, assemble_sequence, patchify_image, tokenize_text
from .errors import ConfigError, NumericError, RangeError
from .model import BackboneParams, ForwardTrace, forward
from .optim import OptimizerState, adamw_step, lr_at_step
from .prompts import PromptBank, PromptMode
from .tensor import Tensor, log_softmax_rows, mean_all, mul, softplus, sum_all

log = logging.getLogger(__name__)

LOSS_KINDS = ("cross_entropy_multiclass", "binary_cross_entropy_multilabel")


@dataclass
class TrainConfig:
    total_steps: int = 600
    batch_size: int = 16
    base_lr: float = 1e-2
    weight_decay: float = 2e-2
    warmup_fraction: float = 0.1
    loss_kind: str = "cross_entropy_multiclass"
    seed: int = 0
    resample_cases: bool = False

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")


def loss(logits: Tensor, label, kind: str | None = None) -> Tensor:
    """Cross-entropy for an int label, mean binary cross-entropy for a bit vector."""
    n_classes = logits.cols
    if kind is None:
        kind = "cross_entropy_multiclass" if np.isscalar(label) else "binary_cross_entropy_multilabel"
    if kind == "cross_entropy_multiclass":
        y = int(label)
        if not 0 <= y < n_classes:
            raise RangeError(f"label {y} outside [0, {n_classes})")
        onehot = np.zeros((1, n_classes))
        onehot[0, y] = -1.0
        return sum_all(mul(log_softmax_rows(logits), Tensor(onehot)))
    target = np.asarray(label, dtype=np.float64).reshape(1, -1)
    if target.shape[1] != n_classes:
        raise RangeError(f"label arity {target.shape[1]} != {n_classes} classes")
    # softplus(x) - y*x == BCE(sigmoid(x), y)
    return mean_all(softplus(logits) - mul(logits, Tensor(target)))


class PromptedModel:
    """Vocabulary, backbone and prompt bank wired together."""

    def __init__(self, backbone: BackboneParams, bank: PromptBank | None = None, vocab: Vocab | None = None):
        self.backbone = backbone
        self.bank = bank
        self.vocab = vocab or Vocab.default(backbone.config.vocab_size)
        # id(sample) -> (sample, sequence); the sample is kept alive so ids stay unique
        self._cache: dict[int, tuple[MultimodalSample, JointSequence]] = {}

    def embed(self, sample: MultimodalSample) -> JointSequence:
        frozen = not self.backbone.embed.token.requires_grad
        if frozen:
            hit = self._cache.get(id(sample))
            if hit is not None:
                return hit[1]
        ids = tokenize_text(sample.text, self.vocab)
        seq = assemble_sequence(ids, patchify_image(sample.image), self.backbone.embed, sample.case)
        if frozen:
            self._cache[id(sample)] = (sample, seq)
        return seq

    def forward(self, sample: MultimodalSample) -> ForwardTrace:
        return forward(self.embed(sample), self.backbone, self.bank)

    def logits(self, sample: MultimodalSample) -> np.ndarray:
        return self.forward(sample).logits.data[0]

    def clear_cache(self) -> None:
        self._cache.clear()

    def trainable(self) -> list[Tensor]:
        params = self.backbone.named_tensors().values()
        out = [t for t in params if t.requires_grad]
        if self.bank is not None:
            out += self.bank.tensors()
        return out

    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.backbone.named_tensors())
        if self.bank is not None:
            out.update(self.bank.named_tensors())
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors().items()}

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.state_arrays())

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        self.backbone.load_arrays(arrays)
        if self.bank is not None:
            self.bank.load_arrays(arrays)
        self.clear_cache()


def train_step(batch: Sequence[MultimodalSample], model: PromptedModel, state: OptimizerState,
               lr_now: float, loss_kind: str | None = None) -> float:
    """Mean loss over ``batch``, backward, one AdamW update of the trainable set."""
    if not batch:
        raise ValueError("empty batch")
    params = model.trainable()
    for p in params:
        p.zero_grad()
    total = 0.0
    inv = 1.0 / len(batch)
    for sample in batch:
        trace = model.forward(sample)
        l = loss(trace.logits, sample.label, loss_kind)
        value = l.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} on sample {sample.uid} ({sample.case})")
        total += value
        (l * inv).backward()
    adamw_step(params, state, lr_now)
    return total * inv


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [row[2] for row in self.history]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "loss"])
            for step, lr, value in self.history:
                w.writerow([step, repr(lr), repr(value)])


def train_loop(samples: Sequence[MultimodalSample], model: PromptedModel, config: TrainConfig,
               spec: MissingSpec | None = None) -> TrainResult:
    """Shuffled mini-batch training for ``config.total_steps`` steps.

    ``samples`` must be modality-complete; ``spec`` decides which of them
    lose a modality (fixed once, or redrawn each epoch when
    ``config.resample_cases`` is set).
    """
    n = len(samples)
    state = OptimizerState(base_lr=config.base_lr, weight_decay=config.weight_decay)
    result = TrainResult()

    def cases_for(epoch: int):
        if spec is None:
            return None
        if config.resample_cases:
            return resample_cases_per_epoch(n, spec, epoch)
        return partition(n, spec)

    fixed = None
    epoch, cursor, order, view = -1, n, None, None
    for step in range(config.total_steps):
        if cursor + config.batch_size > n:
            epoch += 1
            cursor = 0
            order = np.random.default_rng(derive_seed(config.seed, "order", epoch)).permutation(n)
            if spec is not None and (config.resample_cases or fixed is None):
                cases = cases_for(epoch)
                fixed = [apply_case(s, c) for s, c in zip(samples, cases)]
            view = fixed if fixed is not None else list(samples)
        batch = [view[i] for i in order[cursor:cursor + config.batch_size]]
        cursor += config.batch_size
        lr = lr_at_step(step, config.total_steps, config.base_lr, config.warmup_fraction)
        value = train_step(batch, model, state, lr, config.loss_kind)
        result.history.append((step, lr, value))
        if step % 100 == 0:
            log.debug("step %d lr %.5f loss %.4f", step, lr, value)
    return result


def pretrain(samples: Sequence[MultimodalSample], model: PromptedModel, config: TrainConfig) -> TrainResult:
    """Train the whole backbone on complete data, then freeze it."""
    model.backbone.unfreeze()
    model.clear_cache()
    try:
        return train_loop(samples, model, config, spec=None)
    finally:
        model.backbone.freeze()
        model.clear_cache()
