"""AdamW with decoupled weight decay and a warmup / linear-decay schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvariantError, RangeError
from .tensor import Tensor


@dataclass
class OptimizerState:
    base_lr: float = 1e-2
    weight_decay: float = 2e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    # keyed by id(param); only trainable params ever get an entry
    first_moment: dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: dict[int, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Sequence[Tensor], state: OptimizerState, lr_now: float) -> None:
    """Apply one AdamW update in place to every trainable tensor in ``params``.

    Gradients are read from ``param.grad``.  Frozen tensors are skipped
    without being touched.
    """
    if lr_now < 0:
        raise RangeError(f"learning rate must be non-negative, got {lr_now}")
    trainable = [p for p in params if p.requires_grad]
    for p in trainable:
        if p.grad is None:
            raise InvariantError(f"trainable parameter {p!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p in trainable:
        key = id(p)
        m = state.first_moment.get(key)
        if m is None:
            m = state.first_moment[key] = np.zeros_like(p.data)
            state.second_moment[key] = np.zeros_like(p.data)
        v = state.second_moment[key]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr_now * state.weight_decay
        p.data -= lr_now * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def lr_at_step(step: int, total_steps: int, base_lr: float, warmup_fraction: float = 0.1) -> float:
    """Linear warmup from 0 to ``base_lr`` then linear decay to 0 at ``total_steps``."""
    if not 0 < warmup_fraction < 1:
        raise ConfigError(f"warmup_fraction must lie in (0, 1), got {warmup_fraction}")
    if step < 0 or step > total_steps:
        raise RangeError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_fraction * total_steps
    if step <= warm:
        return base_lr * step / warm if warm > 0 else base_lr
    return base_lr * (total_steps - step) / (total_steps - warm)
