"""Missing-aware prompt bank: one learnable prompt per (missing case, layer)."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RangeError
from .tensor import Tensor, slice_rows


class MissingCase(enum.Enum):
    COMPLETE = "complete"
    MISSING_TEXT = "missing_text"    # image-only sample
    MISSING_IMAGE = "missing_image"  # text-only sample

    def __str__(self) -> str:
        return self.value


CASES = (MissingCase.COMPLETE, MissingCase.MISSING_TEXT, MissingCase.MISSING_IMAGE)


class PromptMode(enum.Enum):
    NONE = "baseline"
    INPUT = "input"
    ATTENTION = "attention"


@dataclass
class PromptBank:
    mode: PromptMode
    prompt_len: int
    start_layer: int
    end_layer: int
    prompts: dict[MissingCase, list[Tensor]] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return self.end_layer - self.start_layer + 1 if self.prompts else 0

    def covers(self, layer: int) -> bool:
        return bool(self.prompts) and self.start_layer <= layer <= self.end_layer

    def select(self, case: MissingCase, layer: int) -> Tensor:
        """The prompt for ``case`` at ``layer``; the same object on every call."""
        if not self.covers(layer):
            raise RangeError(
                f"layer {layer} outside prompted range [{self.start_layer}, {self.end_layer}]"
            )
        return self.prompts[case][layer - self.start_layer]

    def tensors(self) -> list[Tensor]:
        return [p for case in CASES if case in self.prompts for p in self.prompts[case]]

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            f"prompt/{case.value}/{self.start_layer + i}": p
            for case in CASES if case in self.prompts
            for i, p in enumerate(self.prompts[case])
        }

    def param_count(self) -> int:
        return sum(p.data.size for p in self.tensors())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_tensors().items():
            t.data[...] = arrays[name]


def init_bank(
    d: int,
    n_layers: int,
    prompt_len: int = 16,
    start_layer: int = 0,
    end_layer: int = 5,
    mode: PromptMode = PromptMode.ATTENTION,
    seed: int = 0,
    std: float = 0.02,
) -> PromptBank:
    """Gaussian-initialised bank covering layers ``start_layer..end_layer`` inclusive.

    ``mode=PromptMode.NONE`` returns an empty bank (the baseline).
    """
    mode = PromptMode(mode)
    if mode is PromptMode.NONE:
        return PromptBank(mode, prompt_len, start_layer, end_layer, {})
    if prompt_len < 1:
        raise ConfigError(f"prompt length must be >= 1, got {prompt_len}")
    if mode is PromptMode.ATTENTION and prompt_len % 2:
        raise ConfigError(f"attention-level prompts need an even length, got {prompt_len}")
    if not 0 <= start_layer <= end_layer:
        raise ConfigError(f"invalid prompted range ({start_layer}, {end_layer})")
    if end_layer >= n_layers:
        raise RangeError(f"end layer {end_layer} >= number of layers {n_layers}")
    rng = np.random.default_rng(seed)
    n_p = end_layer - start_layer + 1
    prompts = {
        case: [
            Tensor(rng.normal(0.0, std, size=(prompt_len, d)), requires_grad=True,
                   name=f"prompt/{case.value}/{start_layer + i}")
            for i in range(n_p)
        ]
        for case in CASES
    }
    return PromptBank(mode, prompt_len, start_layer, end_layer, prompts)


def split_kv(prompt: Tensor) -> tuple[Tensor, Tensor]:
    """Split a prompt into key and value halves of ``L_p / 2`` rows each."""
    if prompt.rows % 2:
        raise ConfigError(f"cannot split a prompt of odd length {prompt.rows}")
    half = prompt.rows // 2
    return slice_rows(prompt, 0, half), slice_rows(prompt, half, prompt.rows)
