"""Pre-norm transformer encoder with input-level and attention-level prompting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from .embedding import EmbeddingTables, JointSequence
from .errors import ConfigError, DimensionError
from .prompts import PromptBank, PromptMode, split_kv
from .tensor import (
    Tensor,
    add,
    concat_rows,
    gelu,
    layer_norm,
    matmul,
    scale,
    slice_rows,
    softmax_rows,
    tanh,
    transpose,
)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d: int = 32
    n_layers: int = 6
    mlp_ratio: int = 4
    max_text_len: int = 16
    num_patches: int = 4
    patch_dim: int = 48
    num_classes: int = 4
    classifier_hidden: int = 0

    @classmethod
    def full_scale(cls, num_classes: int = 23) -> "ModelConfig":
        """Base-size vision-language geometry (384x384 images, 32x32 patches, 40 text positions)."""
        return cls(vocab_size=30522, d=768, n_layers=12, max_text_len=40,
                   num_patches=144, patch_dim=32 * 32 * 3, num_classes=num_classes)

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        d, h = self.d, self.d * self.mlp_ratio
        shapes = {
            "backbone/embed/token": (self.vocab_size, d),
            "backbone/embed/text_pos": (self.max_text_len, d),
            "backbone/embed/patch_proj": (self.patch_dim, d),
            "backbone/embed/patch_bias": (1, d),
            "backbone/embed/image_task": (1, d),
            "backbone/embed/image_pos": (self.num_patches + 1, d),
            "backbone/embed/modality": (2, d),
        }
        for i in range(self.n_layers):
            for name, shape in _layer_shapes(d, h).items():
                shapes[f"backbone/layer{i}/{name}"] = shape
        shapes["backbone/final/ln_gain"] = (1, d)
        shapes["backbone/final/ln_bias"] = (1, d)
        shapes.update(_head_shapes(d, self.num_classes, self.classifier_hidden))
        return shapes


def _layer_shapes(d: int, h: int) -> dict[str, tuple[int, int]]:
    return {
        "ln1_gain": (1, d), "ln1_bias": (1, d),
        "w_q": (d, d), "w_k": (d, d), "w_v": (d, d),
        "w_o": (d, d), "b_o": (1, d),
        "ln2_gain": (1, d), "ln2_bias": (1, d),
        "w_1": (d, h), "b_1": (1, h),
        "w_2": (h, d), "b_2": (1, d),
    }


def _head_shapes(d: int, num_classes: int, hidden: int) -> dict[str, tuple[int, int]]:
    shapes = {"head/pooler": (d, d), "head/pooler_bias": (1, d)}
    if hidden:
        shapes["head/hidden"] = (d, hidden)
        shapes["head/hidden_bias"] = (1, hidden)
        shapes["head/classifier"] = (hidden, num_classes)
    else:
        shapes["head/classifier"] = (d, num_classes)
    shapes["head/classifier_bias"] = (1, num_classes)
    return shapes


@dataclass
class LayerWeights:
    ln1_gain: Tensor
    ln1_bias: Tensor
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor

    @property
    def d(self) -> int:
        return self.w_q.rows


@dataclass
class Head:
    pooler: Tensor
    pooler_bias: Tensor
    classifier: Tensor
    classifier_bias: Tensor
    hidden: Tensor | None = None
    hidden_bias: Tensor | None = None

    def tensors(self) -> list[Tensor]:
        return [t for t in (self.pooler, self.pooler_bias, self.hidden, self.hidden_bias,
                            self.classifier, self.classifier_bias) if t is not None]

    def __call__(self, feature: Tensor) -> Tensor:
        x = tanh(add(matmul(feature, self.pooler), self.pooler_bias))
        if self.hidden is not None:
            x = gelu(add(matmul(x, self.hidden), self.hidden_bias))
        return add(matmul(x, self.classifier), self.classifier_bias)


@dataclass
class BackboneParams:
    config: ModelConfig
    embed: EmbeddingTables
    layers: list[LayerWeights]
    final_gain: Tensor
    final_bias: Tensor
    head: Head

    def named_tensors(self) -> dict[str, Tensor]:
        out = {f"backbone/embed/{f.name}": getattr(self.embed, f.name) for f in fields(self.embed)}
        for i, layer in enumerate(self.layers):
            for f in fields(layer):
                out[f"backbone/layer{i}/{f.name}"] = getattr(layer, f.name)
        out["backbone/final/ln_gain"] = self.final_gain
        out["backbone/final/ln_bias"] = self.final_bias
        out.update(self.head_named_tensors())
        return out

    def head_named_tensors(self) -> dict[str, Tensor]:
        h = self.head
        out = {"head/pooler": h.pooler, "head/pooler_bias": h.pooler_bias}
        if h.hidden is not None:
            out["head/hidden"] = h.hidden
            out["head/hidden_bias"] = h.hidden_bias
        out["head/classifier"] = h.classifier
        out["head/classifier_bias"] = h.classifier_bias
        return out

    def frozen_tensors(self) -> Iterator[Tensor]:
        for name, t in self.named_tensors().items():
            if name.startswith("backbone/"):
                yield t

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        return {name: t.shape for name, t in self.named_tensors().items()}

    def freeze(self) -> None:
        """Freeze every backbone tensor; leave the pooler and classifier trainable."""
        for t in self.frozen_tensors():
            t.requires_grad = False
            t.grad = None
        for t in self.head.tensors():
            t.requires_grad = True

    def unfreeze(self) -> None:
        for t in self.named_tensors().values():
            t.requires_grad = True

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_tensors().items():
            if arrays[name].shape != t.shape:
                raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape} != {t.shape}")
            t.data[...] = arrays[name]


def _init_array(name: str, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit("/", 1)[-1]
    if "gain" in leaf:
        return np.ones(shape)
    if "bias" in leaf or leaf.startswith("b_"):
        return np.zeros(shape)
    if name.startswith("backbone/embed/") and leaf != "patch_proj":
        return rng.normal(0.0, 0.1, size=shape)
    return rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)


def init_head(config: ModelConfig, seed: int = 0) -> Head:
    rng = np.random.default_rng(seed)
    t = {name: Tensor(_init_array(name, shape, rng), requires_grad=True, name=name)
         for name, shape in _head_shapes(config.d, config.num_classes, config.classifier_hidden).items()}
    return Head(
        pooler=t["head/pooler"],
        pooler_bias=t["head/pooler_bias"],
        classifier=t["head/classifier"],
        classifier_bias=t["head/classifier_bias"],
        hidden=t.get("head/hidden"),
        hidden_bias=t.get("head/hidden_bias"),
    )


def init_backbone(config: ModelConfig, seed: int = 0) -> BackboneParams:
    """Randomly initialised, fully trainable backbone and head."""
    rng = np.random.default_rng(seed)
    t = {name: Tensor(_init_array(name, shape, rng), requires_grad=True, name=name)
         for name, shape in config.param_shapes().items()}
    embed = EmbeddingTables(**{f.name: t[f"backbone/embed/{f.name}"] for f in fields(EmbeddingTables)})
    layers = [
        LayerWeights(**{f.name: t[f"backbone/layer{i}/{f.name}"] for f in fields(LayerWeights)})
        for i in range(config.n_layers)
    ]
    head = Head(
        pooler=t["head/pooler"],
        pooler_bias=t["head/pooler_bias"],
        classifier=t["head/classifier"],
        classifier_bias=t["head/classifier_bias"],
        hidden=t.get("head/hidden"),
        hidden_bias=t.get("head/hidden_bias"),
    )
    return BackboneParams(config, embed, layers, t["backbone/final/ln_gain"],
                          t["backbone/final/ln_bias"], head)


# attention blocks -------------------------------------------------------------


def _attend(x: Tensor, layer: LayerWeights, p_k: Tensor | None, p_v: Tensor | None) -> Tensor:
    """Single-head scaled dot-product attention over optionally prompted keys/values."""
    q = matmul(x, layer.w_q)
    k = matmul(x, layer.w_k)
    v = matmul(x, layer.w_v)
    if p_k is not None:
        k = concat_rows([p_k, k])
        v = concat_rows([p_v, v])
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(layer.d))
    return matmul(softmax_rows(scores), v)


def _block(h: Tensor, layer: LayerWeights, p_k: Tensor | None = None, p_v: Tensor | None = None) -> Tensor:
    if h.cols != layer.d:
        raise DimensionError(f"hidden width {h.cols} != layer width {layer.d}")
    x = layer_norm(h, layer.ln1_gain, layer.ln1_bias)
    a = add(matmul(_attend(x, layer, p_k, p_v), layer.w_o), layer.b_o)
    h = add(h, a)
    x = layer_norm(h, layer.ln2_gain, layer.ln2_bias)
    m = add(matmul(gelu(add(matmul(x, layer.w_1), layer.b_1)), layer.w_2), layer.b_2)
    return add(h, m)


def msa_plain(h: Tensor, layer: LayerWeights) -> Tensor:
    """One pre-norm encoder block (norm, MSA, residual, norm, MLP, residual)."""
    return _block(h, layer)


def attach_input_level(p: Tensor, h: Tensor) -> Tensor:
    """Prepend prompt rows to the sequence."""
    if p.cols != h.cols:
        raise DimensionError(f"prompt width {p.cols} != feature width {h.cols}")
    if p.rows < 1:
        raise ConfigError("prompt length must be >= 1")
    return concat_rows([p, h])


def msa_attention_prompted(h: Tensor, p_k: Tensor, p_v: Tensor, layer: LayerWeights) -> Tensor:
    """Encoder block whose keys/values are prefixed by ``p_k`` / ``p_v``; length is preserved."""
    if p_k.shape != p_v.shape:
        raise DimensionError(f"key prompt {p_k.shape} and value prompt {p_v.shape} differ")
    if p_k.cols != layer.d:
        raise DimensionError(f"prompt width {p_k.cols} != layer width {layer.d}")
    return _block(h, layer, p_k, p_v)


# full forward -------------------------------------------------------------------


@dataclass
class ForwardTrace:
    lengths: list[int]
    output_length: int
    text_task_index: int
    feature: Tensor
    logits: Tensor = field(repr=False)


def forward(seq: JointSequence, backbone: BackboneParams, bank: PromptBank | None = None) -> ForwardTrace:
    h = seq.tokens
    idx = seq.text_task_index
    case = seq.missing_case
    lengths = []
    for i, layer in enumerate(backbone.layers):
        lengths.append(h.rows)
        if bank is not None and bank.covers(i):
            p = bank.select(case, i)
            if bank.mode is PromptMode.INPUT:
                h = msa_plain(attach_input_level(p, h), layer)
                idx += p.rows
            else:
                p_k, p_v = split_kv(p)
                h = msa_attention_prompted(h, p_k, p_v, layer)
        else:
            h = msa_plain(h, layer)
    out_len = h.rows
    # layer norm is row-wise, so only the pooled row needs normalising
    feat = layer_norm(slice_rows(h, idx, idx + 1), backbone.final_gain, backbone.final_bias)
    logits = backbone.head(feat)
    return ForwardTrace(lengths, out_len, idx, feat, logits)


def count_params(backbone, bank: PromptBank | None = None) -> tuple[int, int, float]:
    """``(trainable, frozen, prompt/frozen ratio)``.

    ``backbone`` may be a :class:`BackboneParams` or a shape-only
    :class:`ModelConfig`.  The ratio leaves the task head out of both sides.
    """
    shapes = backbone.param_shapes()
    frozen = sum(r * c for name, (r, c) in shapes.items() if name.startswith("backbone/"))
    head = sum(r * c for name, (r, c) in shapes.items() if name.startswith("head/"))
    prompts = bank.param_count() if bank is not None else 0
    return prompts + head, frozen, prompts / frozen
