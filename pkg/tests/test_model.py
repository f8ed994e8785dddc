from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from misprompt import checkpoint
from misprompt.embedding import JointSequence
from misprompt.errors import ConfigError, DimensionError
from misprompt.model import (
    LayerWeights,
    ModelConfig,
    attach_input_level,
    count_params,
    forward,
    init_backbone,
    msa_attention_prompted,
    msa_plain,
)
from misprompt.optim import OptimizerState
from misprompt.prompts import MissingCase, PromptMode, init_bank, split_kv
from misprompt.tensor import Tensor, layer_norm, slice_rows
from misprompt.train import PromptedModel, train_step

from conftest import mixed_samples, tiny_config


def _layer(d, seed=0, **overrides) -> LayerWeights:
    layer = init_backbone(ModelConfig(d=d, n_layers=1), seed=seed).layers[0]
    return replace(layer, **{k: Tensor(v) for k, v in overrides.items()})


def _ln(x):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + 1e-9)


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def test_single_token_attends_to_itself():
    d = 6
    layer = _layer(d, seed=1)
    h = np.random.default_rng(0).normal(size=(1, d))
    out = msa_plain(Tensor(h), layer).data
    w = {k: getattr(layer, k).data for k in ("w_v", "w_o", "b_o", "w_1", "b_1", "w_2", "b_2")}
    x = _ln(h)
    h1 = h + (x @ w["w_v"]) @ w["w_o"] + w["b_o"]
    ref = h1 + _gelu(_ln(h1) @ w["w_1"] + w["b_1"]) @ w["w_2"] + w["b_2"]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_identity_weights_two_tokens_scalar_oracle():
    d = 2
    eye, z = np.eye(d), np.zeros((1, d))
    layer = _layer(d, w_q=eye, w_k=eye, w_v=eye, w_o=eye, b_o=z,
                   w_1=np.zeros((d, 4 * d)), b_1=np.zeros((1, 4 * d)), w_2=np.zeros((4 * d, d)), b_2=z)
    h = [[3.0, 1.0], [0.0, 2.0]]
    # each row normalises to [1, -1] or [-1, 1]; scores are x_i . x_j / sqrt(2)
    x = []
    for row in h:
        mu = sum(row) / d
        sd = math.sqrt(sum((v - mu) ** 2 for v in row) / d + 1e-9)
        x.append([(v - mu) / sd for v in row])
    out = []
    for i in range(2):
        s = [sum(x[i][k] * x[j][k] for k in range(d)) / math.sqrt(d) for j in range(2)]
        e = [math.exp(v) for v in s]
        a = [v / sum(e) for v in e]
        out.append([h[i][k] + sum(a[j] * x[j][k] for j in range(2)) for k in range(d)])
    np.testing.assert_allclose(msa_plain(Tensor(h), layer).data, out, atol=1e-12)


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    layer = _layer(8, seed=2)
    h = rng.normal(size=(5, 8))
    perm = rng.permutation(5)
    np.testing.assert_allclose(msa_plain(Tensor(h[perm]), layer).data,
                               msa_plain(Tensor(h), layer).data[perm], atol=1e-12)


def test_msa_dimension_error():
    with pytest.raises(DimensionError):
        msa_plain(Tensor(np.zeros((3, 5))), _layer(4))


def test_attach_input_level_examples():
    p, h = Tensor(np.ones((2, 3))), Tensor(np.zeros((4, 3)))
    out = attach_input_level(p, h)
    assert out.shape == (6, 3)
    np.testing.assert_array_equal(out.data[:2], p.data)
    with pytest.raises(ConfigError):
        attach_input_level(Tensor(np.zeros((0, 3))), h)
    with pytest.raises(DimensionError):
        attach_input_level(Tensor(np.zeros((2, 4))), h)


@pytest.mark.parametrize("lp", [2, 4, 16])
def test_attention_prompting_keeps_length(lp):
    rng = np.random.default_rng(lp)
    h = Tensor(rng.normal(size=(5, 8)))
    k, v = split_kv(Tensor(rng.normal(size=(lp, 8))))
    assert msa_attention_prompted(h, k, v, _layer(8)).rows == 5


def test_attention_prompt_limit_recovers_plain_block():
    d = 8
    # positive ln1 bias with identity queries makes every query row sum to d,
    # so keys of -1e4 score -1e4 * sqrt(d) and carry no attention mass
    layer = _layer(d, seed=5, w_q=np.eye(d), ln1_bias=np.ones((1, d)))
    rng = np.random.default_rng(5)
    h = Tensor(rng.normal(size=(4, d)))
    p_k = Tensor(np.full((3, d), -1e4))
    p_v = Tensor(rng.normal(size=(3, d)))
    np.testing.assert_allclose(msa_attention_prompted(h, p_k, p_v, layer).data,
                               msa_plain(h, layer).data, atol=1e-9)


def test_attention_prompt_shape_errors():
    h = Tensor(np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        msa_attention_prompted(h, Tensor(np.zeros((2, 4))), Tensor(np.zeros((1, 4))), _layer(4))
    with pytest.raises(DimensionError):
        msa_attention_prompted(h, Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 5))), _layer(4))


def _seq(L, d, rng, case=MissingCase.COMPLETE):
    return JointSequence(Tensor(rng.normal(size=(L, d))), (1, 1), (2, L), 0, 1, case)


def test_forward_lengths_attention_mode():
    rng = np.random.default_rng(0)
    bb = init_backbone(tiny_config(8, 6), seed=0)
    trace = forward(_seq(7, 8, rng), bb, init_bank(8, 6, 4, 0, 5, PromptMode.ATTENTION))
    assert trace.lengths == [7] * 6 and trace.output_length == 7 and trace.text_task_index == 0


def test_forward_lengths_input_mode():
    rng = np.random.default_rng(0)
    L, lp = 7, 3
    bb = init_backbone(tiny_config(8, 8), seed=0)
    trace = forward(_seq(L, 8, rng), bb, init_bank(8, 8, lp, 0, 5, PromptMode.INPUT))
    assert trace.lengths == [L + i * lp for i in range(7)] + [L + 6 * lp]
    assert trace.output_length == 6 * lp + L
    assert trace.text_task_index == 6 * lp


def test_forward_pools_the_shifted_task_token():
    rng = np.random.default_rng(1)
    bb = init_backbone(tiny_config(8, 3), seed=1)
    bank = init_bank(8, 3, 2, 1, 2, PromptMode.INPUT, seed=1)
    seq = _seq(6, 8, rng, MissingCase.MISSING_IMAGE)
    h = seq.tokens
    h = msa_plain(h, bb.layers[0])
    for i in (1, 2):
        h = msa_plain(attach_input_level(bank.select(MissingCase.MISSING_IMAGE, i), h), bb.layers[i])
    ref = layer_norm(slice_rows(h, 4, 5), bb.final_gain, bb.final_bias)
    trace = forward(seq, bb, bank)
    np.testing.assert_array_equal(trace.feature.data, ref.data)
    np.testing.assert_array_equal(trace.logits.data, bb.head(ref).data)


def test_prompts_differ_by_case_after_training():
    bb = init_backbone(tiny_config(8, 2), seed=3)
    bb.freeze()
    model = PromptedModel(bb, init_bank(8, 2, 4, 0, 1, PromptMode.ATTENTION, seed=3))
    state = OptimizerState()
    data = mixed_samples(12, seed=3)
    for step in range(50):
        train_step(data[(step % 3) * 4:(step % 3) * 4 + 4], model, state, 1e-2)
    s = data[0]
    a = model.logits(replace(s, case=MissingCase.COMPLETE))
    b = model.logits(replace(s, case=MissingCase.MISSING_TEXT))
    assert np.abs(a - b).max() > 0


def test_freeze_leaves_only_head_trainable():
    bb = init_backbone(tiny_config(), seed=0)
    bb.freeze()
    trainable = {n for n, t in bb.named_tensors().items() if t.requires_grad}
    assert trainable == set(bb.head_named_tensors())
    assert all(not t.requires_grad for t in bb.frozen_tensors())


def test_count_params_full_scale():
    cfg = ModelConfig.full_scale()
    trainable, frozen, ratio = count_params(cfg, init_bank(768, 12, 16, 0, 5))
    head = 768 * 768 + 768 + 768 * 23 + 23
    assert trainable == 221_184 + head
    assert ratio == pytest.approx(221_184 / frozen)
    assert abs(ratio - 0.00196) < 1e-4


def test_count_params_empty_bank():
    bb = init_backbone(tiny_config(), seed=0)
    trainable, _, ratio = count_params(bb, init_bank(8, 2, mode=PromptMode.NONE))
    assert trainable == sum(t.data.size for t in bb.head.tensors()) and ratio == 0.0


def test_count_params_against_checkpoint_walk(tmp_path):
    bb = init_backbone(ModelConfig(), seed=0)
    bank = init_bank(32, 6, 16, 0, 2)
    model = PromptedModel(bb, bank)
    model.save(tmp_path / "m.ckpt")
    arrays = checkpoint.load(tmp_path / "m.ckpt")
    walk = {"prompt": 0, "head": 0, "backbone": 0}
    for name, arr in arrays.items():
        walk[name.split("/")[0]] += arr.size
    trainable, frozen, ratio = count_params(bb, bank)
    assert trainable == walk["prompt"] + walk["head"]
    assert frozen == walk["backbone"]
    assert ratio == walk["prompt"] / walk["backbone"]
