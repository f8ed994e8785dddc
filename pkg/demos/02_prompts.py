# %% [markdown]
# Three prompt sets, one per missing-modality case, on a frozen backbone.
# Input-level prompts are prepended to the hidden states and the sequence
# grows at each prompted layer; attention-level prompts are split into
# key/value halves and only widen the attention window.

# %%
import numpy as np

from misprompt import MissingCase, ModelConfig, PromptMode, count_params, forward, init_backbone, init_bank
from misprompt.embedding import JointSequence
from misprompt.tensor import Tensor

backbone = init_backbone(ModelConfig(d=8, n_layers=6), seed=0)
backbone.freeze()
seq = JointSequence(Tensor(np.random.default_rng(0).normal(size=(10, 8))), (1, 4), (5, 10), 0, 5,
                    MissingCase.MISSING_IMAGE)

for mode in (PromptMode.INPUT, PromptMode.ATTENTION):
    bank = init_bank(8, 6, prompt_len=4, start_layer=0, end_layer=2, mode=mode)
    trace = forward(seq, backbone, bank)
    print(f"{mode.value:>9}: per-layer lengths {trace.lengths} -> {trace.output_length}, "
          f"pooled row {trace.text_task_index}")

# %%
# prompt budget at the usual 768-wide, 12-layer size
bank = init_bank(768, 12, 16, 0, 5, PromptMode.ATTENTION)
trainable, frozen, ratio = count_params(ModelConfig.full_scale(), bank)
print(f"prompt params {bank.param_count():,}, frozen {frozen:,}, prompts/frozen {ratio:.5f}")

# %%
# each sample only touches the prompts of its own case
print([bank.select(case, 0).shape for case in MissingCase])
