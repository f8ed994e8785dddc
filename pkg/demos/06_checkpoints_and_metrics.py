# %% [markdown]
# Checkpoints are flat name -> float64 matrix maps in a small binary format;
# metrics are exact (no binning in AUROC, ties count one half).

# %%
import tempfile
from pathlib import Path

import numpy as np

from misprompt import PromptMode, accuracy, auroc, checkpoint, f1_macro
from misprompt.harness import checkpoint_param_count
from misprompt.model import ModelConfig, init_backbone
from misprompt.prompts import init_bank
from misprompt.train import PromptedModel

model = PromptedModel(init_backbone(ModelConfig(d=8, n_layers=2), seed=0),
                      init_bank(8, 2, 4, 0, 1, PromptMode.INPUT))
path = Path(tempfile.mkdtemp()) / "model.ckpt"
model.save(path)
back = checkpoint.load(path)
print(path.read_bytes()[:5], len(back), "tensors", checkpoint_param_count(path))
print(all(np.array_equal(back[k], v) for k, v in model.state_arrays().items()))

# %%
print(auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))
print(f1_macro([[1, 1], [1, 0]], [[1, 1], [0, 1]], 2))
print(accuracy([0, 1, 1, 0], [0, 1, 0, 0]))
