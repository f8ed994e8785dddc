# %% [markdown]
# Robustness grid: train at several missing rates, test at several others.
# The grid lands in a CSV next to a gnuplot script.

# %%
import csv
import tempfile
from pathlib import Path

from misprompt import harness
from misprompt.config import parse_config

cfg = parse_config("""
[data]
n = 200
pretrain_n = 200
[model]
d = 16
layers = 3
[prompt]
length = 4
end = 1
[pretrain]
steps = 60
[train]
steps = 80
""")
out = Path(tempfile.mkdtemp())
grid = harness.sweep_missing_rate(cfg, out, etas=[10, 70], test_etas=[10, 70], scenarios=["missing_both"],
                                  mode="attention")
for row in csv.DictReader(open(grid)):
    print(row["train_eta"], row["test_eta"], f"{float(row['value']):.3f}")

# %%
# where to put the prompts: one row per (start, end) layer pair
for row in csv.DictReader(open(harness.sweep_prompt_layers(cfg, out, mode="input"))):
    print(row["start"], row["end"], f"{float(row['value']):.3f}")
