# %% [markdown]
# Pretrain a small backbone on complete pairs, freeze it, then train either
# the head alone (baseline) or the head plus missing-aware prompts under
# 70% missing data, and compare per-case accuracy.  Sizes are cut down so
# this runs in a couple of minutes; `python -m misprompt run` uses the full
# defaults.

# %%
import csv
import tempfile
from pathlib import Path

from misprompt import harness
from misprompt.config import ExperimentConfig

cfg = ExperimentConfig().replace(data={"n": 800, "pretrain_n": 800}, pretrain={"steps": 300},
                                 train={"steps": 400})
out = Path(tempfile.mkdtemp())

for mode in ("baseline", "attention", "input"):
    report = harness.run_pipeline(cfg, out, mode)
    rows = list(csv.DictReader(open(report)))
    print(f"{mode:>9}: " + "  ".join(f"{r['case']}={float(r['value']):.3f}" for r in rows))

print(sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()))
