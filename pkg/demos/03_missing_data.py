# %% [markdown]
# Seeded missing-modality partitions.  A missing rate eta marks
# round(eta * n / 100) samples incomplete; in the mixed scenario they are
# split between text-only and image-only.

# %%
from collections import Counter

from misprompt import MissingSpec, Scenario, apply_case, gen_synthetic, partition
from misprompt.data import case_quotas

spec = MissingSpec(70, Scenario.MISSING_BOTH, seed=0)
print(Counter(c.value for c in partition(100, spec)))
for scenario in Scenario:
    q = case_quotas(101, MissingSpec(50, scenario))
    print(f"{scenario.value:>13}: " + ", ".join(f"{c.value}={k}" for c, k in q.items()))

# %%
# a missing modality is replaced by a dummy input: empty text, all-ones image
sample = gen_synthetic(1, seed=3)[0]
print(repr(sample.text.content), sample.image.pixels.mean())
no_text = apply_case(sample, partition(1, MissingSpec(100, Scenario.MISSING_TEXT))[0])
print(no_text.case.value, repr(no_text.text.content), no_text.image.pixels.mean())
