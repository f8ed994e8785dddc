"""Synthetic bimodal data and the missing-rate partition protocol."""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import ImageInput, TextInput, dummy_image, dummy_text
from .errors import ConfigError
from .prompts import MissingCase


class Scenario(enum.Enum):
    MISSING_TEXT = "missing_text"
    MISSING_IMAGE = "missing_image"
    MISSING_BOTH = "missing_both"


@dataclass(frozen=True)
class MultimodalSample:
    text: TextInput
    image: ImageInput
    label: int | tuple[int, ...]
    case: MissingCase = MissingCase.COMPLETE
    uid: int = 0


@dataclass(frozen=True)
class MissingSpec:
    eta: float
    scenario: Scenario = Scenario.MISSING_BOTH
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.eta <= 100:
            raise ConfigError(f"missing rate must lie in [0, 100], got {self.eta}")
        object.__setattr__(self, "scenario", Scenario(self.scenario))


def derive_seed(seed: int, *keys: int | str) -> int:
    """Independent child seed for ``(seed, *keys)``; strings are hashed stably."""
    words = [seed]
    for k in keys:
        words.append(k if isinstance(k, int) else int.from_bytes(str(k).encode(), "little") % (2**63))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0] >> 1)


def case_quotas(n: int, spec: MissingSpec) -> dict[MissingCase, int]:
    """Exact per-case counts: incomplete total rounds half-to-even, text-only half floors."""
    incomplete = round(Fraction(spec.eta) * n / 100)
    if spec.scenario is Scenario.MISSING_TEXT:
        missing_text, missing_image = incomplete, 0
    elif spec.scenario is Scenario.MISSING_IMAGE:
        missing_text, missing_image = 0, incomplete
    else:
        missing_image = incomplete // 2          # text-only samples
        missing_text = incomplete - missing_image  # image-only samples
    return {
        MissingCase.COMPLETE: n - incomplete,
        MissingCase.MISSING_TEXT: missing_text,
        MissingCase.MISSING_IMAGE: missing_image,
    }


def partition(n: int, spec: MissingSpec) -> list[MissingCase]:
    """Assign a missing case to each of ``n`` indices by seeded shuffle."""
    if n < 1:
        raise ConfigError("partition needs n >= 1")
    q = case_quotas(n, spec)
    pool = ([MissingCase.MISSING_TEXT] * q[MissingCase.MISSING_TEXT]
            + [MissingCase.MISSING_IMAGE] * q[MissingCase.MISSING_IMAGE]
            + [MissingCase.COMPLETE] * q[MissingCase.COMPLETE])
    order = np.random.default_rng(spec.seed).permutation(n)
    out = [MissingCase.COMPLETE] * n
    for slot, idx in enumerate(order):
        out[idx] = pool[slot]
    return out


def resample_cases_per_epoch(n: int, spec: MissingSpec, epoch: int) -> list[MissingCase]:
    return partition(n, replace(spec, seed=derive_seed(spec.seed, "epoch", epoch)))


def apply_case(sample: MultimodalSample, case: MissingCase) -> MultimodalSample:
    """Swap the missing modality for its dummy; the label is untouched."""
    case = MissingCase(case)
    text, image = sample.text, sample.image
    if case is MissingCase.MISSING_TEXT:
        text = dummy_text(text.max_len)
    elif case is MissingCase.MISSING_IMAGE:
        px = np.asarray(image.pixels)
        channels = px.shape[2] if px.ndim == 3 else 1
        image = dummy_image(px.shape[0], px.shape[1], channels, image.patch_size)
    return replace(sample, text=text, image=image, case=case)


def apply_partition(samples: Sequence[MultimodalSample], cases: Sequence[MissingCase]) -> list[MultimodalSample]:
    return [apply_case(s, c) for s, c in zip(samples, cases)]


# synthetic task -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTask:
    """Generator settings for the desk-scale bimodal task.

    A label factors into a *group* (``label // 2``) and a *parity*
    (``label % 2``).  Text states the group through keywords, the image states
    the parity through a template, so both together fix the label.  Each
    modality also carries a noisy hint about the other factor (a parity
    keyword in the text, a faint group pattern in the image) that is right
    with probability ``hint_fidelity``.  Complete data never needs the
    hints; a single modality is only predictive beyond two candidates
    through them.
    """
    classes: int = 4
    text_words: int = 8
    keywords: int = 3
    keyword_pool: int = 6
    hint_pool: int = 3
    hint_fidelity: float = 0.85
    image_size: int = 8
    channels: int = 3
    patch_size: int = 4
    image_noise: float = 0.5
    hint_amplitude: float = 0.4
    max_text_len: int = 16
    vocab_size: int = 256


def gen_synthetic(n: int, classes: int = 4, seed: int = 0,
                  task: SyntheticTask | None = None) -> list[MultimodalSample]:
    task = replace(task or SyntheticTask(), classes=classes)
    if task.classes < 2:
        raise ConfigError("need at least two classes")
    rng = np.random.default_rng(seed)
    groups = (task.classes + 1) // 2
    # token ids from 2: group keywords, then parity hints, then noise words
    hint_base = 2 + groups * task.keyword_pool
    noise_words = np.arange(hint_base + 2 * task.hint_pool, task.vocab_size)
    if noise_words.size == 0:
        raise ConfigError("vocab too small for the keyword pools")
    s, c = task.image_size, task.channels
    # values stay below 1, which is reserved for the dummy image
    templates = rng.uniform(0.0, 0.9, size=(2, s, s, c))
    group_patterns = rng.choice([-1.0, 1.0], size=(groups, s, s, c))

    labels = np.arange(n) % task.classes
    labels = labels[rng.permutation(n)]
    samples = []
    for i, y in enumerate(labels):
        g, par = int(y) // 2, int(y) % 2
        pool = 2 + g * task.keyword_pool + np.arange(task.keyword_pool)
        words = rng.choice(noise_words, size=task.text_words)
        slots = rng.choice(task.text_words, size=task.keywords + 1, replace=False)
        words[slots[:-1]] = rng.choice(pool, size=task.keywords)
        hinted_par = par if rng.random() < task.hint_fidelity else 1 - par
        words[slots[-1]] = hint_base + hinted_par * task.hint_pool + rng.integers(task.hint_pool)
        text = " ".join(f"w{w}" for w in words)

        hinted_g = g if rng.random() < task.hint_fidelity or groups == 1 else \
            int(rng.choice([k for k in range(groups) if k != g]))
        pixels = (templates[par] + task.hint_amplitude * group_patterns[hinted_g]
                  + rng.normal(0.0, task.image_noise, size=(s, s, c)))
        samples.append(MultimodalSample(
            text=TextInput(text, task.max_text_len),
            image=ImageInput(pixels, task.patch_size),
            label=int(y),
            uid=i,
        ))
    return samples


# on-disk manifest ---------------------------------------------------------------

_HEADER = struct.Struct("<QQQ")


def write_grid(path: str | Path, pixels: np.ndarray) -> None:
    px = np.asarray(pixels, dtype="<f8")
    if px.ndim == 2:
        px = px[:, :, None]
    Path(path).write_bytes(_HEADER.pack(*px.shape) + px.tobytes())


def read_grid(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    h, w, c = _HEADER.unpack_from(blob, 0)
    return np.frombuffer(blob, dtype="<f8", count=h * w * c, offset=_HEADER.size).reshape(h, w, c).copy()


def write_manifest(samples: Sequence[MultimodalSample], directory: str | Path) -> Path:
    """One JSON record per line plus a binary grid per image under ``images/``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        ref = f"images/{s.uid}.grid"
        write_grid(directory / ref, s.image.pixels)
        label = list(s.label) if isinstance(s.label, tuple) else s.label
        lines.append(json.dumps({
            "id": s.uid, "case": s.case.value, "label": label, "text": s.text.content,
            "image": ref, "max_len": s.text.max_len, "patch_size": s.image.patch_size,
        }))
    path = directory / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> list[MultimodalSample]:
    path = Path(path)
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        label = tuple(rec["label"]) if isinstance(rec["label"], list) else rec["label"]
        out.append(MultimodalSample(
            text=TextInput(rec["text"], rec.get("max_len", 16)),
            image=ImageInput(read_grid(path.parent / rec["image"]), rec.get("patch_size", 4)),
            label=label,
            case=MissingCase(rec["case"]),
            uid=rec["id"],
        ))
    return out
