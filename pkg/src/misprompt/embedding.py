"""Text/image front end: tokenizer, patchifier and joint token sequence."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .prompts import MissingCase
from .tensor import Tensor, add, concat_rows, gather_rows, matmul, slice_rows

UNK_ID = 0
TEXT_TASK_ID = 1

_WORD = re.compile(r"\w+")


class Vocab:
    """Fixed token table; line number in the vocab file is the token id."""

    def __init__(self, tokens: Sequence[str]):
        if len(tokens) < 2:
            raise ValueError("vocab needs at least the unknown and task tokens")
        self.tokens = list(tokens)
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, word: str) -> int:
        i = self.ids.get(word, UNK_ID)
        # the reserved ids are never produced from text
        return UNK_ID if i == TEXT_TASK_ID else i

    @classmethod
    def default(cls, size: int = 256) -> "Vocab":
        return cls(["[unk]", "[task]"] + [f"w{i}" for i in range(2, size)])

    @classmethod
    def from_mapping(cls, mapping: dict[str, int]) -> "Vocab":
        size = max(max(mapping.values()) + 1, 2)
        tokens = ["[unk]", "[task]"] + [f"[pad{i}]" for i in range(2, size)]
        for word, i in mapping.items():
            tokens[i] = word
        return cls(tokens)

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TextInput:
    content: str
    max_len: int = 16


@dataclass(frozen=True)
class ImageInput:
    pixels: np.ndarray  # H x W x C
    patch_size: int = 4

    @property
    def num_patches(self) -> int:
        h, w = self.pixels.shape[:2]
        return (h // self.patch_size) * (w // self.patch_size)


def dummy_text(max_len: int = 16) -> TextInput:
    return TextInput("", max_len)


def dummy_image(height: int, width: int, channels: int, patch_size: int) -> ImageInput:
    return ImageInput(np.ones((height, width, channels)), patch_size)


def tokenize_text(text: TextInput, vocab: Vocab) -> list[int]:
    """Lower-case word split, vocab lookup, truncation, task-token prefix.

    The result (task token included) never exceeds ``text.max_len``.
    """
    words = _WORD.findall(text.content.lower())
    ids = [vocab.lookup(w) for w in words[: max(text.max_len - 1, 0)]]
    return [TEXT_TASK_ID] + ids


def patchify_image(image: ImageInput) -> np.ndarray:
    """Flatten non-overlapping ``ps x ps`` patches in row-major patch order.

    Each row holds one patch flattened as (row, col, channel).
    """
    px = np.asarray(image.pixels, dtype=np.float64)
    if px.ndim == 2:
        px = px[:, :, None]
    h, w, c = px.shape
    ps = image.patch_size
    if h % ps or w % ps:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {ps}")
    if not np.isfinite(px).all():
        raise ValueError("image contains non-finite pixels")
    grid = px.reshape(h // ps, ps, w // ps, ps, c).transpose(0, 2, 1, 3, 4)
    return grid.reshape(-1, ps * ps * c).copy()


@dataclass
class EmbeddingTables:
    token: Tensor       # vocab x d
    text_pos: Tensor    # max_text_len x d
    patch_proj: Tensor  # patch_dim x d
    patch_bias: Tensor  # 1 x d
    image_task: Tensor  # 1 x d
    image_pos: Tensor   # (num_patches + 1) x d
    modality: Tensor    # 2 x d: row 0 text, row 1 image

    @property
    def d(self) -> int:
        return self.token.cols


@dataclass
class JointSequence:
    tokens: Tensor
    text_span: tuple[int, int]
    image_span: tuple[int, int]
    text_task_index: int
    image_task_index: int
    missing_case: MissingCase

    @property
    def length(self) -> int:
        return self.tokens.rows


def assemble_sequence(
    text_ids: Sequence[int],
    patches: np.ndarray,
    tables: EmbeddingTables,
    case: MissingCase,
) -> JointSequence:
    """Embed both modalities into ``[text task | text | image task | patches]``.

    ``text_span`` and ``image_span`` cover the content tokens only; the two
    task positions complete the partition of ``[0, L)``.
    """
    d = tables.d
    if patches.shape[1] != tables.patch_proj.rows:
        raise DimensionError(
            f"patch dim {patches.shape[1]} does not match projection {tables.patch_proj.shape}"
        )
    n_text = len(text_ids)
    n_patch = patches.shape[0]
    if n_text > tables.text_pos.rows or n_patch + 1 > tables.image_pos.rows:
        raise DimensionError(
            f"sequence ({n_text} text, {n_patch} patches) exceeds position tables "
            f"{tables.text_pos.shape}, {tables.image_pos.shape}"
        )
    for t in (tables.text_pos, tables.patch_proj, tables.image_task, tables.image_pos, tables.modality):
        if t.cols != d:
            raise DimensionError(f"embedding width {t.cols} != {d}")

    text = gather_rows(tables.token, text_ids)
    text = add(text, slice_rows(tables.text_pos, 0, n_text))
    text = add(text, slice_rows(tables.modality, 0, 1))

    img = add(matmul(Tensor(patches), tables.patch_proj), tables.patch_bias)
    img = concat_rows([tables.image_task, img])
    img = add(img, slice_rows(tables.image_pos, 0, n_patch + 1))
    img = add(img, slice_rows(tables.modality, 1, 2))

    tokens = concat_rows([text, img])
    return JointSequence(
        tokens=tokens,
        text_span=(1, n_text),
        image_span=(n_text + 1, n_text + 1 + n_patch),
        text_task_index=0,
        image_task_index=n_text,
        missing_case=case,
    )
