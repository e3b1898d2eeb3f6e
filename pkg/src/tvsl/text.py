"""Class vocabulary, the N-class text embedding bank, and source selection."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import PromptContext, SyntheticTextEncoder


class EmptySelectionError(ValueError):
    """Raised when a label vector selects no classes."""


@dataclass(frozen=True)
class ClassVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("vocabulary is empty")
        if len(set(names)) != len(names):
            raise ValueError("vocabulary contains duplicate class names")

    @property
    def N(self) -> int:
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"class {name!r} is not in the vocabulary") from None

    def labels(self, names) -> np.ndarray:
        y = np.zeros(self.N)
        for n in names:
            y[self.index(n)] = 1.0
        return y

    @classmethod
    def from_file(cls, path) -> "ClassVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def to_file(self, path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TextEmbeddingBank:
    matrix: np.ndarray  # (N, D)
    vocab: ClassVocabulary

    @property
    def N(self) -> int:
        return self.matrix.shape[0]


def build_bank(vocab: ClassVocabulary, encoder: SyntheticTextEncoder,
               prompt: PromptContext | None = None, template: str = "{}",
               zero_shot: bool = False) -> TextEmbeddingBank:
    """Encode every class name (through ``template``) into a fresh bank."""
    rows = [encoder.encode(template.format(name), prompt, zero_shot=zero_shot)
            for name in vocab.names]
    matrix = np.stack(rows)
    matrix.setflags(write=False)
    return TextEmbeddingBank(matrix, vocab)


def select_sources(bank: TextEmbeddingBank, labels) -> list[tuple[int, np.ndarray]]:
    """Bank rows of the positive labels, in vocabulary order."""
    y = np.asarray(labels)
    if y.shape != (bank.N,):
        raise ValueError(f"label vector has shape {y.shape}, expected ({bank.N},)")
    idx = np.flatnonzero(y > 0.5)
    if idx.size == 0:
        raise EmptySelectionError("no positive labels to select sources from")
    return [(int(i), bank.matrix[i]) for i in idx]
