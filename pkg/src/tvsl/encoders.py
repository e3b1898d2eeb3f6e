"""Frozen tri-modal encoders that emit patch tokens instead of pooled vectors.

The synthetic encoders here are linear: a spectrogram or frame is average
pooled onto a cell grid (each cell keeps a small ``sub_pool`` block of
features) and every cell is mapped to ``D`` dims by a fixed weight matrix.
Real backbones plug in through :func:`load_patch_encoder`, which reads the
same weights from an ``.npz`` file.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Input shape or setting incompatible with a configured component."""


@dataclass
class PatchTokenSet:
    tokens: np.ndarray  # (n, D)
    grid: tuple[int, int]
    modality: str  # "audio" | "visual"

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        rows, cols = self.grid
        if self.tokens.ndim != 2 or self.tokens.shape[0] != rows * cols:
            raise ConfigurationError(
                f"{self.tokens.shape[0]} tokens do not fill a {rows}x{cols} grid"
            )
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("patch tokens contain non-finite values")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens) -> "PatchTokenSet":
        return PatchTokenSet(tokens, self.grid, self.modality)


def adaptive_pool_matrix(length: int, out: int) -> np.ndarray:
    """(out × length) averaging matrix with the usual adaptive-pool windows.

    Window ``i`` covers ``[floor(i*L/out), ceil((i+1)*L/out))``.
    """
    m = np.zeros((out, length))
    for i in range(out):
        lo = (i * length) // out
        hi = -((-(i + 1) * length) // out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


@dataclass(eq=False)
class PatchEncoder:
    """Linear patch-token encoder.

    ``weight`` is (D, C*qh*qw).  For ``stride`` encoders (visual) the grid is
    ``(H/stride, W/stride)`` and indivisible sizes are rejected; otherwise the
    grid is fixed (audio) and pooling windows adapt to the input length.
    ``n_bins`` pins the expected input height when set.
    """

    weight: np.ndarray
    modality: str
    sub_pool: tuple[int, int] = (1, 1)
    stride: int | None = None
    grid: tuple[int, int] | None = None
    channels: int = 1
    offset: float = 0.0
    n_bins: int | None = None
    _pool_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.weight.setflags(write=False)
        qh, qw = self.sub_pool
        if self.weight.shape[1] != self.channels * qh * qw:
            raise ConfigurationError(
                f"weight expects {self.weight.shape[1]} inputs per cell, "
                f"encoder produces {self.channels * qh * qw}"
            )
        if (self.stride is None) == (self.grid is None):
            raise ConfigurationError("set exactly one of stride or grid")

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def output_grid(self, height: int, width: int) -> tuple[int, int]:
        if self.stride is not None:
            if height % self.stride or width % self.stride:
                raise ConfigurationError(
                    f"{height}x{width} input is not divisible by stride {self.stride}"
                )
            return height // self.stride, width // self.stride
        if height < self.grid[0] or width < self.grid[1]:
            raise ConfigurationError(f"{height}x{width} input is smaller than grid {self.grid}")
        return self.grid

    def _pool(self, length, out):
        key = (length, out)
        if key not in self._pool_cache:
            self._pool_cache[key] = adaptive_pool_matrix(length, out)
        return self._pool_cache[key]

    def cell_features(self, x: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        c, h, w = x.shape
        if c != self.channels:
            raise ConfigurationError(f"expected {self.channels} channels, got {c}")
        if self.n_bins is not None and h != self.n_bins:
            raise ConfigurationError(f"expected {self.n_bins} frequency bins, got {h}")
        gh, gw = self.output_grid(h, w)
        qh, qw = self.sub_pool
        pooled = self._pool(h, gh * qh) @ x @ self._pool(w, gw * qw).T
        feats = pooled.reshape(c, gh, qh, gw, qw).transpose(1, 3, 0, 2, 4)
        return feats.reshape(gh * gw, c * qh * qw), (gh, gw)

    def encode(self, x: np.ndarray) -> PatchTokenSet:
        feats, grid = self.cell_features(x)
        return PatchTokenSet((feats - self.offset) @ self.weight.T, grid, self.modality)

    def state_hash(self) -> str:
        h = hashlib.sha256(self.weight.tobytes())
        h.update(repr((self.modality, self.sub_pool, self.stride, self.grid, self.offset)).encode())
        return h.hexdigest()

    def save(self, path) -> None:
        np.savez(
            path,
            weight=self.weight,
            modality=self.modality,
            sub_pool=np.array(self.sub_pool),
            stride=-1 if self.stride is None else self.stride,
            grid=np.array(self.grid or (-1, -1)),
            channels=self.channels,
            offset=self.offset,
            n_bins=-1 if self.n_bins is None else self.n_bins,
        )


def load_patch_encoder(path) -> PatchEncoder:
    """Adapter slot for real frozen backbones exported as patch-token weights.

    The file must hold the arrays written by :meth:`PatchEncoder.save`; for a
    CNN backbone that means the final spatial stage with its global pooling
    removed, flattened to a per-cell linear read-out.
    """
    z = np.load(path, allow_pickle=False)
    stride = int(z["stride"])
    grid = tuple(int(g) for g in z["grid"])
    n_bins = int(z["n_bins"])
    return PatchEncoder(
        weight=z["weight"],
        modality=str(z["modality"]),
        sub_pool=tuple(int(s) for s in z["sub_pool"]),
        stride=None if stride < 0 else stride,
        grid=None if grid[0] < 0 else grid,
        channels=int(z["channels"]),
        offset=float(z["offset"]),
        n_bins=None if n_bins < 0 else n_bins,
    )


def visual_encoder(weight, sub_pool=(4, 4), stride=32, channels=3, offset=0.5) -> PatchEncoder:
    return PatchEncoder(weight, "visual", sub_pool=sub_pool, stride=stride,
                        channels=channels, offset=offset)


def audio_encoder(weight, sub_pool=(4, 4), grid=(10, 6), n_bins=None, offset=0.0) -> PatchEncoder:
    return PatchEncoder(weight, "audio", sub_pool=sub_pool, grid=grid,
                        channels=1, offset=offset, n_bins=n_bins)


# --------------------------------------------------------------------------- text

_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


@dataclass
class PromptContext:
    """Learnable context tokens shared by every class name."""

    context: np.ndarray  # (L, token_dim)
    trainable: bool = True

    @property
    def length(self) -> int:
        return self.context.shape[0]

    @classmethod
    def empty(cls, token_dim: int) -> "PromptContext":
        return cls(np.zeros((0, token_dim)), trainable=False)

    @classmethod
    def init(cls, length: int, token_dim: int, rng: np.random.Generator, std: float = 0.02):
        if length not in (0, 2, 4, 8, 16, 32):
            raise ConfigurationError(f"prompt length must be one of 0,2,4,8,16,32, got {length}")
        return cls(rng.normal(0.0, std, size=(length, token_dim)), trainable=length > 0)


class SyntheticTextEncoder:
    """Bag-of-words text encoder: ``E(t) = W · (sum of context and word vectors)``.

    Word vectors are derived from a hash of the word and the encoder seed, so
    any free-text class name maps to a fixed embedding without a vocabulary.
    Prompt context tokens are prepended to the word tokens and therefore add
    linearly to the embedding.
    """

    def __init__(self, dim: int, token_dim: int | None = None, seed: int = 0,
                 context_limit: int = 77):
        self.dim = dim
        self.token_dim = token_dim or dim
        self.seed = seed
        self.context_limit = context_limit
        rng = np.random.default_rng([seed, 0x7E47])
        q, _ = np.linalg.qr(rng.normal(size=(max(dim, self.token_dim),) * 2))
        self.projection = q[: dim, : self.token_dim].copy()
        self.projection.setflags(write=False)

    def word_vector(self, word: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{word}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.normal(0.0, 1.0 / np.sqrt(self.token_dim), size=self.token_dim)

    def encode(self, text: str, prompt: PromptContext | None = None,
               zero_shot: bool = False) -> np.ndarray:
        words = tokenize(text)
        if not words:
            raise ValueError(f"class name {text!r} has no tokens")
        ctx_len = 0 if prompt is None else prompt.length
        if zero_shot and ctx_len > 0:
            raise ConfigurationError("learned prompt context cannot be used in zero-shot mode")
        if len(words) + ctx_len > self.context_limit:
            raise ValueError(f"{text!r} exceeds the {self.context_limit}-token context")
        total = np.sum([self.word_vector(w) for w in words], axis=0)
        if ctx_len:
            total = total + prompt.context.sum(axis=0)
        return self.projection @ total

    def context_grad(self, d_embeddings: np.ndarray, length: int) -> np.ndarray:
        """Gradient on each context token given gradients on all bank rows."""
        g = self.projection.T @ d_embeddings.sum(axis=0)
        return np.broadcast_to(g, (length, self.token_dim)).copy()

    def state_hash(self) -> str:
        h = hashlib.sha256(self.projection.tobytes())
        h.update(f"{self.seed}:{self.dim}:{self.token_dim}".encode())
        return h.hexdigest()
