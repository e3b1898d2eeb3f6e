"""Stage 2: text-gated disentangling of per-source audio and visual tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .encoders import PatchTokenSet
from .text import TextEmbeddingBank

cosine_gate = ops.cosine_gate


@dataclass
class ConditioningProjectors:
    visual: np.ndarray  # P_vc, (D, D)
    audio: np.ndarray   # P_ac, (D, D)


@dataclass
class ConditionedFeatures:
    """Per-source conditioned features, stacked along a leading K axis."""

    class_indices: np.ndarray    # (K,)
    visual_tokens: np.ndarray    # (K, n_v, D)
    audio_tokens: np.ndarray     # (K, n_a, D)
    visual_mean: np.ndarray      # (K, D)
    audio_mean: np.ndarray       # (K, D)
    visual_feature: np.ndarray   # P_vc applied to visual_mean
    audio_feature: np.ndarray    # P_ac applied to audio_mean
    visual_grid: tuple[int, int]
    audio_grid: tuple[int, int]

    @property
    def K(self) -> int:
        return len(self.class_indices)

    def permuted(self, order) -> "ConditionedFeatures":
        order = np.asarray(order)
        return ConditionedFeatures(
            self.class_indices[order], self.visual_tokens[order], self.audio_tokens[order],
            self.visual_mean[order], self.audio_mean[order],
            self.visual_feature[order], self.audio_feature[order],
            self.visual_grid, self.audio_grid,
        )


def _condition(tokens: np.ndarray, text: np.ndarray, proj: np.ndarray, clamp: bool):
    gated, _ = cosine_gate(tokens, text, tokens, clamp=clamp)
    mean = gated.mean(axis=-2)
    return gated, mean, mean @ proj.T


def condition_visual(v_tokens: PatchTokenSet, text: np.ndarray, proj: ConditioningProjectors,
                     clamp_gate_at_zero: bool = False):
    """Returns ``(gated visual tokens, projected mean feature)`` for one source."""
    gated, _, feat = _condition(v_tokens.tokens, np.asarray(text), proj.visual, clamp_gate_at_zero)
    return v_tokens.with_tokens(gated), feat


def condition_audio(a_tokens: PatchTokenSet, text: np.ndarray, proj: ConditioningProjectors,
                    clamp_gate_at_zero: bool = False):
    gated, _, feat = _condition(a_tokens.tokens, np.asarray(text), proj.audio, clamp_gate_at_zero)
    return a_tokens.with_tokens(gated), feat


def condition(v_tokens: PatchTokenSet, a_tokens: PatchTokenSet, bank: TextEmbeddingBank,
              class_indices, proj: ConditioningProjectors,
              clamp_gate_at_zero: bool = False) -> ConditionedFeatures:
    """Condition the mixture tokens on each listed class, vectorised over sources."""
    idx = np.asarray(class_indices, dtype=int)
    texts = bank.matrix[idx]
    vt, vm, vf = _condition(v_tokens.tokens[None], texts, proj.visual, clamp_gate_at_zero)
    at, am, af = _condition(a_tokens.tokens[None], texts, proj.audio, clamp_gate_at_zero)
    return ConditionedFeatures(idx, vt, at, vm, am, vf, af, v_tokens.grid, a_tokens.grid)


def class_logits(bank_matrix: np.ndarray, features: np.ndarray, scale: float) -> np.ndarray:
    return scale * ops.cosine(bank_matrix[None, :, :], features[:, None, :])


def class_conditioning_loss(feats: ConditionedFeatures, bank: TextEmbeddingBank,
                            true_classes, scale: float = 1 / 0.07) -> float:
    """Sum over sources of the visual and audio N-way cross-entropies."""
    targets = np.asarray(true_classes, dtype=int)
    if np.any(targets < 0) or np.any(targets >= bank.N):
        raise IndexError(f"class index out of range for a {bank.N}-class bank")
    lv, _ = ops.softmax_cross_entropy(class_logits(bank.matrix, feats.visual_feature, scale), targets)
    la, _ = ops.softmax_cross_entropy(class_logits(bank.matrix, feats.audio_feature, scale), targets)
    return float(lv.sum() + la.sum())
