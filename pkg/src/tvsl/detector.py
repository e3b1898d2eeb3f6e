"""Stage 1: which vocabulary classes are both audible and visible in a mixture."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .encoders import PatchTokenSet
from .text import TextEmbeddingBank

log = logging.getLogger(__name__)


@dataclass
class ProjectorSet:
    audio: np.ndarray   # P_a, (D, D)
    visual: np.ndarray  # P_v, (D, D)
    fusion: np.ndarray  # P_f, (D, 2D)


@dataclass
class DetectionResult:
    scores: np.ndarray         # cosine similarities, (N,)
    probabilities: np.ndarray  # sigmoid(scale * scores), (N,)
    selected: np.ndarray       # indices with probability > threshold
    scale: float = 10.0

    @property
    def logits(self) -> np.ndarray:
        return self.scale * self.scores


def project_tokens(raw_audio: PatchTokenSet, raw_visual: PatchTokenSet,
                   proj: ProjectorSet) -> tuple[PatchTokenSet, PatchTokenSet]:
    return (raw_audio.with_tokens(raw_audio.tokens @ proj.audio.T),
            raw_visual.with_tokens(raw_visual.tokens @ proj.visual.T))


def fused_feature(a_tokens: np.ndarray, v_tokens: np.ndarray, fusion: np.ndarray) -> np.ndarray:
    x = np.concatenate([a_tokens.mean(axis=0), v_tokens.mean(axis=0)])
    return fusion @ x


def detect(a_tokens: PatchTokenSet, v_tokens: PatchTokenSet, bank: TextEmbeddingBank,
           proj: ProjectorSet, scale: float = 10.0, threshold: float = 0.5) -> DetectionResult:
    """Score every class by the cosine between its text row and the fused mixture feature.

    Tokens are expected to be projected already (see :func:`project_tokens`).
    """
    f_av = fused_feature(a_tokens.tokens, v_tokens.tokens, proj.fusion)
    if np.linalg.norm(f_av) <= ops.EPS:
        log.warning("fused audio-visual feature has zero norm; all scores set to 0")
    if np.any(np.linalg.norm(bank.matrix, axis=1) <= ops.EPS):
        log.warning("text bank has zero-norm rows; their scores are set to 0")
    scores = ops.cosine(bank.matrix, f_av[None, :])
    probs = ops.sigmoid(scale * scores)
    return DetectionResult(scores, probs, np.flatnonzero(probs > threshold), scale)


def detection_loss(result: DetectionResult, labels) -> float:
    """Multi-label BCE summed over the N classes."""
    losses, _ = ops.bce_with_logits(result.logits, np.asarray(labels, dtype=float))
    return float(losses.sum())
