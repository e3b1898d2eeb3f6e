"""Stage 3: audio-queried refinement of conditioned visual tokens and the batch InfoNCE."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .conditioner import ConditionedFeatures

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class CorrespondenceProjectors:
    audio: np.ndarray   # P_av, (D, D)
    visual: np.ndarray  # P_va, (D, D)


@dataclass
class AlignedFeatures:
    class_indices: np.ndarray  # (K,)
    visual_tokens: np.ndarray  # aligned visual tokens, (K, n_v, D)
    audio_query: np.ndarray    # (K, D)
    visual_pooled: np.ndarray  # (K, D)
    grid: tuple[int, int]

    @property
    def K(self) -> int:
        return len(self.class_indices)


def align(feats: ConditionedFeatures, proj: CorrespondenceProjectors,
          clamp_gate_at_zero: bool = False) -> AlignedFeatures:
    query = feats.audio_mean @ proj.audio.T
    aligned, _ = ops.cosine_gate(feats.visual_tokens, query, feats.visual_tokens,
                                 clamp=clamp_gate_at_zero)
    pooled = aligned.mean(axis=-2) @ proj.visual.T
    return AlignedFeatures(feats.class_indices, aligned, query, pooled, feats.visual_grid)


def collision_mask(classes) -> np.ndarray:
    """Off-diagonal pairs that share a class (treated as false negatives)."""
    c = np.asarray(classes)
    mask = c[:, None] == c[None, :]
    np.fill_diagonal(mask, False)
    return mask


def correspondence_loss(batch: Sequence[AlignedFeatures], scale: float = 1 / 0.07,
                        mask_class_collisions: bool = False) -> float | None:
    """Symmetric InfoNCE over every (sample, source) pair in the batch.

    Returns ``None`` (with a warning) when fewer than two pairs exist.
    """
    qv = np.concatenate([a.visual_pooled for a in batch])
    qa = np.concatenate([a.audio_query for a in batch])
    if qv.shape[0] < 2:
        log.warning("InfoNCE needs at least 2 pairs, got %d; skipping", qv.shape[0])
        return None
    mask = None
    if mask_class_collisions:
        mask = collision_mask(np.concatenate([a.class_indices for a in batch]))
    loss, *_ = ops.info_nce(qv, qa, scale, mask)
    return loss


def total_loss(l_av: float, l_cls: float, l_mcid: float, weights=(1.0, 1.0, 1.0)) -> float:
    parts = {"av": l_av, "cls": l_cls, "mcid": l_mcid}
    bad = [k for k, v in parts.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteLossError(f"non-finite loss components: {parts}")
    w_av, w_cls, w_mcid = weights
    return w_av * l_av + w_cls * l_cls + w_mcid * l_mcid
