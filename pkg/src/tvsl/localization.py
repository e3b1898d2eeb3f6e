"""Per-source heatmaps, their binarization, and export."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import ops
from .correspondence import AlignedFeatures
from .rawio import read_raw, write_raw

log = logging.getLogger(__name__)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out × n_in) 1-D bilinear weights, align_corners=False, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample(grid: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling of (..., h, w) to (..., H, W)."""
    h, w = grid.shape[-2:]
    H, W = out_size
    return bilinear_matrix(h, H) @ grid @ bilinear_matrix(w, W).T


@dataclass
class Heatmap:
    maps: np.ndarray           # (K, H, W)
    class_indices: np.ndarray  # (K,)
    grid: tuple[int, int]

    @property
    def K(self) -> int:
        return self.maps.shape[0]

    def confidences(self) -> np.ndarray:
        return self.maps.reshape(self.K, -1).max(axis=1)


def similarity_grid(query: np.ndarray, tokens: np.ndarray, grid) -> np.ndarray:
    """Cosine of each query (K, D) against its tokens (K, n, D), as (K, h, w)."""
    sims = ops.cosine(tokens, query[:, None, :])
    return sims.reshape(query.shape[0], *grid)


def heatmaps(aligned: AlignedFeatures, out_size: tuple[int, int]) -> Heatmap:
    sims = similarity_grid(aligned.audio_query, aligned.visual_tokens, aligned.grid)
    return Heatmap(upsample(sims, out_size), np.asarray(aligned.class_indices), aligned.grid)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Per-map min-max normalisation followed by a fixed threshold."""

    threshold: float = 0.5

    @property
    def policy_id(self) -> str:
        return f"minmax-ge-{self.threshold:g}"

    def apply(self, m: np.ndarray) -> np.ndarray:
        lo, hi = float(m.min()), float(m.max())
        if not hi > lo:
            log.warning("constant heatmap; binarized mask is empty")
            return np.zeros(m.shape, dtype=bool)
        return (m - lo) / (hi - lo) >= self.threshold


@dataclass
class BinarizedMap:
    mask: np.ndarray  # (K, H, W) bool
    class_indices: np.ndarray
    policy: str = field(default="minmax-ge-0.5")


def binarize(h: Heatmap, policy: ThresholdPolicy = ThresholdPolicy()) -> BinarizedMap:
    mask = np.stack([policy.apply(m) for m in h.maps]) if h.K else np.zeros((0,) + h.maps.shape[1:], bool)
    return BinarizedMap(mask, np.asarray(h.class_indices), policy.policy_id)


def to_uint8(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if not hi > lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.round((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_heatmap(h: Heatmap, out_dir, names=None, stem: str = "heatmap") -> list[Path]:
    """Write one grayscale PNG per source plus a single raw float32 file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k in range(h.K):
        label = names[k] if names is not None else str(int(h.class_indices[k]))
        label = "".join(ch if ch.isalnum() else "_" for ch in label)
        path = out / f"{stem}_{k}_{label}.png"
        Image.fromarray(to_uint8(h.maps[k]), mode="L").save(path)
        written.append(path)
    raw_path = out / f"{stem}.f32"
    write_raw(raw_path, h.maps)
    written.append(raw_path)
    return written


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


__all__ = [
    "Heatmap", "BinarizedMap", "ThresholdPolicy", "binarize", "heatmaps", "upsample",
    "bilinear_matrix", "export_heatmap", "read_png", "read_raw", "write_raw", "to_uint8",
    "similarity_grid",
]
