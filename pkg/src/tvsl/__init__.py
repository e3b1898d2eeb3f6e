"""Text-guided multi-source sound localization on frozen patch encoders."""

from .config import PROFILES, RunConfig
from .data import (Manifest, MixtureSample, SyntheticWorld, SyntheticWorldSpec,
                   generate_synthetic_world, mix_k_sources, synthesize_duet)
from .encoders import ConfigurationError, PatchTokenSet, SyntheticTextEncoder
from .localization import Heatmap, ThresholdPolicy, binarize
from .metrics import MetricsReport
from .model import ModelOptions, TVSLModel, init_params
from .text import ClassVocabulary, TextEmbeddingBank, build_bank

__version__ = "0.1.0"

__all__ = [
    "ClassVocabulary", "ConfigurationError", "Heatmap", "Manifest", "MetricsReport",
    "MixtureSample", "ModelOptions", "PROFILES", "PatchTokenSet", "RunConfig",
    "SyntheticTextEncoder", "SyntheticWorld", "SyntheticWorldSpec", "TVSLModel",
    "TextEmbeddingBank", "ThresholdPolicy", "binarize", "build_bank",
    "generate_synthetic_world", "init_params", "mix_k_sources", "synthesize_duet",
]
