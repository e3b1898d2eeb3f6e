"""Run configuration and named profiles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml


@dataclass
class RunConfig:
    dim: int = 64
    seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    steps: int = 2000
    loss_weights: tuple = (1.0, 1.0, 1.0)  # (av, cls, mcid)
    scale_det_init: float = 10.0
    scale_cls_init: float = 1 / 0.07
    temperature_av_init: float = 0.07
    prompt_length: int = 0
    single_stage: bool = False
    clamp_gate_at_zero: bool = False
    class_collision_mask: bool = True  # drop same-class negatives from the contrastive loss
    projector_init: str = "identity"
    init_noise: float = 0.01
    binarize_threshold: float = 0.5
    ciou_threshold: float = 0.3
    iou_threshold: float = 0.5
    detect_threshold: float = 0.5
    chance_permutations: int = 100
    template: str = "{}"
    data_root: str = "data"
    train_manifest: str = "train.jsonl"
    test_manifest: str = "test.jsonl"
    vocabulary: str = "vocab.txt"
    eval_vocabulary: str | None = None
    encoder_weights: dict | None = None  # {"visual": path, "audio": path}
    output_dir: str = "runs/default"
    checkpoint_every: int = 500
    device: str = "cpu"
    profile: str = "desk"
    world: dict | None = None  # SyntheticWorldSpec fields for `tvsl synth`
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.data_root) / p

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = PROFILES.get(d.get("profile", "desk"), PROFILES["desk"])
        return replace(base, **d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
        cfg = cls.from_dict(data)
        root = Path(cfg.data_root)
        if not root.is_absolute():
            cfg.data_root = str((Path(path).parent / root).resolve())
        out = Path(cfg.output_dir)
        if not out.is_absolute():
            cfg.output_dir = str((Path(path).parent / out).resolve())
        return cfg


PROFILES = {
    "desk": RunConfig(),
    "large": RunConfig(dim=1024, batch_size=256, lr=1e-4, class_collision_mask=False, profile="large"),
}
