"""Swap the class vocabulary after training and localize classes never seen in training."""

import tempfile
from pathlib import Path

from tvsl.config import RunConfig
from tvsl.data import SyntheticWorldSpec, generate_synthetic_world, zero_shot_split
from tvsl.model import params_hash
from tvsl.pipeline import cmd_train, cmd_zeroshot
from tvsl.training import load_checkpoint

names = SyntheticWorldSpec().class_names
seen, unseen = zero_shot_split(names, seed=0)
print("train on", seen)
print("test on ", unseen)

work = Path(tempfile.mkdtemp())
spec = SyntheticWorldSpec(n_train=200, n_test=50, train_classes=seen, test_classes=unseen,
                          header={"zero_shot_seed": 0})
generate_synthetic_world(spec, work / "data")

cfg = RunConfig(data_root=str(work / "data"), output_dir=str(work / "run"), steps=300,
                vocabulary="vocab_train.txt", checkpoint_every=0)
cmd_train(cfg)

ckpt = work / "run" / "checkpoint.npz"
before = params_hash(load_checkpoint(ckpt)[0].params)
report = cmd_zeroshot(ckpt, work / "data" / "vocab_test.txt", cfg, mode="duet")
print("held-out CIoU@0.3", round(report.aggregates["ciou@0.3"], 1),
      "chance", round(report.chance["ciou@0.3"], 2))
print("weights untouched:", params_hash(load_checkpoint(ckpt)[0].params) == before)

# a learned prompt context only means something for the classes it was trained with,
# so zero-shot evaluation refuses checkpoints that carry one
cfg_p = RunConfig(**{**cfg.to_dict(), "prompt_length": 4, "output_dir": str(work / "run_p"), "steps": 20})
cmd_train(cfg_p)
try:
    cmd_zeroshot(work / "run_p" / "checkpoint.npz", work / "data" / "vocab_test.txt", cfg_p)
except ValueError as e:
    print("refused:", e)
