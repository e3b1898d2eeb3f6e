"""Train the projectors on synthetic duets, score them, and export heatmaps.

About a minute on one CPU core.
"""

import tempfile
from pathlib import Path

import numpy as np

from tvsl.config import RunConfig
from tvsl.data import Manifest, SyntheticWorldSpec, generate_synthetic_world
from tvsl.pipeline import cmd_eval, cmd_localize, cmd_train
from tvsl.training import window_means

work = Path(tempfile.mkdtemp())
generate_synthetic_world(SyntheticWorldSpec(n_train=200, n_test=50, seed=1), work / "data")

cfg = RunConfig(data_root=str(work / "data"), output_dir=str(work / "run"),
                steps=300, checkpoint_every=100, seed=1)
state = cmd_train(cfg)
print("loss per 100 steps", np.round(window_means(state.history, 100), 3))

# every step is also logged as one JSON line
log = (work / "run" / "train_log.jsonl").read_text().splitlines()
print(len(log), log[-1][:120])

ckpt = work / "run" / "checkpoint.npz"
report = cmd_eval(ckpt, cfg, mode="duet", out=work / "report")
for key in ("ciou@0.3", "auc"):
    print(key, round(report.aggregates[key], 2), "chance", round(report.chance[key], 2))
print("cap", round(report.aggregates["cap"], 2))

# heatmaps for one test clip; classes omitted means "use what the detector finds"
sample = Manifest.load(work / "data" / "test.jsonl").samples()[0]
h, names, files = cmd_localize(ckpt, sample, None, work / "maps", cfg)
print(sample.classes, "->", names, np.round(h.confidences(), 3))
print([f.name for f in files])

# the map peak should sit inside the box of its class
for name, m in zip(names, h.maps):
    y, x = np.unravel_index(m.argmax(), m.shape)
    H, W = sample.frame.shape[1:]
    y, x = int(y * H / m.shape[0]), int(x * W / m.shape[1])
    box = sample.boxes.get(name)
    print(name, (x, y), box)
