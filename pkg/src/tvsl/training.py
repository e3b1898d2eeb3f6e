"""Adam, checkpoints and the training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .correspondence import NonFiniteLossError
from .model import TVSLModel, clamp_scales

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tvsl-checkpoint"
CHECKPOINT_VERSION = 1


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k, np.zeros_like(p))
            v = self.v.get(k, np.zeros_like(p))
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    params: dict
    optimizer: Adam
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    history: list = field(default_factory=list)


def save_checkpoint(path, state: TrainState, cfg: RunConfig, extra: dict | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "history": state.history,
        "rng_state": state.rng.bit_generator.state,
        "adam": {"t": state.optimizer.t, "lr": state.optimizer.lr},
        **(extra or {}),
    }
    arrays = {f"param/{k}": v for k, v in state.params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in state.optimizer.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.optimizer.v.items()})
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[TrainState, RunConfig, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(z["__header__"].tobytes().decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {header['version']} is newer than supported")
        params, m, v = {}, {}, {}
        for key in z.files:
            kind, _, name = key.partition("/")
            if kind == "param":
                params[name] = z[key].copy()
            elif kind == "adam_m":
                m[name] = z[key].copy()
            elif kind == "adam_v":
                v[name] = z[key].copy()
    cfg = RunConfig.from_dict(header["config"])
    opt = Adam(header["adam"]["lr"])
    opt.t, opt.m, opt.v = header["adam"]["t"], m, v
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    state = TrainState(params, opt, header["step"], rng, header["history"])
    return state, cfg, header


def new_state(params: dict, cfg: RunConfig) -> TrainState:
    return TrainState(params, Adam(cfg.lr), 0, np.random.default_rng([cfg.seed, 0xDA7A]), [])


def train(model: TVSLModel, data: list, cfg: RunConfig, state: TrainState | None = None,
          steps: int | None = None, out_dir=None, encoder_hash=None,
          extra_header: dict | None = None) -> TrainState:
    """Minimise the weighted total loss with frozen encoders.

    ``data`` is a list of :class:`~tvsl.model.TokenSample`.  When ``out_dir`` is
    given, step events are appended to ``train_log.jsonl`` and checkpoints are
    written every ``cfg.checkpoint_every`` steps and at the end.  A non-finite
    loss aborts the run; the last written checkpoint is left untouched.
    """
    if state is None:
        state = new_state(model.params, cfg)
    model.params = state.params
    total = cfg.steps if steps is None else steps
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "a", encoding="utf-8")
    header = {"encoder_hash": encoder_hash, "vocabulary": list(model.vocab.names),
              **(extra_header or {})}
    t0 = time.perf_counter()
    try:
        while state.step < total:
            n = len(data)
            idx = state.rng.choice(n, size=min(cfg.batch_size, n), replace=False)
            losses, grads = model.loss_and_grads([data[i] for i in idx])
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                raise NonFiniteLossError(f"non-finite gradients for {bad}")
            grads.pop("_bank")
            state.optimizer.step(state.params, grads)
            clamp_scales(state.params)
            model.params = state.params
            if "prompt" in state.params:
                model.refresh_bank()
            state.step += 1
            event = {"event": "step", "step": state.step,
                     "loss": {k: float(v) for k, v in losses.items()},
                     "lr": state.optimizer.lr}
            state.history.append(event["loss"]["total"])
            if log_fh is not None:
                event["wall_time"] = round(time.perf_counter() - t0, 4)
                log_fh.write(json.dumps(event) + "\n")
            if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(out / "checkpoint.npz", state, cfg, header)
        if out is not None:
            save_checkpoint(out / "checkpoint.npz", state, cfg, header)
    except NonFiniteLossError:
        log.error("training aborted at step %d: non-finite loss", state.step)
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
    return state


def window_means(history, window: int) -> list[float]:
    h = np.asarray(history, dtype=float)
    return [float(h[i:i + window].mean()) for i in range(0, len(h) - window + 1, window)]


def is_finite(x) -> bool:
    return math.isfinite(float(x))
