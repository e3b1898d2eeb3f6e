"""Command-line entry point: ``tvsl train|eval|zeroshot|localize|synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .data import Manifest, SyntheticWorldSpec, generate_synthetic_world
from .encoders import ConfigurationError
from .pipeline import cmd_eval, cmd_localize, cmd_train, cmd_zeroshot

log = logging.getLogger("tvsl")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvsl", description="Text-guided multi-source sound localization.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML or JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--single-stage", action="store_true", default=None)
        sp.add_argument("--prompt-length", type=int)
        sp.add_argument("--sources", type=int, help="number of mixed sources for k_sources evaluation")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    tr = common(sub.add_parser("train", help="train projectors with frozen encoders"))
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--steps", type=int)

    ev = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    ev.add_argument("--checkpoint")
    ev.add_argument("--split", choices=("train", "test"), default="test")
    ev.add_argument("--mode", choices=("solo", "duet", "k_sources"))
    ev.add_argument("--out", help="report path stem (.json and .csv are written)")

    zs = common(sub.add_parser("zeroshot", help="evaluate with a new class vocabulary"))
    zs.add_argument("--checkpoint")
    zs.add_argument("--vocabulary", help="class-name file, one per line")
    zs.add_argument("--mode", choices=("solo", "duet", "k_sources"))
    zs.add_argument("--out")

    lo = common(sub.add_parser("localize", help="export heatmaps for one sample"))
    lo.add_argument("--checkpoint")
    lo.add_argument("--sample-id", required=True)
    lo.add_argument("--split", choices=("train", "test"), default="test")
    lo.add_argument("--classes", nargs="*", help="class names; detected classes when omitted")
    lo.add_argument("--out", default="heatmaps")

    sy = common(sub.add_parser("synth", help="render the synthetic world described by the config"))
    sy.add_argument("--force", action="store_true")
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.single_stage:
        overrides["single_stage"] = True
    if args.prompt_length is not None:
        overrides["prompt_length"] = args.prompt_length
    return replace(cfg, **overrides)


def _checkpoint(args, cfg: RunConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir) / "checkpoint.npz"


def _mode(args, default="duet") -> str:
    if args.mode:
        return args.mode
    return "k_sources" if args.sources else default


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "train":
            state = cmd_train(cfg, resume=args.resume, steps=args.steps)
            print(json.dumps({"step": state.step, "loss": state.history[-1] if state.history else None,
                              "checkpoint": str(Path(cfg.output_dir) / "checkpoint.npz")}))
        elif args.command == "eval":
            report = cmd_eval(_checkpoint(args, cfg), cfg, args.split, _mode(args), args.sources, args.out)
            print(json.dumps({"aggregates": report.aggregates, "chance": report.chance}, default=float))
        elif args.command == "zeroshot":
            vocab = args.vocabulary or cfg.eval_vocabulary
            if not vocab:
                raise ConfigurationError("zeroshot needs --vocabulary or eval_vocabulary in the config")
            vocab = Path(vocab) if Path(vocab).exists() else cfg.path(vocab)
            report = cmd_zeroshot(_checkpoint(args, cfg), vocab, cfg, _mode(args),
                                  args.sources, args.out)
            print(json.dumps({"aggregates": report.aggregates, "chance": report.chance}, default=float))
        elif args.command == "localize":
            manifest = Manifest.load(cfg.path(cfg.test_manifest if args.split == "test" else cfg.train_manifest))
            recs = [r for r in manifest.records if r["id"] == args.sample_id]
            if not recs:
                raise KeyError(f"sample {args.sample_id!r} not in {args.split} manifest")
            sample = manifest.load_sample(recs[0])
            h, names, files = cmd_localize(_checkpoint(args, cfg), sample, args.classes, args.out, cfg)
            for name, conf in zip(names, h.confidences()):
                print(f"{name}\t{conf:.4f}")
            for f in files:
                print(f)
        elif args.command == "synth":
            root = Path(cfg.data_root)
            if (root / "world.json").exists() and not args.force:
                raise FileExistsError(f"{root} already holds a world; pass --force to overwrite")
            spec = SyntheticWorldSpec.from_dict({"dim": cfg.dim, "seed": cfg.seed, **(cfg.world or {})})
            train, test = generate_synthetic_world(spec, root)
            print(json.dumps({"root": str(root), "train": len(train.records), "test": len(test.records)}))
    except (ConfigurationError, FileNotFoundError, FileExistsError, KeyError, ValueError) as e:
        print(f"tvsl: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
