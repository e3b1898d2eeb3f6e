"""End-to-end glue: frozen backbone, dataset encoding, evaluation and the run commands."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .data import Manifest, MixtureSample, SyntheticWorld, check_split_hygiene, load_world, mix_k_sources
from .encoders import PatchEncoder, SyntheticTextEncoder, load_patch_encoder
from .localization import Heatmap, ThresholdPolicy, binarize, export_heatmap
from .metrics import MetricsReport, box_mask, region_mask, success_rate_at, auc, summarize
from .model import ModelOptions, TVSLModel, TokenSample, init_params, params_hash
from .text import ClassVocabulary
from .training import TrainState, load_checkpoint, new_state, train

log = logging.getLogger(__name__)


@dataclass
class Backbone:
    visual: PatchEncoder
    audio: PatchEncoder
    text: SyntheticTextEncoder

    def state_hash(self) -> str:
        return "|".join([self.visual.state_hash(), self.audio.state_hash(), self.text.state_hash()])

    @classmethod
    def from_world(cls, world: SyntheticWorld) -> "Backbone":
        return cls(world.visual_encoder, world.audio_encoder, world.text_encoder)

    def encode(self, sample: MixtureSample):
        return self.audio.encode(sample.audio), self.visual.encode(sample.frame)


def load_backbone(cfg: RunConfig) -> Backbone:
    if cfg.encoder_weights:
        visual = load_patch_encoder(cfg.path(cfg.encoder_weights["visual"]))
        audio = load_patch_encoder(cfg.path(cfg.encoder_weights["audio"]))
        text = SyntheticTextEncoder(visual.dim, seed=int(cfg.encoder_weights.get("text_seed", 0)))
        return Backbone(visual, audio, text)
    return Backbone.from_world(load_world(cfg.data_root))


def token_samples(samples, backbone: Backbone, vocab: ClassVocabulary) -> list[TokenSample]:
    out = []
    for s in samples:
        a, v = backbone.encode(s)
        classes = np.array(sorted(vocab.index(c) for c in s.classes), dtype=int)
        out.append(TokenSample(a.tokens, v.tokens, v.grid, a.grid, classes, s.labels(vocab)))
    return out


def model_options(cfg: RunConfig) -> ModelOptions:
    return ModelOptions(single_stage=cfg.single_stage, clamp_gate_at_zero=cfg.clamp_gate_at_zero,
                        class_collision_mask=cfg.class_collision_mask,
                        loss_weights=tuple(cfg.loss_weights), detect_threshold=cfg.detect_threshold)


def build_model(cfg: RunConfig, backbone: Backbone, vocab: ClassVocabulary,
                params: dict | None = None) -> TVSLModel:
    if params is None:
        rng = np.random.default_rng([cfg.seed, 0x1417])
        params = init_params(cfg.dim, rng, init=cfg.projector_init, noise=cfg.init_noise,
                             scale_det=cfg.scale_det_init, scale_cls=cfg.scale_cls_init,
                             temperature_av=cfg.temperature_av_init,
                             prompt_length=cfg.prompt_length, token_dim=backbone.text.token_dim)
    if params["P_a"].shape[0] != backbone.visual.dim:
        raise ValueError(f"model dim {params['P_a'].shape[0]} != encoder dim {backbone.visual.dim}")
    return TVSLModel(params, backbone.text, vocab, model_options(cfg), cfg.template)


# --------------------------------------------------------------------------- evaluation data

def mixtures_from_solos(solos, k: int, seed: int, count: int | None = None) -> list[MixtureSample]:
    """Random K-source mixtures of distinct-class solo samples (seeded)."""
    if any(s.K != 1 for s in solos):
        raise ValueError("K-source mixtures are built from single-source samples")
    if len({s.classes[0] for s in solos}) < k:
        raise ValueError(f"fewer than {k} distinct classes available")
    rng = np.random.default_rng([seed, k, 0x313])
    out = []
    for i in range(count or len(solos)):
        chosen, classes = [], set()
        for j in rng.permutation(len(solos)):
            c = solos[j].classes[0]
            if c not in classes:
                chosen.append(solos[j])
                classes.add(c)
            if len(chosen) == k:
                break
        out.append(mix_k_sources(chosen, sample_id=f"mix{k}-{i:05d}"))
    return out


def eval_samples(samples, mode: str, sources: int | None, seed: int) -> list[MixtureSample]:
    ks = {s.K for s in samples}
    if mode == "solo":
        if ks != {1}:
            raise ValueError("solo evaluation needs single-source samples")
        return list(samples)
    k = 2 if mode == "duet" else sources
    if not k or k < 2:
        raise ValueError("k_sources evaluation needs --sources >= 2")
    if ks == {k}:
        return list(samples)
    return mixtures_from_solos(samples, k, seed)


# --------------------------------------------------------------------------- metrics

def _slot_iou_matrix(pred_masks, gt_regions, shape):
    """IoU of every predicted mask against every ground-truth region (P × P)."""
    P = len(pred_masks)
    areas_pred = np.array([m.sum() for m in pred_masks], dtype=np.float64)
    boxes = [np.asarray(g) for g in gt_regions]
    if all(b.shape == (4,) for b in boxes):
        b = np.array(boxes, dtype=int)
        areas_gt = ((b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])).astype(np.float64)
        inter = np.empty((P, P))
        for i, m in enumerate(pred_masks):
            sat = np.zeros((shape[0] + 1, shape[1] + 1), dtype=np.int64)
            sat[1:, 1:] = m.cumsum(0).cumsum(1)
            inter[i] = sat[b[:, 3], b[:, 2]] - sat[b[:, 1], b[:, 2]] - sat[b[:, 3], b[:, 0]] + sat[b[:, 1], b[:, 0]]
    else:
        gt = np.stack([region_mask(g, shape).ravel() for g in gt_regions]).astype(np.float32)
        pm = np.stack([m.ravel() for m in pred_masks]).astype(np.float32)
        inter = (pm @ gt.T).astype(np.float64)
        areas_gt = gt.sum(1).astype(np.float64)
    union = areas_pred[:, None] + areas_gt[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def evaluate_heatmaps(heatmap_list, samples, class_names, mode: str, threshold: float,
                      policy: ThresholdPolicy = ThresholdPolicy(), chance_permutations: int = 100,
                      seed: int = 0) -> MetricsReport:
    """Score class-aware heatmaps against each sample's ground-truth regions.

    The chance baseline re-assigns maps to (sample, class) slots by uniform
    random permutations among frames of the same size.
    """
    sample_ids, slot_sample, slot_classes, slot_conf, gts, masks, shapes = [], [], [], [], [], [], []
    for si, (h, s) in enumerate(zip(heatmap_list, samples)):
        sample_ids.append(s.sample_id)
        b = binarize(h, policy)
        conf = h.confidences()
        for k, c in enumerate(h.class_indices):
            name = class_names[int(c)]
            slot_sample.append(si)
            slot_classes.append(int(c))
            slot_conf.append(float(conf[k]))
            gts.append(s.boxes[name])
            masks.append(b.mask[k])
            shapes.append(b.mask[k].shape)
    slot_sample = np.array(slot_sample)
    n = len(samples)
    slot_iou = np.zeros(len(masks))
    groups: dict = {}
    for i, shp in enumerate(shapes):
        groups.setdefault(shp, []).append(i)
    matrices = {}
    for shp, idx in groups.items():
        M = _slot_iou_matrix([masks[i] for i in idx], [gts[i] for i in idx], shp)
        matrices[shp] = (np.array(idx), M)
        slot_iou[idx] = np.diag(M)

    def per_sample(ious):
        sums = np.bincount(slot_sample, weights=ious, minlength=n)
        counts = np.bincount(slot_sample, minlength=n)
        return sums / np.maximum(counts, 1)

    scores = per_sample(slot_iou)
    report = summarize("solo" if mode == "solo" else "multi", threshold, policy.policy_id,
                       sample_ids, scores, slot_sample, slot_classes, slot_iou, slot_conf)
    if chance_permutations:
        rng = np.random.default_rng([seed, 0xC4A2CE])
        rates, aucs, means = [], [], []
        for _ in range(chance_permutations):
            shuffled = np.zeros(len(masks))
            for idx, M in matrices.values():
                perm = rng.permutation(len(idx))
                shuffled[idx] = M[perm, np.arange(len(idx))]
            s_scores = per_sample(shuffled)
            rates.append(success_rate_at(s_scores, threshold))
            aucs.append(auc(s_scores))
            means.append(float(s_scores.mean()))
        key = f"{'iou' if mode == 'solo' else 'ciou'}@{threshold:g}"
        report.chance = {key: float(np.mean(rates)), "auc": float(np.mean(aucs)),
                         "mean_score": float(np.mean(means)),
                         "permutations": float(chance_permutations)}
    return report


def evaluate(model: TVSLModel, backbone: Backbone, samples, mode: str, threshold: float,
             policy: ThresholdPolicy = ThresholdPolicy(), chance_permutations: int = 100,
             seed: int = 0, zero_shot: bool = False,
             heatmap_fn: Callable | None = None) -> MetricsReport:
    """Class-aware evaluation: each sample is localized for its ground-truth classes."""
    bank = model.bank(zero_shot=zero_shot)
    eval_model = model
    if zero_shot:
        eval_model = TVSLModel(model.params, model.text_encoder, model.vocab, model.opts, model.template)
        eval_model._bank = bank
    maps = []
    for s in samples:
        classes = np.array(sorted(model.vocab.index(c) for c in s.classes), dtype=int)
        if heatmap_fn is not None:
            maps.append(heatmap_fn(s, classes))
            continue
        a, v = backbone.encode(s)
        maps.append(eval_model.localize(a, v, classes, out_size=s.frame.shape[1:]))
    return evaluate_heatmaps(maps, samples, model.vocab.names, mode, threshold, policy,
                             chance_permutations, seed)


def oracle_heatmap(sample: MixtureSample, classes, class_names) -> Heatmap:
    """Ground-truth regions as heatmaps (metric ceiling)."""
    shape = sample.frame.shape[1:]
    maps = np.stack([box_mask(sample.boxes[class_names[c]], shape).astype(float) for c in classes])
    return Heatmap(maps, np.asarray(classes), (shape[0] // 32, shape[1] // 32))


# --------------------------------------------------------------------------- commands

def _vocab(cfg: RunConfig, name: str | None = None) -> ClassVocabulary:
    return ClassVocabulary.from_file(cfg.path(name or cfg.vocabulary))


def cmd_train(cfg: RunConfig, resume: str | None = None, steps: int | None = None) -> TrainState:
    backbone = load_backbone(cfg)
    before = backbone.state_hash()
    vocab = _vocab(cfg)
    train_m = Manifest.load(cfg.path(cfg.train_manifest))
    test_path = cfg.path(cfg.test_manifest)
    if test_path.exists():
        check_split_hygiene(train_m, Manifest.load(test_path))
    train_m.check_vocabulary(vocab)
    data = token_samples(train_m.samples(), backbone, vocab)
    if resume:
        state, _, _ = load_checkpoint(resume)
        model = build_model(cfg, backbone, vocab, state.params)
    else:
        model = build_model(cfg, backbone, vocab)
        state = new_state(model.params, cfg)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.output_dir) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    state = train(model, data, cfg, state, steps=steps, out_dir=cfg.output_dir, encoder_hash=before)
    if backbone.state_hash() != before:
        raise RuntimeError("encoder parameters changed during training")
    return state


def _model_from_checkpoint(checkpoint, cfg: RunConfig | None = None):
    state, saved_cfg, header = load_checkpoint(checkpoint)
    cfg = cfg or saved_cfg
    backbone = load_backbone(cfg)
    if header.get("encoder_hash") and header["encoder_hash"] != backbone.state_hash():
        raise ValueError("checkpoint was trained against a different frozen backbone")
    vocab = ClassVocabulary(tuple(header["vocabulary"])) if header.get("vocabulary") else _vocab(cfg)
    return build_model(cfg, backbone, vocab, state.params), backbone, cfg


def cmd_eval(checkpoint, cfg: RunConfig | None = None, split: str = "test", mode: str = "duet",
             sources: int | None = None, out: str | None = None) -> MetricsReport:
    model, backbone, cfg = _model_from_checkpoint(checkpoint, cfg)
    manifest = Manifest.load(cfg.path(cfg.test_manifest if split == "test" else cfg.train_manifest))
    samples = eval_samples(manifest.samples(), mode, sources, cfg.seed)
    before = params_hash(model.params)
    thr = cfg.iou_threshold if mode == "solo" else cfg.ciou_threshold
    report = evaluate(model, backbone, samples, mode, thr, ThresholdPolicy(cfg.binarize_threshold),
                      cfg.chance_permutations, cfg.seed)
    report.extra.update({"checkpoint": str(checkpoint), "split": split, "eval_mode": mode,
                         "sources": sources or (1 if mode == "solo" else 2)})
    assert params_hash(model.params) == before
    _write_report(report, out)
    return report


def cmd_zeroshot(checkpoint, vocabulary_path, cfg: RunConfig | None = None, mode: str = "duet",
                 sources: int | None = None, out: str | None = None) -> MetricsReport:
    """Evaluate on a new class vocabulary without touching any parameter."""
    model, backbone, cfg = _model_from_checkpoint(checkpoint, cfg)
    if "prompt" in model.params:
        raise ValueError("checkpoint uses learned prompt context; zero-shot transfer is disabled")
    new_vocab = ClassVocabulary.from_file(vocabulary_path)
    zs_model = model.with_vocabulary(new_vocab)
    manifest = Manifest.load(cfg.path(cfg.test_manifest))
    samples = eval_samples(manifest.samples(), mode, sources, cfg.seed)
    before = params_hash(model.params)
    thr = cfg.iou_threshold if mode == "solo" else cfg.ciou_threshold
    report = evaluate(zs_model, backbone, samples, mode, thr, ThresholdPolicy(cfg.binarize_threshold),
                      cfg.chance_permutations, cfg.seed, zero_shot=True)
    if params_hash(model.params) != before:
        raise RuntimeError("zero-shot evaluation modified parameters")
    report.extra.update({"checkpoint": str(checkpoint), "vocabulary": list(new_vocab.names),
                         "eval_mode": mode, "zero_shot": True})
    _write_report(report, out)
    return report


def cmd_localize(checkpoint, sample: MixtureSample, class_names=None, out_dir="heatmaps",
                 cfg: RunConfig | None = None) -> tuple[Heatmap, list[str], list[Path]]:
    model, backbone, cfg = _model_from_checkpoint(checkpoint, cfg)
    a, v = backbone.encode(sample)
    classes = None
    if class_names:
        classes = [model.vocab.index(c) for c in class_names]
    h = model.localize(a, v, classes, out_size=sample.frame.shape[1:])
    names = [model.vocab.names[int(c)] for c in h.class_indices]
    files = export_heatmap(h, out_dir, names, stem=sample.sample_id.replace("/", "_"))
    return h, names, files


def _write_report(report: MetricsReport, out) -> None:
    if out is None:
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(out.with_suffix(".json"))
    report.to_csv(out.with_suffix(".csv"))
