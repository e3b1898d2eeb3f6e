import numpy as np
import pytest

from tvsl.config import RunConfig
from tvsl.data import Manifest
from tvsl.encoders import ConfigurationError
from tvsl.metrics import MetricsReport
from tvsl.model import params_hash
from tvsl.pipeline import (cmd_eval, cmd_localize, cmd_train, cmd_zeroshot, eval_samples,
                           evaluate_heatmaps, mixtures_from_solos, oracle_heatmap)


@pytest.fixture(scope="module")
def trained(small_world_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = RunConfig(data_root=str(small_world_dir), output_dir=str(out), steps=10,
                    batch_size=8, checkpoint_every=0, chance_permutations=20)
    cmd_train(cfg)
    return cfg, out / "checkpoint.npz"


def test_oracle_heatmaps_score_100(small_world_dir):
    samples = Manifest.load(small_world_dir / "test.jsonl").samples()
    names = Manifest.load(small_world_dir / "test.jsonl").header["world"]["class_names"]
    maps = [oracle_heatmap(s, sorted(names.index(c) for c in s.classes), names) for s in samples]
    rep = evaluate_heatmaps(maps, samples, names, "duet", 0.3, chance_permutations=10)
    assert rep.aggregates["ciou@0.3"] == 100.0
    assert rep.chance["ciou@0.3"] < 100.0


def test_eval_is_deterministic(trained):
    cfg, ckpt = trained
    a = cmd_eval(ckpt, cfg, mode="duet")
    b = cmd_eval(ckpt, cfg, mode="duet")
    assert a.to_json() == b.to_json()
    assert a.policy == "minmax-ge-0.5"
    assert set(a.chance) >= {"ciou@0.3", "auc"}


def test_zero_shot_on_training_classes_equals_eval(trained, small_world_dir):
    cfg, ckpt = trained
    ev = cmd_eval(ckpt, cfg, mode="duet")
    zs = cmd_zeroshot(ckpt, small_world_dir / "vocab.txt", cfg, mode="duet")
    assert zs.aggregates == ev.aggregates and zs.sample_scores == ev.sample_scores
    assert zs.chance == ev.chance


def test_zero_shot_leaves_checkpoint_untouched(trained, tmp_path):
    cfg, ckpt = trained
    before = ckpt.read_bytes()
    vocab = tmp_path / "v.txt"
    vocab.write_text("\n".join(Manifest.load(cfg.path("test.jsonl")).header["world"]["class_names"]))
    rep = cmd_zeroshot(ckpt, vocab, cfg, out=str(tmp_path / "zs"))
    assert ckpt.read_bytes() == before
    assert MetricsReport.from_json((tmp_path / "zs.json").read_text()).aggregates == rep.aggregates


def test_zero_shot_refuses_prompt_checkpoint(small_world_dir, tmp_path):
    cfg = RunConfig(data_root=str(small_world_dir), output_dir=str(tmp_path), steps=2,
                    batch_size=4, prompt_length=4, checkpoint_every=0)
    cmd_train(cfg)
    with pytest.raises(ValueError, match="prompt"):
        cmd_zeroshot(tmp_path / "checkpoint.npz", small_world_dir / "vocab.txt", cfg)


def test_localize_writes_one_map_per_class(trained, tmp_path):
    cfg, ckpt = trained
    s = Manifest.load(cfg.path("test.jsonl")).samples()[0]
    h, names, files = cmd_localize(ckpt, s, list(s.classes), tmp_path, cfg)
    assert h.K == len(s.classes) == len([f for f in files if f.suffix == ".png"])
    assert names == list(s.classes)
    h1, _, _ = cmd_localize(ckpt, s, [s.classes[0]], tmp_path / "one", cfg)
    assert h1.K == 1


def test_k_source_mixtures(world):
    rng = np.random.default_rng(0)
    solos = [world.render_solo(n, rng, f"s{i}") for i, n in enumerate(world.spec.class_names)]
    mixes = mixtures_from_solos(solos, 3, seed=1, count=5)
    assert all(m.K == 3 and m.frame.shape[2] == 672 for m in mixes)
    again = mixtures_from_solos(solos, 3, seed=1, count=5)
    assert [m.classes for m in mixes] == [m.classes for m in again]
    with pytest.raises(ValueError):
        eval_samples(mixes, "k_sources", 4, 0)
    with pytest.raises(ValueError):
        eval_samples(solos, "k_sources", None, 0)


def test_evaluation_is_read_only(trained):
    cfg, ckpt = trained
    from tvsl.training import load_checkpoint
    state, _, _ = load_checkpoint(ckpt)
    h = params_hash(state.params)
    cmd_eval(ckpt, cfg)
    state2, _, _ = load_checkpoint(ckpt)
    assert params_hash(state2.params) == h


def test_stride_indivisible_frame_rejected(world):
    with pytest.raises(ConfigurationError):
        world.visual_encoder.encode(np.zeros((3, 200, 448)))
