import json

import pytest

from tvsl.cli import main


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "run.yaml").write_text(
        "data_root: data\noutput_dir: runs/a\nsteps: 6\nbatch_size: 8\ncheckpoint_every: 3\n"
        "chance_permutations: 10\nworld:\n  n_train: 24\n  n_test: 8\n")
    return root / "run.yaml"


def test_full_cycle(config, capsys, tmp_path):
    cfg = str(config)
    assert main(["synth", "--config", cfg]) == 0
    assert main(["synth", "--config", cfg]) == 2
    assert main(["train", "--config", cfg]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["step"] == 6
    assert main(["eval", "--config", cfg, "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep.json").exists() and (tmp_path / "rep.csv").exists()
    vocab = config.parent / "data" / "vocab.txt"
    assert main(["zeroshot", "--config", cfg, "--vocabulary", str(vocab)]) == 0
    capsys.readouterr()
    assert main(["localize", "--config", cfg, "--sample-id", "test-00000", "--out", str(tmp_path / "hm")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert any(line.endswith(".f32") for line in lines)
    assert main(["localize", "--config", cfg, "--sample-id", "nope"]) == 2


def test_prompt_override_blocks_zero_shot(config, tmp_path):
    cfg = str(config)
    if not (config.parent / "data" / "world.json").exists():
        main(["synth", "--config", cfg])
    ckpt_dir = tmp_path / "p"
    (tmp_path / "p.yaml").write_text(config.read_text().replace("runs/a", str(ckpt_dir))
                                     .replace("data_root: data", f"data_root: {config.parent / 'data'}"))
    assert main(["train", "--config", str(tmp_path / "p.yaml"), "--prompt-length", "2"]) == 0
    assert main(["zeroshot", "--config", str(tmp_path / "p.yaml"), "--vocabulary",
                 str(config.parent / "data" / "vocab.txt")]) == 2
