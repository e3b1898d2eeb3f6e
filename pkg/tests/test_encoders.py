import numpy as np
import pytest

from tvsl.encoders import (ConfigurationError, PatchEncoder, PatchTokenSet, PromptContext,
                           SyntheticTextEncoder, adaptive_pool_matrix, audio_encoder,
                           load_patch_encoder, visual_encoder)


def test_audio_grid_is_fixed(world):
    spec = np.abs(np.random.default_rng(0).normal(size=(40, 224)))
    tokens = world.audio_encoder.encode(spec)
    assert tokens.grid == (10, 6)
    assert tokens.tokens.shape == (60, world.spec.dim)


def test_zero_spectrogram_zero_weights():
    enc = audio_encoder(np.zeros((8, 16)))
    out = enc.encode(np.zeros((40, 48)))
    assert not out.tokens.any()


def test_two_by_two_pooling_oracle():
    x = np.arange(16, dtype=float).reshape(4, 4)
    enc = PatchEncoder(np.eye(1), "audio", sub_pool=(1, 1), grid=(2, 2))
    out = enc.encode(x)
    blocks = [x[i:i + 2, j:j + 2].mean() for i in (0, 2) for j in (0, 2)]
    np.testing.assert_allclose(out.tokens[:, 0], blocks, atol=1e-12)


@pytest.mark.parametrize("width, grid", [(224, (7, 7)), (448, (7, 14)), (896, (7, 28))])
def test_visual_grid(world, width, grid):
    frame = np.random.default_rng(1).random((3, 224, width))
    out = world.visual_encoder.encode(frame)
    assert out.grid == grid and out.n == grid[0] * grid[1]


def test_constant_image_gives_identical_tokens(world):
    out = world.visual_encoder.encode(np.full((3, 224, 448), 0.37))
    np.testing.assert_allclose(out.tokens, np.broadcast_to(out.tokens[0], out.tokens.shape), atol=1e-12)


def test_stride_mismatch_rejected(world):
    with pytest.raises(ConfigurationError):
        world.visual_encoder.encode(np.zeros((3, 224, 230)))


def test_adaptive_pool_rows_sum_to_one():
    m = adaptive_pool_matrix(48, 6 * 4)
    np.testing.assert_allclose(m.sum(1), 1.0)
    assert adaptive_pool_matrix(7, 3)[1, 2:5].tolist() == [1 / 3] * 3


def test_token_set_validation():
    with pytest.raises(ValueError):
        PatchTokenSet(np.zeros((5, 3)), (2, 3), "visual")
    with pytest.raises(ValueError):
        PatchTokenSet(np.full((6, 3), np.nan), (2, 3), "visual")


def test_encoder_weights_round_trip(tmp_path, world):
    path = tmp_path / "visual.npz"
    world.visual_encoder.save(path)
    loaded = load_patch_encoder(path)
    assert loaded.state_hash() == world.visual_encoder.state_hash()
    frame = np.random.default_rng(2).random((3, 224, 224))
    np.testing.assert_array_equal(loaded.encode(frame).tokens, world.visual_encoder.encode(frame).tokens)


def test_encoder_weights_are_read_only(world):
    with pytest.raises(ValueError):
        world.visual_encoder.weight[0, 0] = 1.0


def test_text_encoder_deterministic():
    a = SyntheticTextEncoder(64, seed=0).encode("dog barking")
    b = SyntheticTextEncoder(64, seed=0).encode("dog barking")
    np.testing.assert_array_equal(a, b)


def test_prompt_context_shifts_embedding(rng):
    enc = SyntheticTextEncoder(32)
    plain = enc.encode("violin")
    ctx = PromptContext.init(8, enc.token_dim, rng)
    assert not np.allclose(enc.encode("violin", ctx), plain)
    zero = PromptContext(np.zeros((8, enc.token_dim)))
    np.testing.assert_allclose(enc.encode("violin", zero), plain)


def test_distinct_names_are_separated():
    enc = SyntheticTextEncoder(64)
    names = ["dog barking", "violin", "church bell", "baby crying", "lion roaring", "cello"]
    E = np.stack([enc.encode(n) for n in names])
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    cos = E @ E.T
    np.fill_diagonal(cos, 0)
    assert cos.max() < 0.99


def test_zero_shot_refuses_prompt(rng):
    enc = SyntheticTextEncoder(16)
    with pytest.raises(ConfigurationError):
        enc.encode("cat", PromptContext.init(2, 16, rng), zero_shot=True)


def test_prompt_length_is_validated(rng):
    with pytest.raises(ValueError):
        PromptContext.init(5, 16, rng)


def test_empty_name_rejected():
    with pytest.raises(ValueError):
        SyntheticTextEncoder(16).encode("  --  ")
