import numpy as np
import pytest

from tvsl.encoders import SyntheticTextEncoder
from tvsl.text import ClassVocabulary, EmptySelectionError, build_bank, select_sources

MUSIC = ("accordion", "acoustic guitar", "cello", "clarinet", "erhu", "flute",
         "saxophone", "trumpet", "tuba", "violin", "xylophone")


@pytest.fixture(scope="module")
def encoder():
    return SyntheticTextEncoder(32, seed=4)


def test_bank_shape(encoder):
    bank = build_bank(ClassVocabulary(MUSIC), encoder)
    assert bank.matrix.shape == (11, 32)


def test_plain_bank_rows(encoder):
    bank = build_bank(ClassVocabulary(MUSIC), encoder)
    for name, row in zip(MUSIC, bank.matrix):
        np.testing.assert_array_equal(row, encoder.encode(name))


def test_swapping_entries_swaps_rows(encoder):
    names = list(MUSIC)
    swapped = names.copy()
    swapped[2], swapped[7] = swapped[7], swapped[2]
    a = build_bank(ClassVocabulary(tuple(names)), encoder).matrix
    b = build_bank(ClassVocabulary(tuple(swapped)), encoder).matrix
    np.testing.assert_array_equal(a[[7, 2]], b[[2, 7]])


def test_template(encoder):
    bank = build_bank(ClassVocabulary(("cello",)), encoder, template="the sound of a {}")
    np.testing.assert_array_equal(bank.matrix[0], encoder.encode("the sound of a cello"))


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        ClassVocabulary(("a", "b", "a"))


def test_vocabulary_file_round_trip(tmp_path):
    v = ClassVocabulary(MUSIC)
    v.to_file(tmp_path / "v.txt")
    assert ClassVocabulary.from_file(tmp_path / "v.txt") == v


def test_select_two_of_many(rng):
    N = 221
    bank_m = rng.normal(size=(N, 8))
    vocab = ClassVocabulary(tuple(f"c{i}" for i in range(N)))
    from tvsl.text import TextEmbeddingBank
    bank = TextEmbeddingBank(bank_m, vocab)
    y = np.zeros(N)
    y[[17, 3]] = 1
    sel = select_sources(bank, y)
    assert [i for i, _ in sel] == [3, 17]
    np.testing.assert_array_equal(sel[1][1], bank_m[17])
    assert len(select_sources(bank, np.ones(N))) == N
    one = select_sources(bank, np.eye(N)[5])
    assert len(one) == 1 and np.array_equal(one[0][1], bank_m[5])
    with pytest.raises(EmptySelectionError):
        select_sources(bank, np.zeros(N))
    with pytest.raises(ValueError):
        select_sources(bank, np.ones(N - 1))
