import itertools

import numpy as np
import pytest

from simac.lse import (
    EOS_ID,
    MODULATIONS,
    VOCAB,
    ConditionText,
    Lse,
    LseConfig,
    VocabularyError,
    fuse_condition,
    read_vocab,
    tokenize,
    write_vocab,
)
from simac.tensor import ShapeError, Tensor

TEXT = "the SNR is 5 dB and the signal modulation is QPSK"


@pytest.fixture(scope="module")
def lse():
    return Lse(LseConfig(), np.random.default_rng(0))


def test_rendered_template():
    assert ConditionText(5, "QPSK").rendered == TEXT
    assert ConditionText(12.6, "QPSK").rendered.startswith("the SNR is 13 dB")


def test_tokenize_counts_and_pads():
    tb = tokenize(TEXT)
    assert tb.mask.sum() == 11
    assert tb.ids.shape == (1, 12)
    assert tb.ids[0, 11] == EOS_ID
    np.testing.assert_array_equal(tokenize(TEXT).ids, tb.ids)


def test_tokenize_is_injective_over_conditions():
    seen = set()
    for snr, mod in itertools.product(range(26), MODULATIONS):
        seen.add(tokenize(ConditionText(snr, mod).rendered).ids.tobytes())
    assert len(seen) == 26 * 4


def test_out_of_range_snr_maps_to_edge_bucket():
    hi = tokenize("the SNR is 99 dB").ids
    lo = tokenize("the SNR is -30 dB").ids
    assert VOCAB[hi[0, 3]] == "40" and VOCAB[lo[0, 3]] == "-10"


def test_unknown_word():
    with pytest.raises(VocabularyError, match="cat"):
        tokenize("the cat is 5 dB")


def test_vocab_file_round_trip(tmp_path):
    write_vocab(tmp_path / "vocab.txt")
    assert read_vocab(tmp_path / "vocab.txt") == VOCAB


def test_embedding_lookup_row(lse):
    tb = tokenize("signal")
    words = lse.embed_words(tb).data
    k = VOCAB.index("signal")
    np.testing.assert_array_equal(words[0, 0], lse.table.data[k] + lse.word_pos.data[0])
    # masked slots carry the eos row
    np.testing.assert_array_equal(words[0, 5], lse.table.data[EOS_ID] + lse.word_pos.data[5])


def test_embed_text_shape(lse):
    emb, mask = lse.embed_text(tokenize([TEXT, TEXT]))
    assert emb.shape == (2, 4, 32)
    np.testing.assert_array_equal(mask, np.ones((2, 4)))


def test_fuse_condition_order_and_mask():
    a = Tensor(np.zeros((2, 12, 32)))
    b = Tensor(np.ones((2, 4, 32)))
    F, M = fuse_condition(a, b, np.array([[1, 1, 0, 0], [0, 0, 0, 0]]))
    assert F.shape == (2, 16, 32)
    assert np.all(F.data[:, :12] == 0) and np.all(F.data[:, 12:] == 1)
    np.testing.assert_array_equal(M[0], [1] * 12 + [1, 1, 0, 0])
    with pytest.raises(ShapeError):
        fuse_condition(a, Tensor(np.ones((2, 4, 16))), np.ones((2, 4)))


def test_encode_shape_and_range(lse):
    rng = np.random.default_rng(1)
    s_mul = Tensor(rng.standard_normal((3, 12, 32)) * 10)
    e = lse(s_mul, tokenize([TEXT] * 3))
    assert e.shape == (3, 16, 16)
    assert np.all(np.abs(e.data) < 1.0)


def test_masked_words_do_not_matter(lse):
    rng = np.random.default_rng(2)
    s_mul = Tensor(rng.standard_normal((1, 12, 32)))
    a = tokenize(TEXT)
    b = tokenize(TEXT)
    b.ids[0, 11] = VOCAB.index("qpsk")  # masked slot
    np.testing.assert_array_equal(lse(s_mul, a).data, lse(s_mul, b).data)


def test_empty_condition_leaves_features_to_themselves(lse):
    rng = np.random.default_rng(3)
    s_mul = Tensor(rng.standard_normal((1, 12, 32)))
    empty = tokenize("")
    other = tokenize("")
    other.ids[:] = VOCAB.index("db")
    e1, e2 = lse(s_mul, empty).data, lse(s_mul, other).data
    np.testing.assert_array_equal(e1[:, :12], e2[:, :12])


def test_condition_is_live(lse):
    s_mul = Tensor(np.random.default_rng(4).standard_normal((1, 12, 32)))
    e0 = lse(s_mul, tokenize(ConditionText(0, "BPSK").rendered)).data
    e25 = lse(s_mul, tokenize(ConditionText(25, "16QAM").rendered)).data
    assert np.linalg.norm(e0 - e25) > 0


def test_odd_dimension_rejected():
    with pytest.raises(ValueError):
        LseConfig(d=31, heads=1)
