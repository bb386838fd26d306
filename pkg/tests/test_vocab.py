import pytest
from hypothesis import given, strategies as st

from complab.vocab import (
    PAD,
    UNK,
    Vocabulary,
    build_vocab,
    coverage,
    encode,
    load_vocab,
    save_vocab,
)


def test_frequency_cut():
    v = build_vocab([["a"] * 3 + ["b"] * 2 + ["c"]], max_size=2)
    assert set(v.id_of) == {UNK, PAD, "a", "b"}
    assert v.id("a") == 2 and v.id("b") == 3


def test_lexicographic_tie_break():
    v = build_vocab([["b", "a", "b", "a"]], max_size=1)
    assert "a" in v.id_of and "b" not in v.id_of


def test_empty_corpus_keeps_specials_only():
    v = build_vocab([], max_size=10)
    assert set(v.id_of) == {UNK, PAD}
    assert v.unk_id == 0 and v.pad_id == 1


def test_ids_dense_and_frequency_ordered():
    v = build_vocab([["x"] * 5 + ["m"] * 3 + ["a"] * 3 + ["z"]], max_size=10)
    assert sorted(v.id_of.values()) == list(range(len(v)))
    # x most frequent, then a/m tie broken lexicographically
    assert v.id("x") == 2 and v.id("a") == 3 and v.id("m") == 4


def test_encode_windows_and_padding():
    v = build_vocab([["a"]], max_size=5)
    windows = encode(["a"] * 250, v, window=100)
    assert len(windows) == 3
    assert all(len(w) == 100 for w in windows)
    assert windows[2][49] == v.id("a")
    assert windows[2][50:] == [v.pad_id] * 50


def test_encode_oov_becomes_unk():
    v = build_vocab([["a"]], max_size=5)
    (window,) = encode(["a", "zzz"], v, window=2)
    assert window == [v.id("a"), v.unk_id]


def test_encode_empty_stream():
    v = build_vocab([["a"]], max_size=5)
    assert encode([], v, window=10) == []


def test_encode_rejects_tiny_window():
    v = build_vocab([["a"]], max_size=5)
    with pytest.raises(ValueError):
        encode(["a"], v, window=1)


def test_coverage():
    v = build_vocab([["a", "b"]], max_size=10)
    assert coverage(v, ["a", "b", "zzz", "a"]) == pytest.approx(0.75)


def test_specials_not_members():
    v = build_vocab([["a"]], max_size=5)
    assert "a" in v
    assert UNK not in v and PAD not in v


def test_save_load_round_trip(tmp_path):
    v = build_vocab([["beta", "alpha", "beta", "gamma"]], max_size=100)
    path = tmp_path / "vocab.tsv"
    save_vocab(v, path)
    loaded = load_vocab(path, max_size=100)
    assert loaded.id_of == v.id_of
    save_vocab(loaded, tmp_path / "again.tsv")
    assert (tmp_path / "again.tsv").read_bytes() == path.read_bytes()


@given(
    st.lists(
        st.text(alphabet="abcdef", min_size=1, max_size=4), min_size=0, max_size=60
    ),
    st.integers(min_value=1, max_value=8),
)
def test_encode_ids_always_in_range(texts, max_size):
    v = build_vocab([texts], max_size=max_size)
    for window in encode(texts, v, window=7):
        assert all(0 <= i < len(v) for i in window)
        assert len(window) == 7
