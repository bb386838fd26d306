import random

import numpy as np
import pytest

from complab.ngram import (
    NgramCompleter,
    load_ngram,
    ngram_distribution,
    ngram_prob,
    ngram_topk,
    save_ngram,
    train_ngram,
)
from complab.vocab import build_vocab
from oracles import BruteForceKN


def _model_from_text(text, order=2, max_size=50):
    texts = text.split()
    vocab = build_vocab([texts], max_size=max_size)
    ids = [vocab.id(t) for t in texts]
    return train_ngram([ids], order, vocab), vocab, ids


def test_matches_oracle_on_worked_example():
    model, vocab, ids = _model_from_text("a b a b a c")
    oracle = BruteForceKN([ids], order=2, vocab_size=len(vocab))
    for ctx_text in ("a", "b", "c"):
        for target in ("a", "b", "c"):
            mine = ngram_prob(model, [vocab.id(ctx_text)], vocab.id(target))
            ref = oracle.prob([vocab.id(ctx_text)], vocab.id(target))
            assert mine == pytest.approx(ref, abs=1e-12)


def test_known_value_frozen_from_oracle():
    # Hand-checked through the count tables: in "a b a b a c" with order 2,
    # (a,b) has count 2 and D2 = 2, so the bigram numerator vanishes and
    # p(b|a) = gamma(a) * p_uni(b) = (2.2/3) * (1/3).
    model, vocab, _ = _model_from_text("a b a b a c")
    assert ngram_prob(model, [vocab.id("a")], vocab.id("b")) == pytest.approx(
        (2.2 / 3.0) * (1.0 / 3.0), abs=1e-12
    )


def test_unseen_bigram_positive():
    model, vocab, _ = _model_from_text("a b a b a c")
    assert ngram_prob(model, [vocab.id("b")], vocab.id("c")) > 0.0


def test_unseen_context_equals_unigram():
    model, vocab, _ = _model_from_text("a b a b a c")
    unseen = ngram_prob(model, [vocab.id("c")], vocab.id("a"))  # "c ?" unseen
    unigram = ngram_prob(model, [], vocab.id("a"))
    assert unseen == pytest.approx(unigram, abs=1e-15)


def test_single_symbol_vocab_probability_one():
    vocab = build_vocab([["a", "a", "a"]], max_size=1)
    model = train_ngram([[vocab.id("a")] * 3], 2, vocab)
    assert ngram_prob(model, [vocab.id("a")], vocab.id("a")) == pytest.approx(1.0)
    assert ngram_prob(model, [], vocab.id("a")) == pytest.approx(1.0)


def test_normalization_over_full_vocab():
    model, vocab, _ = _model_from_text("a b a b a c d e a d", order=3)
    for ctx in ([], [vocab.id("a")], [vocab.id("a"), vocab.id("b")], [vocab.unk_id]):
        total = sum(ngram_prob(model, ctx, w) for w in range(len(vocab)))
        assert total == pytest.approx(1.0, abs=1e-9)


def _random_corpus(rng, n_tokens, vocab_size):
    alphabet = [f"w{i}" for i in range(vocab_size)]
    # Zipf-ish skew so count-of-counts are non-degenerate.
    weights = [1.0 / (i + 1) for i in range(vocab_size)]
    total = sum(weights)
    cumulative = []
    acc = 0.0
    for w in weights:
        acc += w / total
        cumulative.append(acc)

    def draw():
        u = rng.random()
        for i, c in enumerate(cumulative):
            if u <= c:
                return alphabet[i]
        return alphabet[-1]

    n_seqs = rng.randint(1, 4)
    sizes = [n_tokens // n_seqs] * n_seqs
    return [[draw() for _ in range(size)] for size in sizes]


@pytest.mark.parametrize("order", [2, 3, 4])
def test_oracle_equivalence_random_corpora(order):
    rng = random.Random(100 + order)
    for trial in range(12):
        streams = _random_corpus(
            rng, n_tokens=rng.randint(50, 600), vocab_size=rng.randint(3, 30)
        )
        vocab = build_vocab(streams, max_size=50)
        sequences = [[vocab.id(t) for t in s] for s in streams]
        model = train_ngram(sequences, order, vocab)
        oracle = BruteForceKN(sequences, order=order, vocab_size=len(vocab))
        for _ in range(25):
            ctx_len = rng.randint(0, order)
            ctx = [rng.randrange(2, len(vocab)) for _ in range(ctx_len)]
            w = rng.randrange(len(vocab))
            mine = ngram_prob(model, ctx, w)
            ref = oracle.prob(ctx, w)
            assert mine == pytest.approx(ref, abs=1e-9), (
                f"order={order} trial={trial} ctx={ctx} w={w}"
            )


def test_distribution_matches_pointwise_probs():
    model, vocab, _ = _model_from_text("a b a b a c d a b c", order=3)
    ctx = [vocab.id("a"), vocab.id("b")]
    vec = ngram_distribution(model, ctx)
    for w in range(len(vocab)):
        assert vec[w] == pytest.approx(ngram_prob(model, ctx, w), abs=1e-12)


def test_pads_excluded_from_counting():
    vocab = build_vocab([["a", "b"]], max_size=10)
    padded = [vocab.id("a"), vocab.id("b"), vocab.pad_id, vocab.pad_id]
    plain = [vocab.id("a"), vocab.id("b")]
    m_padded = train_ngram([padded], 2, vocab)
    m_plain = train_ngram([plain], 2, vocab)
    for w in range(len(vocab)):
        assert ngram_prob(m_padded, [vocab.id("a")], w) == pytest.approx(
            ngram_prob(m_plain, [vocab.id("a")], w), abs=1e-15
        )


def test_topk_dominant_continuation():
    model, vocab, _ = _model_from_text("a b a b a b a b")
    top = ngram_topk(model, [vocab.id("a")], 1)
    assert vocab.text(top[0][0]) == "b"


def test_topk_excludes_specials_and_caps_size():
    model, vocab, _ = _model_from_text("a b c")
    top = ngram_topk(model, [], 100)
    assert len(top) == len(vocab) - 2
    ids = [i for i, _ in top]
    assert vocab.unk_id not in ids and vocab.pad_id not in ids


def test_topk_tie_break_lexicographic():
    # x and y occur identically; x must sort first.
    model, vocab, _ = _model_from_text("a x a y a x a y")
    top = ngram_topk(model, [vocab.id("a")], 3)
    assert vocab.text(top[0][0]) == "x"
    assert vocab.text(top[1][0]) == "y"
    assert top[0][1] == pytest.approx(top[1][1])


def test_topk_probs_descending():
    model, vocab, _ = _model_from_text("a b a b a c d a", order=3)
    top = ngram_topk(model, [vocab.id("a")], 6)
    probs = [p for _, p in top]
    assert probs == sorted(probs, reverse=True)


def _pin_discounts(model, value=0.75):
    model.discounts = {k: (value, value, value) for k in model.discounts}
    model._unigram_vec = None


def test_monotone_data_response_with_fixed_discounts():
    # With the discounts held fixed (<= 1), adding another occurrence of
    # (h, w) never lowers p(w | h) at the top order. With data-estimated
    # discounts the count-of-count statistics shift and strict monotonicity
    # can fail, so the invariant is checked in its provable form.
    rng = random.Random(77)
    for _ in range(60):
        streams = _random_corpus(rng, rng.randint(40, 250), rng.randint(3, 12))
        vocab = build_vocab(streams, max_size=40)
        seqs = [[vocab.id(t) for t in s] for s in streams]
        order = rng.choice([2, 3])
        base = train_ngram(seqs, order, vocab)
        seq = seqs[0]
        if len(seq) < order:
            continue
        i = rng.randrange(len(seq) - order + 1)
        gram = seq[i : i + order]
        boosted = train_ngram(seqs + [list(gram)], order, vocab)
        _pin_discounts(base)
        _pin_discounts(boosted)
        before = ngram_prob(base, gram[:-1], gram[-1])
        after = ngram_prob(boosted, gram[:-1], gram[-1])
        assert after >= before - 1e-12


def test_estimated_discounts_can_break_monotonicity():
    # Documented counterexample: the count-of-count discount estimates move
    # when data is added, so the unrestricted monotone-response property
    # does not hold for modified KN. Guards the ledger note.
    rng = random.Random(77)
    violated = False
    for _ in range(60):
        streams = _random_corpus(rng, rng.randint(40, 250), rng.randint(3, 12))
        vocab = build_vocab(streams, max_size=40)
        seqs = [[vocab.id(t) for t in s] for s in streams]
        order = rng.choice([2, 3])
        base = train_ngram(seqs, order, vocab)
        seq = seqs[0]
        if len(seq) < order:
            continue
        i = rng.randrange(len(seq) - order + 1)
        gram = seq[i : i + order]
        boosted = train_ngram(seqs + [list(gram)], order, vocab)
        if ngram_prob(boosted, gram[:-1], gram[-1]) < ngram_prob(
            base, gram[:-1], gram[-1]
        ):
            violated = True
            break
    assert violated


def test_fallback_discount_on_degenerate_counts(caplog):
    vocab = build_vocab([["a", "a", "a", "a"]], max_size=5)
    with caplog.at_level("WARNING", logger="complab.ngram"):
        model = train_ngram([[vocab.id("a")] * 4], 2, vocab)
    assert "fixed discount" in caplog.text
    assert model.discounts[2] == (0.75, 0.75, 0.75)


def test_empty_corpus_uniform_over_base():
    vocab = build_vocab([["a", "b"]], max_size=10)
    model = train_ngram([], 2, vocab)
    assert ngram_prob(model, [], vocab.id("a")) == pytest.approx(0.5)
    assert ngram_prob(model, [vocab.id("b")], vocab.id("a")) == pytest.approx(0.5)


def test_save_load_round_trip(tmp_path):
    model, vocab, ids = _model_from_text("a b a b a c d e f a b", order=4)
    path = tmp_path / "ngram.json"
    save_ngram(model, path)
    loaded = load_ngram(path)
    for ctx in ([], [vocab.id("a")], [vocab.id("a"), vocab.id("b")]):
        for w in range(len(vocab)):
            assert ngram_prob(loaded, ctx, w) == ngram_prob(model, ctx, w)
    save_ngram(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_completer_adapter():
    model, vocab, _ = _model_from_text("a b a b a b")
    completer = NgramCompleter(model)
    top = completer.topk(["a"], 2)
    assert top[0][0] == "b"
    assert completer.prob(["a"], "b") == pytest.approx(
        ngram_prob(model, [vocab.id("a")], vocab.id("b"))
    )
    assert completer.prob(["a"], "never-seen") == 0.0
