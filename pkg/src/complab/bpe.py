"""Byte-pair-encoding subtoken vocabularies.

Greedy merge learning over frequency-weighted token texts: each word is
split into characters plus a terminal `</w>` marker, then the most frequent
adjacent symbol pair is merged repeatedly until the vocabulary budget is
spent or no pair occurs at least twice. Ties break on the lexicographically
smallest (left, right) pair so training is deterministic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .vocab import PAD, UNK, Vocabulary

END_MARKER = "</w>"
UNK_SUBTOKEN = "<unk>"

# Budget head-room for the two non-merge symbols: the unknown-character
# subtoken and the end-of-word marker.
_NUM_SPECIALS = 2


@dataclass(frozen=True, slots=True)
class BpeModel:
    merges: list[tuple[str, str]]
    alphabet: frozenset[str]
    vocab_size: int
    end_marker: str = END_MARKER
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ranks:
            object.__setattr__(
                self, "_ranks", {pair: i for i, pair in enumerate(self.merges)}
            )

    def symbols(self) -> list[str]:
        """All subtoken symbols: specials, marker-inclusive alphabet, merges."""
        out = [UNK_SUBTOKEN, self.end_marker]
        out.extend(sorted(self.alphabet))
        out.extend(left + right for left, right in self.merges)
        return out


def _word_symbols(text: str) -> tuple[str, ...]:
    return tuple(text) + (END_MARKER,)


def _pair_counts(
    words: Mapping[tuple[str, ...], int]
) -> Counter[tuple[str, str]]:
    counts: Counter[tuple[str, str]] = Counter()
    for symbols, freq in words.items():
        for a, b in zip(symbols, symbols[1:]):
            counts[(a, b)] += freq
    return counts


def _merge_word(
    symbols: tuple[str, ...], pair: tuple[str, str], joined: str
) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if (
            i + 1 < len(symbols)
            and symbols[i] == pair[0]
            and symbols[i + 1] == pair[1]
        ):
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def train_bpe(token_counts: Mapping[str, int], vocab_size: int) -> BpeModel:
    """Learn a merge list from token texts with occurrence frequencies."""
    alphabet = frozenset(ch for text in token_counts for ch in text)
    if vocab_size <= len(alphabet) + _NUM_SPECIALS:
        raise ValueError(
            f"vocab_size {vocab_size} leaves no room for merges over an "
            f"alphabet of {len(alphabet)} characters"
        )
    budget = vocab_size - len(alphabet) - _NUM_SPECIALS
    words: dict[tuple[str, ...], int] = {}
    for text, freq in token_counts.items():
        sym = _word_symbols(text)
        words[sym] = words.get(sym, 0) + freq

    merges: list[tuple[str, str]] = []
    pair_counts = _pair_counts(words)
    while len(merges) < budget:
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        if pair_counts[best] < 2:
            break
        merges.append(best)
        joined = best[0] + best[1]
        # Incremental update: only words containing the pair change.
        changed = [
            (sym, freq)
            for sym, freq in words.items()
            if best in zip(sym, sym[1:])
        ]
        for sym, freq in changed:
            for a, b in zip(sym, sym[1:]):
                pair_counts[(a, b)] -= freq
                if pair_counts[(a, b)] <= 0:
                    del pair_counts[(a, b)]
            del words[sym]
            merged = _merge_word(sym, best, joined)
            words[merged] = words.get(merged, 0) + freq
            for a, b in zip(merged, merged[1:]):
                pair_counts[(a, b)] += freq
    return BpeModel(merges=merges, alphabet=alphabet, vocab_size=vocab_size)


def bpe_encode(token_text: str, model: BpeModel) -> list[str]:
    """Segment one token text into subtokens.

    Characters outside the training alphabet become the dedicated unknown
    subtoken; merges are applied in learned order.
    """
    symbols = [
        ch if ch in model.alphabet else UNK_SUBTOKEN for ch in token_text
    ]
    symbols.append(model.end_marker)
    ranks = model._ranks
    # Repeatedly apply the lowest-ranked available merge. Equivalent to
    # applying the merge list strictly in order, since a merge can only
    # create pairs for later-ranked merges.
    while len(symbols) > 1:
        best_rank = None
        best_idx = -1
        for i, pair in enumerate(zip(symbols, symbols[1:])):
            rank = ranks.get(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
                best_idx = i
        if best_rank is None:
            break
        symbols[best_idx : best_idx + 2] = [
            symbols[best_idx] + symbols[best_idx + 1]
        ]
    return symbols


def bpe_decode(subtokens: Iterable[str]) -> tuple[list[str], str | None]:
    """Reassemble whole token texts from a subtoken stream.

    Returns (tokens, partial) where partial is the concatenation of any
    trailing subtokens not closed by an end marker, or None when the stream
    ends on a word boundary.
    """
    tokens: list[str] = []
    current: list[str] = []
    for sub in subtokens:
        if sub.endswith(END_MARKER):
            current.append(sub[: -len(END_MARKER)])
            tokens.append("".join(current))
            current = []
        else:
            current.append(sub)
    partial = "".join(current) if current else None
    return tokens, partial


def subtoken_vocab(model: BpeModel) -> Vocabulary:
    """Integer id map over the model's subtoken symbols.

    `<unk>` doubles as the unknown-character subtoken; `<pad>` is reserved
    for sequence padding. Symbol order is deterministic: sorted alphabet,
    then merges in learned order.
    """
    id_of = {UNK: 0, PAD: 1}
    for sym in model.symbols():
        if sym not in id_of:
            id_of[sym] = len(id_of)
    return Vocabulary(id_of=id_of, max_size=model.vocab_size)


def encode_token_window(
    token_texts: Iterable[str],
    model: BpeModel,
    vocab: Vocabulary,
    seq_len: int = 300,
) -> list[int]:
    """BPE-encode a whole-token window into a fixed-length id sequence.

    Subtokens beyond `seq_len` are dropped from the left so the most recent
    context survives; short sequences are right-padded.
    """
    ids: list[int] = []
    for text in token_texts:
        ids.extend(vocab.id(sub) for sub in bpe_encode(text, model))
    if len(ids) > seq_len:
        ids = ids[-seq_len:]
    if len(ids) < seq_len:
        ids = ids + [vocab.pad_id] * (seq_len - len(ids))
    return ids


def save_merges(model: BpeModel, path: str | Path) -> None:
    """One `left<SPACE>right` line per merge, in merge order."""
    with open(path, "w", encoding="utf-8") as fp:
        for left, right in model.merges:
            fp.write(f"{left} {right}\n")


def load_merges(
    path: str | Path, alphabet: Iterable[str], vocab_size: int
) -> BpeModel:
    merges: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            line = line.rstrip("\n")
            if not line:
                continue
            left, _, right = line.partition(" ")
            merges.append((left, right))
    return BpeModel(
        merges=merges, alphabet=frozenset(alphabet), vocab_size=vocab_size
    )
