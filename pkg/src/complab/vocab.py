"""Whole-token vocabularies and id-sequence encoding.

A vocabulary keeps the `max_size` most frequent token texts plus the two
specials; sequences are encoded as fixed-length non-overlapping windows with
out-of-vocabulary texts mapped to `<unk>` and the final short window
right-padded with `<pad>`.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .lexer import Token

UNK = "<unk>"
PAD = "<pad>"


@dataclass(frozen=True, slots=True)
class Vocabulary:
    id_of: dict[str, int]
    max_size: int
    unk_id: int = 0
    pad_id: int = 1
    text_of: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.id_of.get(UNK) != self.unk_id or self.id_of.get(PAD) != self.pad_id:
            raise ValueError("vocabulary must map specials to ids 0 and 1")
        if not self.text_of:
            object.__setattr__(self, "text_of", {i: t for t, i in self.id_of.items()})

    def __len__(self) -> int:
        return len(self.id_of)

    def __contains__(self, text: str) -> bool:
        # Specials are not ordinary members; OOV checks must not treat a
        # literal "<unk>" text as covered.
        return text in self.id_of and text not in (UNK, PAD)

    def id(self, text: str) -> int:
        return self.id_of.get(text, self.unk_id)

    def text(self, token_id: int) -> str:
        return self.text_of[token_id]


def _texts(tokens: Iterable[Token | str]) -> Iterable[str]:
    for t in tokens:
        yield t if isinstance(t, str) else t.text


def build_vocab(corpus: Iterable[Sequence[Token | str]], max_size: int) -> Vocabulary:
    """Build a vocabulary from token streams.

    Keeps the `max_size` most frequent texts; ties broken by ascending
    lexicographic order. Order-independent in the counts, so deterministic
    for any iteration order of equal corpora.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    counts: Counter[str] = Counter()
    for stream in corpus:
        counts.update(_texts(stream))
    counts.pop(UNK, None)
    counts.pop(PAD, None)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    id_of = {UNK: 0, PAD: 1}
    for text, _ in ordered:
        id_of[text] = len(id_of)
    return Vocabulary(id_of=id_of, max_size=max_size)


def encode(
    tokens: Sequence[Token | str], vocab: Vocabulary, window: int
) -> list[list[int]]:
    """Encode a token stream as non-overlapping windows of ids.

    OOV texts map to unk_id; the final short window is right-padded with
    pad_id so every window has exactly `window` ids.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    ids = [vocab.id(t) for t in _texts(tokens)]
    out: list[list[int]] = []
    for start in range(0, len(ids), window):
        chunk = ids[start : start + window]
        if len(chunk) < window:
            chunk = chunk + [vocab.pad_id] * (window - len(chunk))
        out.append(chunk)
    return out


def coverage(vocab: Vocabulary, tokens: Iterable[Token | str]) -> float:
    """Fraction of token occurrences whose text is in the vocabulary."""
    total = 0
    covered = 0
    for text in _texts(tokens):
        total += 1
        if text in vocab:
            covered += 1
    if total == 0:
        raise ValueError("coverage of an empty stream is undefined")
    return covered / total


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Write `token<TAB>id` lines sorted by id."""
    with open(path, "w", encoding="utf-8") as fp:
        for token_id in sorted(vocab.text_of):
            fp.write(f"{vocab.text_of[token_id]}\t{token_id}\n")


def load_vocab(path: str | Path, max_size: int | None = None) -> Vocabulary:
    id_of: dict[str, int] = {}
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            line = line.rstrip("\n")
            if not line:
                continue
            text, _, raw_id = line.rpartition("\t")
            id_of[text] = int(raw_id)
    size = max_size if max_size is not None else max(len(id_of) - 2, 1)
    return Vocabulary(id_of=id_of, max_size=size)
