"""Shared plumbing between the CLI, the experiment scripts, and the tests:
corpus loading, per-corpus training-stream construction, vocabulary and
window building, and evaluation-example extraction.

Training corpora are referred to by name: "committed", "completion",
"edit", or "union" (committed plus completion, no dedup).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import corpus as corpus_mod
from .corpus import CompletionEvent, CorpusKind, EvalExample, FileRecord
from .vocab import Vocabulary, build_vocab, encode

WINDOW = 100
UNION = "union"
UNION_PARTS = ("committed", "completion")

_KIND_BY_NAME = {
    "committed": CorpusKind.COMMITTED,
    "completion": CorpusKind.COMPLETION_EVENTS,
    "edit": CorpusKind.EDIT_SNAPSHOTS,
}


@dataclass(slots=True)
class CorpusData:
    name: str
    files: list[FileRecord]
    events: list[CompletionEvent]


@dataclass(slots=True)
class SplitData:
    name: str
    train_files: list[FileRecord]
    valid_files: list[FileRecord]
    test_files: list[FileRecord]
    train_events: list[CompletionEvent]
    valid_events: list[CompletionEvent]
    test_events: list[CompletionEvent]


def data_dir(out_root: str | Path, name: str) -> Path:
    return Path(out_root) / "data" / name


def models_dir(out_root: str | Path, train_name: str) -> Path:
    return Path(out_root) / "models" / train_name


def reports_dir(out_root: str | Path) -> Path:
    return Path(out_root) / "reports"


def load_corpus(out_root: str | Path, name: str) -> CorpusData:
    root = data_dir(out_root, name)
    if not root.exists():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    files = corpus_mod.load_file_corpus(root)
    events_path = root / "events.jsonl"
    events = corpus_mod.load_events(events_path) if events_path.exists() else []
    return CorpusData(name=name, files=files, events=events)


def split_corpus(data: CorpusData, seed: int) -> SplitData:
    tf, vf, sf = corpus_mod.split(data.files, seed)
    te, ve, se = corpus_mod.split(data.events, seed) if data.events else ([], [], [])
    return SplitData(
        name=data.name,
        train_files=tf,
        valid_files=vf,
        test_files=sf,
        train_events=te,
        valid_events=ve,
        test_events=se,
    )


def _event_texts(event: CompletionEvent) -> list[str]:
    texts = [t.text for t in event.context][-(WINDOW - 1) :]
    texts.append(event.accepted.text)
    return texts


def training_streams(split: SplitData, use: str = "train") -> list[list[str]]:
    """Token-text streams for model training: per-file streams for file
    corpora, one context+target stream per event for event corpora."""
    files = getattr(split, f"{use}_files")
    events = getattr(split, f"{use}_events")
    if split.name == "completion" and events:
        return [_event_texts(e) for e in events]
    return [[t.text for t in f.tokens] for f in files]


def union_streams(splits: dict[str, SplitData], use: str = "train") -> list[list[str]]:
    combined: list[list[str]] = []
    for part in UNION_PARTS:
        combined = corpus_mod.union(combined, training_streams(splits[part], use))
    return combined


def build_training_vocab(
    streams: Sequence[Sequence[str]], max_size: int
) -> Vocabulary:
    return build_vocab(streams, max_size)


def encode_windows(
    streams: Sequence[Sequence[str]], vocab: Vocabulary, window: int = WINDOW
) -> list[list[int]]:
    windows: list[list[int]] = []
    for stream in streams:
        windows.extend(encode(stream, vocab, window))
    return windows


def non_pad_tokens(windows: Sequence[Sequence[int]], pad_id: int) -> int:
    return sum(sum(1 for t in w if t != pad_id) for w in windows)


def trim_to_budget(
    windows: Sequence[Sequence[int]], budget_tokens: int, pad_id: int
) -> list[list[int]]:
    """Keep windows in order until the non-pad token budget is reached."""
    out: list[list[int]] = []
    used = 0
    for w in windows:
        if used >= budget_tokens:
            break
        out.append(list(w))
        used += sum(1 for t in w if t != pad_id)
    return out


def eval_examples(
    split: SplitData, n: int, seed: int
) -> list[EvalExample]:
    """Held-out evaluation examples: sampled identifier targets for file
    corpora, accepted completions for the event corpus."""
    if split.name == "completion" and split.test_events:
        examples, _ = corpus_mod.events_to_examples(split.test_events)
        if len(examples) > n:
            import random

            rng = random.Random(seed)
            examples = rng.sample(examples, n)
        return examples
    kind = _KIND_BY_NAME.get(split.name, CorpusKind.COMMITTED)
    return corpus_mod.sample_identifier_targets(
        split.test_files, n, seed, source_kind=kind
    )
