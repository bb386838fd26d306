"""Decoder-only transformer language model built on the local autograd
engine: token + learned positional embeddings, pre-layer-norm causal
self-attention blocks with GELU feed-forward, and an untied softmax head.

Training runs Adam with linear warmup and gradient clipping, early-stopped
on validation loss with patience 2 and a hard cap of 15 epochs. Double
precision is used for gradient checking; single precision is the training
default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .vocab import Vocabulary

MAX_EPOCHS = 15
NEG_INF = -1e30


class DivergenceError(RuntimeError):
    def __init__(self, message: str, log: "TrainLog | None" = None):
        super().__init__(message)
        self.log = log


class GradCheckError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class TransformerConfig:
    vocab_size: int
    context_len: int = 100
    d_model: int = 128
    n_layers: int = 6
    n_heads: int = 4
    d_ff: int = 512
    dropout: float = 0.0
    seed: int = 0
    batch_size: int = 32
    lr: float = 6e-4
    warmup_steps: int = 100
    clip_norm: float = 1.0
    max_epochs: int = MAX_EPOCHS
    patience: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.max_epochs > MAX_EPOCHS:
            raise ValueError(f"max_epochs capped at {MAX_EPOCHS}")


def small_config(vocab_size: int, context_len: int = 100, seed: int = 0, **kw) -> TransformerConfig:
    """Small configuration for fast CPU checks."""
    kw.setdefault("d_model", 16)
    kw.setdefault("n_layers", 2)
    kw.setdefault("n_heads", 2)
    kw.setdefault("d_ff", 64)
    return TransformerConfig(
        vocab_size=vocab_size, context_len=context_len, seed=seed, **kw
    )


# Parameters are a flat name -> Tensor dict; block tensors are prefixed
# "h<i>." so the whole set serializes and checksums uniformly.
TransformerParams = dict[str, Tensor]


def init_params(config: TransformerConfig, dtype=np.float32) -> TransformerParams:
    rng = np.random.default_rng(config.seed)
    d, ff, v, c = config.d_model, config.d_ff, config.vocab_size, config.context_len

    def normal(*shape):
        return Tensor(
            (rng.standard_normal(shape) * 0.02).astype(dtype), requires_grad=True
        )

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params: TransformerParams = {
        "tok_emb": normal(v, d),
        "pos_emb": normal(c, d),
        "lnf.g": ones(d),
        "lnf.b": zeros(d),
        "w_out": normal(d, v),
    }
    for i in range(config.n_layers):
        p = f"h{i}."
        params[p + "ln1.g"] = ones(d)
        params[p + "ln1.b"] = zeros(d)
        params[p + "attn.wq"] = normal(d, d)
        params[p + "attn.bq"] = zeros(d)
        params[p + "attn.wk"] = normal(d, d)
        params[p + "attn.bk"] = zeros(d)
        params[p + "attn.wv"] = normal(d, d)
        params[p + "attn.bv"] = zeros(d)
        params[p + "attn.wo"] = normal(d, d)
        params[p + "attn.bo"] = zeros(d)
        params[p + "ln2.g"] = ones(d)
        params[p + "ln2.b"] = zeros(d)
        params[p + "ff.w1"] = normal(d, ff)
        params[p + "ff.b1"] = zeros(ff)
        params[p + "ff.w2"] = normal(ff, d)
        params[p + "ff.b2"] = zeros(d)
    return params


def _attention_mask(ids: np.ndarray, pad_id: int, dtype) -> np.ndarray:
    """Additive mask (B, 1, L, L): causal plus pad-key exclusion."""
    b, length = ids.shape
    causal = np.triu(np.full((length, length), NEG_INF, dtype=dtype), k=1)
    mask = np.broadcast_to(causal, (b, 1, length, length)).copy()
    pad_keys = ids == pad_id
    mask[pad_keys[:, None, None, :].repeat(length, axis=2)] = NEG_INF
    return mask


def _dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return ag.mul_const(x, keep)


def _logits(
    params: TransformerParams,
    ids: np.ndarray,
    config: TransformerConfig,
    pad_id: int = 1,
    rng: np.random.Generator | None = None,
) -> Tensor:
    b, length = ids.shape
    if length > config.context_len:
        raise ValueError(
            f"sequence length {length} exceeds context_len {config.context_len}"
        )
    if ids.max() >= config.vocab_size:
        raise ValueError("token id outside vocab_size")
    dtype = params["tok_emb"].data.dtype
    h = config.n_heads
    dh = config.d_model // h

    positions = np.arange(length)
    x = ag.add(
        ag.embedding(params["tok_emb"], ids),
        ag.embedding(params["pos_emb"], positions),
    )
    x = _dropout(x, config.dropout, rng)
    mask = _attention_mask(ids, pad_id, dtype)

    for i in range(config.n_layers):
        p = f"h{i}."
        ln1 = ag.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = ag.add(ag.matmul(ln1, params[p + "attn.wq"]), params[p + "attn.bq"])
        k = ag.add(ag.matmul(ln1, params[p + "attn.wk"]), params[p + "attn.bk"])
        v = ag.add(ag.matmul(ln1, params[p + "attn.wv"]), params[p + "attn.bv"])
        q = ag.transpose(ag.reshape(q, (b, length, h, dh)), (0, 2, 1, 3))
        k = ag.transpose(ag.reshape(k, (b, length, h, dh)), (0, 2, 1, 3))
        v = ag.transpose(ag.reshape(v, (b, length, h, dh)), (0, 2, 1, 3))
        scores = ag.scale(
            ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)
        )
        weights = ag.softmax(ag.add_const(scores, mask))
        ctx = ag.matmul(weights, v)
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, length, config.d_model))
        attn_out = ag.add(ag.matmul(ctx, params[p + "attn.wo"]), params[p + "attn.bo"])
        x = ag.add(x, _dropout(attn_out, config.dropout, rng))

        ln2 = ag.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        ff = ag.gelu(ag.add(ag.matmul(ln2, params[p + "ff.w1"]), params[p + "ff.b1"]))
        ff = ag.add(ag.matmul(ff, params[p + "ff.w2"]), params[p + "ff.b2"])
        x = ag.add(x, _dropout(ff, config.dropout, rng))

    x = ag.layer_norm(x, params["lnf.g"], params["lnf.b"])
    return ag.matmul(x, params["w_out"])


def forward(
    params: TransformerParams,
    ids: Sequence[int],
    config: TransformerConfig,
    pad_id: int = 1,
) -> np.ndarray:
    """Next-token probability rows for one id sequence: shape (L, vocab)."""
    arr = np.asarray(ids, dtype=np.int64)[None, :]
    logits = _logits(params, arr, config, pad_id=pad_id).data[0]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss(
    params: TransformerParams,
    batch: Sequence[Sequence[int]] | np.ndarray,
    config: TransformerConfig,
    pad_id: int = 1,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean token-level cross-entropy over non-pad target positions."""
    ids = np.asarray(batch, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2D id array")
    inputs, targets = ids[:, :-1], ids[:, 1:]
    target_mask = targets != pad_id
    n_real = int(target_mask.sum())
    if n_real == 0:
        raise ValueError("loss undefined: batch contains only pad targets")
    logits = _logits(params, inputs, config, pad_id=pad_id, rng=rng)
    logp = ag.log_softmax(logits)
    picked = ag.gather_last(logp, targets)
    dtype = params["tok_emb"].data.dtype
    masked = ag.mul_const(picked, target_mask.astype(dtype))
    return ag.scale(ag.tsum(masked), -1.0 / n_real)


def grad_check(
    params: TransformerParams,
    batch: Sequence[Sequence[int]] | np.ndarray,
    config: TransformerConfig,
    h: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    pad_id: int = 1,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over >= n_coords randomly sampled parameter coordinates.

    Relative error falls back to absolute error when both gradients are
    near zero. Parameters must be double precision.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise GradCheckError(f"grad_check requires float64 params ({name})")
        p.grad = None
    out = loss(params, batch, config, pad_id=pad_id)
    out.backward()
    analytic = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(g))[0]
            raise GradCheckError(f"non-finite gradient at {name}[{tuple(bad)}]")
        analytic[name] = g

    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names], dtype=np.float64)
    probs = sizes / sizes.sum()
    max_err = 0.0
    for _ in range(n_coords):
        name = names[rng.choice(len(names), p=probs)]
        flat_idx = int(rng.integers(params[name].data.size))
        idx = np.unravel_index(flat_idx, params[name].data.shape)
        original = params[name].data[idx]
        params[name].data[idx] = original + h
        up = float(loss(params, batch, config, pad_id=pad_id).data)
        params[name].data[idx] = original - h
        down = float(loss(params, batch, config, pad_id=pad_id).data)
        params[name].data[idx] = original
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[name][idx])
        denom = max(abs(a), abs(numeric))
        err = abs(a - numeric) if denom < 1e-8 else abs(a - numeric) / denom
        max_err = max(max_err, err)
    return max_err


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(slots=True)
class TrainLog:
    train_losses: list[float] = field(default_factory=list)
    valid_losses: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    param_checksum: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "train_losses": self.train_losses,
                "valid_losses": self.valid_losses,
                "stopped_epoch": self.stopped_epoch,
                "best_epoch": self.best_epoch,
                "param_checksum": self.param_checksum,
            },
            sort_keys=True,
        )


class EarlyStopper:
    """Patience-based stopping on validation loss: improvement means
    strictly lower than the best seen; stop after `patience` consecutive
    non-improving epochs or at the epoch cap."""

    def __init__(self, patience: int = 2, max_epochs: int = MAX_EPOCHS):
        self.patience = patience
        self.max_epochs = max_epochs
        self.best_value = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad = 0

    def update(self, valid_loss: float) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        self.epoch += 1
        if valid_loss < self.best_value:
            self.best_value = valid_loss
            self.best_epoch = self.epoch
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience or self.epoch >= self.max_epochs


def simulate_early_stopping(
    valid_losses: Sequence[float], patience: int = 2, max_epochs: int = MAX_EPOCHS
) -> tuple[int, int]:
    """(stopped_epoch, best_epoch) the stopper would produce on a trace."""
    stopper = EarlyStopper(patience=patience, max_epochs=max_epochs)
    for v in valid_losses:
        if stopper.update(v):
            break
    return stopper.epoch, stopper.best_epoch


def param_checksum(params: TransformerParams) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(str(params[name].data.dtype).encode())
        digest.update(np.ascontiguousarray(params[name].data).tobytes())
    return digest.hexdigest()


def _batches(
    sequences: np.ndarray, batch_size: int, rng: np.random.Generator | None
) -> list[np.ndarray]:
    order = np.arange(len(sequences))
    if rng is not None:
        rng.shuffle(order)
    return [
        sequences[order[i : i + batch_size]]
        for i in range(0, len(order), batch_size)
    ]


def _mean_valid_loss(
    params: TransformerParams,
    valid: np.ndarray,
    config: TransformerConfig,
    pad_id: int,
) -> float:
    total = 0.0
    weight = 0
    for batch in _batches(valid, config.batch_size, rng=None):
        n_real = int((batch[:, 1:] != pad_id).sum())
        if n_real == 0:
            continue
        total += float(loss(params, batch, config, pad_id=pad_id).data) * n_real
        weight += n_real
    if weight == 0:
        raise ValueError("validation split contains only pad targets")
    return total / weight


def train(
    config: TransformerConfig,
    train_sequences: Sequence[Sequence[int]],
    valid_sequences: Sequence[Sequence[int]],
    pad_id: int = 1,
    dtype=np.float32,
) -> tuple[TransformerParams, TrainLog]:
    """Early-stopped Adam training; returns parameters from the best epoch.

    Deterministic for identical (config, data, dtype).
    """
    train_arr = np.asarray(train_sequences, dtype=np.int64)
    valid_arr = np.asarray(valid_sequences, dtype=np.int64)
    if train_arr.size == 0 or valid_arr.size == 0:
        raise ValueError("train and valid splits must be non-empty")
    params = init_params(config, dtype=dtype)
    opt = ag.Adam(
        params,
        lr=config.lr,
        warmup_steps=config.warmup_steps,
        clip_norm=config.clip_norm,
    )
    stopper = EarlyStopper(patience=config.patience, max_epochs=config.max_epochs)
    log = TrainLog()
    best_snapshot = {k: p.data.copy() for k, p in params.items()}
    dropout_rng = np.random.default_rng(config.seed + 101)

    for epoch in range(1, config.max_epochs + 1):
        shuffle_rng = np.random.default_rng((config.seed, epoch))
        epoch_total = 0.0
        epoch_weight = 0
        for batch in _batches(train_arr, config.batch_size, shuffle_rng):
            n_real = int((batch[:, 1:] != pad_id).sum())
            if n_real == 0:
                continue
            opt.zero_grad()
            out = loss(
                params,
                batch,
                config,
                pad_id=pad_id,
                rng=dropout_rng if config.dropout > 0 else None,
            )
            value = float(out.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}", log
                )
            out.backward()
            opt.step()
            epoch_total += value * n_real
            epoch_weight += n_real
        train_loss = epoch_total / max(epoch_weight, 1)
        valid_loss = _mean_valid_loss(params, valid_arr, config, pad_id)
        if not math.isfinite(valid_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", log)
        log.train_losses.append(train_loss)
        log.valid_losses.append(valid_loss)
        improved = stopper.best_value > valid_loss
        stop = stopper.update(valid_loss)
        if improved:
            best_snapshot = {k: p.data.copy() for k, p in params.items()}
        if stop:
            break

    log.stopped_epoch = stopper.epoch
    log.best_epoch = stopper.best_epoch
    for key, data in best_snapshot.items():
        params[key].data = data
    log.param_checksum = param_checksum(params)
    return params, log


def train_steps(
    params: TransformerParams,
    sequences: Sequence[Sequence[int]],
    config: TransformerConfig,
    steps: int,
    pad_id: int = 1,
) -> list[float]:
    """Run a fixed number of optimizer steps over cycling batches; returns
    the per-step losses. Used for optimizer sanity checks."""
    arr = np.asarray(sequences, dtype=np.int64)
    opt = ag.Adam(
        params,
        lr=config.lr,
        warmup_steps=config.warmup_steps,
        clip_norm=config.clip_norm,
    )
    losses = []
    batches = _batches(arr, config.batch_size, rng=None)
    for step in range(steps):
        batch = batches[step % len(batches)]
        opt.zero_grad()
        out = loss(params, batch, config, pad_id=pad_id)
        value = float(out.data)
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}")
        out.backward()
        opt.step()
        losses.append(value)
    return losses


# --------------------------------------------------------------------------
# Candidate scoring
# --------------------------------------------------------------------------


def transformer_topk(
    params: TransformerParams,
    context_ids: Sequence[int],
    k: int,
    config: TransformerConfig,
    vocab: Vocabulary,
) -> list[tuple[int, float]]:
    """Top-k next tokens after the context; specials excluded, ties by
    ascending token text."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not context_ids:
        raise ValueError("context must be non-empty")
    ids = list(context_ids)[-config.context_len :]
    probs = forward(params, ids, config, pad_id=vocab.pad_id)[-1].astype(np.float64)
    probs[vocab.unk_id] = -1.0
    probs[vocab.pad_id] = -1.0
    size = len(vocab)
    lex = sorted(range(size), key=lambda i: vocab.text(i))
    rank = np.empty(size, dtype=np.int64)
    for r, token_id in enumerate(lex):
        rank[token_id] = r
    order = np.lexsort((rank, -probs))
    return [
        (int(i), float(probs[i])) for i in order[: min(k, size - 2)]
    ]


class TransformerCompleter:
    """Text-level adapter over a whole-token transformer."""

    def __init__(
        self, params: TransformerParams, config: TransformerConfig, vocab: Vocabulary
    ):
        self.params = params
        self.config = config
        self.vocab = vocab
        self._lex_rank: np.ndarray | None = None

    def _rank(self) -> np.ndarray:
        if self._lex_rank is None:
            size = len(self.vocab)
            lex = sorted(range(size), key=lambda i: self.vocab.text(i))
            self._lex_rank = np.empty(size, dtype=np.int64)
            for r, token_id in enumerate(lex):
                self._lex_rank[token_id] = r
        return self._lex_rank

    def _distribution(self, context_texts: Sequence[str]) -> np.ndarray:
        ids = [self.vocab.id(t) for t in context_texts][-self.config.context_len :]
        return forward(self.params, ids, self.config, pad_id=self.vocab.pad_id)[
            -1
        ].astype(np.float64)

    def topk(self, context_texts: Sequence[str], k: int) -> list[tuple[str, float]]:
        probs = self._distribution(context_texts)
        probs[self.vocab.unk_id] = -1.0
        probs[self.vocab.pad_id] = -1.0
        order = np.lexsort((self._rank(), -probs))
        return [
            (self.vocab.text(int(i)), float(probs[i]))
            for i in order[: min(k, len(self.vocab) - 2)]
        ]

    def prob(self, context_texts: Sequence[str], candidate: str) -> float:
        if candidate not in self.vocab:
            return 0.0
        return float(self._distribution(context_texts)[self.vocab.id(candidate)])


class BpeTransformerCompleter:
    """Adapter for the subtoken transformer: whole-token candidates are
    scored as products of subtoken probabilities expanded by beam search
    and re-normalized over the returned candidates."""

    def __init__(
        self,
        params: TransformerParams,
        config: TransformerConfig,
        subvocab: Vocabulary,
        bpe_model,
        beam_width: int = 8,
        max_subtokens: int = 16,
    ):
        self.params = params
        self.config = config
        self.subvocab = subvocab
        self.bpe_model = bpe_model
        self.beam_width = beam_width
        self.max_subtokens = max_subtokens

    def _context_ids(self, context_texts: Sequence[str]) -> list[int]:
        from .bpe import bpe_encode

        ids: list[int] = []
        for text in context_texts:
            ids.extend(
                self.subvocab.id(s) for s in bpe_encode(text, self.bpe_model)
            )
        # Leave room to generate candidate subtokens.
        cap = self.config.context_len - self.max_subtokens
        return ids[-cap:]

    def _next_distribution(self, ids: Sequence[int]) -> np.ndarray:
        probs = forward(
            self.params, ids, self.config, pad_id=self.subvocab.pad_id
        )[-1].astype(np.float64)
        probs[self.subvocab.unk_id] = 0.0
        probs[self.subvocab.pad_id] = 0.0
        return probs

    def topk(self, context_texts: Sequence[str], k: int) -> list[tuple[str, float]]:
        from .bpe import bpe_decode

        base = self._context_ids(context_texts)
        beams: list[tuple[list[int], float]] = [([], 1.0)]
        completed: dict[str, float] = {}
        for _ in range(self.max_subtokens):
            expansions: list[tuple[list[int], float]] = []
            for sub_ids, p in beams:
                dist = self._next_distribution(base + sub_ids)
                top = np.argsort(-dist)[: self.beam_width]
                for token_id in top:
                    if dist[token_id] <= 0.0:
                        continue
                    expansions.append((sub_ids + [int(token_id)], p * float(dist[token_id])))
            if not expansions:
                break
            expansions.sort(key=lambda bp: -bp[1])
            beams = []
            for sub_ids, p in expansions[: self.beam_width]:
                last = self.subvocab.text(sub_ids[-1])
                if last.endswith(self.bpe_model.end_marker):
                    words, partial = bpe_decode(
                        [self.subvocab.text(i) for i in sub_ids]
                    )
                    if words and partial is None:
                        text = words[0]
                        completed[text] = max(completed.get(text, 0.0), p)
                        continue
                beams.append((sub_ids, p))
            if not beams:
                break
        ranked = sorted(completed.items(), key=lambda tp: (-tp[1], tp[0]))[:k]
        total = sum(p for _, p in ranked)
        if total <= 0.0:
            return []
        return [(text, p / total) for text, p in ranked]

    def prob(self, context_texts: Sequence[str], candidate: str) -> float:
        """Teacher-forced product of the candidate's subtoken
        probabilities."""
        from .bpe import bpe_encode

        ids = self._context_ids(context_texts)
        p = 1.0
        for sub in bpe_encode(candidate, self.bpe_model):
            sub_id = self.subvocab.id(sub)
            dist = self._next_distribution(ids)
            p *= float(dist[sub_id])
            if p == 0.0:
                return 0.0
            ids = ids + [sub_id]
        return p


# --------------------------------------------------------------------------
# Persistence: versioned npz with a JSON config header.
# --------------------------------------------------------------------------


def save_params(
    params: TransformerParams, config: TransformerConfig, path: str | Path
) -> None:
    header = json.dumps(
        {"version": 1, "config": dataclasses.asdict(config)}, sort_keys=True
    )
    arrays = {name: p.data for name, p in params.items()}
    buffer = io.BytesIO()
    np.savez(buffer, __header__=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buffer.getvalue())


def load_params(path: str | Path) -> tuple[TransformerParams, TransformerConfig]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != 1:
            raise ValueError("unsupported parameter file version")
        config = TransformerConfig(**header["config"])
        params = {
            name: Tensor(data[name].copy(), requires_grad=True)
            for name in data.files
            if name != "__header__"
        }
    return params, config
