"""Command-line entry point orchestrating the full pipeline:

    datagen -> build-corpus -> train-vocab / train-bpe ->
    train-ngram / train-transformer -> evaluate -> analyze -> serve / abtest

All artifacts land under a single --out workspace. Every command writes a
manifest.json recording the resolved parameters, their hash, and the seed,
so identical invocations produce byte-identical artifacts.

Configuration comes from an optional JSON file (--config); command-line
flags win over config values, which win over built-in defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import abtest as abtest_mod
from . import analysis, datagen, pipeline, ranker
from . import bpe as bpe_mod
from . import ngram as ngram_mod
from . import transformer as tf_mod
from .corpus import save_file_corpus, save_events
from .evalsuite import evaluate
from .lexer import dump_tokens
from .vocab import load_vocab, save_vocab

DEFAULTS = {
    "seed": 7,
    "files": None,
    "tokens_per_file": None,
    "event_rate": None,
    "max_size": 100_000,
    "bpe_vocab_size": 10_000,
    "order": 4,
    "window": 100,
    "profile": "test",
    "n_examples": 1000,
    "cutoff": 10,
    "threshold": 0.1,
    "max_promote": 3,
    "budget_tokens": None,
    "epochs": None,
}


class CliError(RuntimeError):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    with open(p, encoding="utf-8") as fp:
        config = json.load(fp)
    if not isinstance(config, dict):
        raise CliError("config file must contain a JSON object")
    return config


def _resolve(args: argparse.Namespace, config: dict, key: str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _write_manifest(directory: Path, command: str, params: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    canonical = json.dumps(params, sort_keys=True)
    payload = {
        "command": command,
        "params": params,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": params.get("seed"),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fp:
        json.dump(payload, fp, sort_keys=True, indent=2)
        fp.write("\n")


def _corpus_list(raw: str) -> list[str]:
    return [c.strip() for c in raw.split(",") if c.strip()]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_datagen(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    files = _resolve(args, config, "files")
    tokens_per_file = _resolve(args, config, "tokens_per_file")
    event_rate = _resolve(args, config, "event_rate")
    committed, completion = datagen.default_profiles()
    profiles = [committed, completion]
    if args.with_edit:
        profiles.append(datagen.edit_profile())
    params = {
        "seed": seed,
        "files": files,
        "tokens_per_file": tokens_per_file,
        "event_rate": event_rate,
        "profiles": [p.name for p in profiles],
    }
    for profile in profiles:
        if files or tokens_per_file:
            profile = datagen.DomainProfile(
                name=profile.name,
                mean_token_len=profile.mean_token_len,
                frac_len_le6=profile.frac_len_le6,
                frac_local_var=profile.frac_local_var,
                vocab_pool_weights=profile.vocab_pool_weights,
                files=files or profile.files,
                tokens_per_file=tokens_per_file or profile.tokens_per_file,
                recency_modified_frac=profile.recency_modified_frac,
            )
        records, events = datagen.generate(profile, seed, event_rate=event_rate)
        root = pipeline.data_dir(out, profile.name)
        root.mkdir(parents=True, exist_ok=True)
        save_file_corpus(records, root)
        if events:
            save_events(events, root / "events.jsonl")
        print(f"datagen: {profile.name}: {len(records)} files, {len(events)} events")
    _write_manifest(out / "data", "datagen", params)
    return 0


def cmd_build_corpus(args, config) -> int:
    out = Path(args.out)
    names = _corpus_list(args.corpus) if args.corpus else None
    if names is None:
        names = sorted(
            p.name for p in (out / "data").iterdir() if (p / "manifest.jsonl").exists()
        )
    for name in names:
        data = pipeline.load_corpus(out, name)
        corpus_dir = out / "corpora" / name
        corpus_dir.mkdir(parents=True, exist_ok=True)
        with open(corpus_dir / "tokens.jsonl", "w", encoding="utf-8") as fp:
            for record in data.files:
                fp.write(json.dumps({"file_id": record.file_id}, ensure_ascii=False))
                fp.write("\n")
                dump_tokens(record.tokens, fp)
        n_tokens = sum(len(f.tokens) for f in data.files)
        print(f"build-corpus: {name}: {len(data.files)} files, {n_tokens} tokens")
        _write_manifest(corpus_dir, "build-corpus", {"corpus": name, "seed": None})
    return 0


def _training_streams_for(out: Path, train_name: str, seed: int):
    if train_name == pipeline.UNION:
        splits = {
            part: pipeline.split_corpus(pipeline.load_corpus(out, part), seed)
            for part in pipeline.UNION_PARTS
        }
        return pipeline.union_streams(splits)
    data = pipeline.load_corpus(out, train_name)
    return pipeline.training_streams(pipeline.split_corpus(data, seed))


def cmd_train_vocab(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    max_size = _resolve(args, config, "max_size")
    for train_name in _corpus_list(args.train):
        streams = _training_streams_for(out, train_name, seed)
        vocab = pipeline.build_training_vocab(streams, max_size)
        model_dir = pipeline.models_dir(out, train_name)
        model_dir.mkdir(parents=True, exist_ok=True)
        save_vocab(vocab, model_dir / "vocab.tsv")
        print(f"train-vocab: {train_name}: {len(vocab)} entries")
        _write_manifest(
            model_dir,
            "train-vocab",
            {"train": train_name, "seed": seed, "max_size": max_size},
        )
    return 0


def cmd_train_bpe(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    vocab_size = _resolve(args, config, "bpe_vocab_size")
    for train_name in _corpus_list(args.train):
        streams = _training_streams_for(out, train_name, seed)
        counts: dict[str, int] = {}
        for stream in streams:
            for text in stream:
                counts[text] = counts.get(text, 0) + 1
        model = bpe_mod.train_bpe(counts, vocab_size)
        model_dir = pipeline.models_dir(out, train_name)
        model_dir.mkdir(parents=True, exist_ok=True)
        bpe_mod.save_merges(model, model_dir / "bpe.merges.txt")
        alphabet_path = model_dir / "bpe.alphabet.txt"
        alphabet_path.write_text(
            "".join(sorted(model.alphabet)), encoding="utf-8"
        )
        print(
            f"train-bpe: {train_name}: {len(model.merges)} merges, "
            f"alphabet {len(model.alphabet)}"
        )
        _write_manifest(
            model_dir,
            "train-bpe",
            {"train": train_name, "seed": seed, "bpe_vocab_size": vocab_size},
        )
    return 0


def _load_train_vocab(out: Path, train_name: str):
    path = pipeline.models_dir(out, train_name) / "vocab.tsv"
    if not path.exists():
        raise CliError(f"vocabulary not found: {path} (run train-vocab first)")
    return load_vocab(path)


def cmd_train_ngram(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    order = _resolve(args, config, "order")
    window = _resolve(args, config, "window")
    budget = _resolve(args, config, "budget_tokens")
    for train_name in _corpus_list(args.train):
        vocab = _load_train_vocab(out, train_name)
        streams = _training_streams_for(out, train_name, seed)
        windows = pipeline.encode_windows(streams, vocab, window)
        if budget:
            windows = pipeline.trim_to_budget(windows, budget, vocab.pad_id)
        model = ngram_mod.train_ngram(windows, order, vocab)
        model_dir = pipeline.models_dir(out, train_name)
        ngram_mod.save_ngram(model, model_dir / "ngram.json")
        print(
            f"train-ngram: {train_name}: order {order}, "
            f"{pipeline.non_pad_tokens(windows, vocab.pad_id)} tokens"
        )
        _write_manifest(
            model_dir,
            "train-ngram",
            {
                "train": train_name,
                "seed": seed,
                "order": order,
                "window": window,
                "budget_tokens": budget,
            },
        )
    return 0


def _transformer_config(profile: str, vocab_size: int, seed: int, epochs, window: int):
    if profile == "desk":
        config = tf_mod.TransformerConfig(
            vocab_size=vocab_size,
            context_len=window,
            d_model=128,
            n_layers=6,
            n_heads=4,
            d_ff=512,
            dropout=0.1,
            seed=seed,
            max_epochs=epochs or tf_mod.MAX_EPOCHS,
        )
    elif profile == "test":
        config = tf_mod.small_config(
            vocab_size=vocab_size,
            context_len=window,
            seed=seed,
            max_epochs=epochs or tf_mod.MAX_EPOCHS,
        )
    else:
        raise CliError(f"unknown transformer profile: {profile}")
    return config


def cmd_train_transformer(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    window = _resolve(args, config, "window")
    profile = _resolve(args, config, "profile")
    budget = _resolve(args, config, "budget_tokens")
    epochs = _resolve(args, config, "epochs")
    for train_name in _corpus_list(args.train):
        vocab = _load_train_vocab(out, train_name)
        if train_name == pipeline.UNION:
            splits = {
                part: pipeline.split_corpus(pipeline.load_corpus(out, part), seed)
                for part in pipeline.UNION_PARTS
            }
            train_streams = pipeline.union_streams(splits, "train")
            valid_streams = pipeline.union_streams(splits, "valid")
        else:
            split = pipeline.split_corpus(pipeline.load_corpus(out, train_name), seed)
            train_streams = pipeline.training_streams(split, "train")
            valid_streams = pipeline.training_streams(split, "valid")
        train_windows = pipeline.encode_windows(train_streams, vocab, window)
        valid_windows = pipeline.encode_windows(valid_streams, vocab, window)
        if budget:
            train_windows = pipeline.trim_to_budget(train_windows, budget, vocab.pad_id)
            valid_windows = pipeline.trim_to_budget(
                valid_windows, max(budget // 8, window), vocab.pad_id
            )
        tf_config = _transformer_config(profile, len(vocab), seed, epochs, window)
        params, log = tf_mod.train(
            tf_config, train_windows, valid_windows, pad_id=vocab.pad_id
        )
        model_dir = pipeline.models_dir(out, train_name)
        tf_mod.save_params(params, tf_config, model_dir / "transformer.npz")
        (model_dir / "trainlog.json").write_text(log.to_json() + "\n", encoding="utf-8")
        print(
            f"train-transformer: {train_name}: stopped epoch {log.stopped_epoch}, "
            f"best epoch {log.best_epoch}, valid {log.valid_losses[log.best_epoch - 1]:.4f}"
        )
        _write_manifest(
            model_dir,
            "train-transformer",
            {
                "train": train_name,
                "seed": seed,
                "profile": profile,
                "window": window,
                "budget_tokens": budget,
                "epochs": epochs,
            },
        )
    return 0


def _completer_for(out: Path, model_kind: str, train_name: str):
    model_dir = pipeline.models_dir(out, train_name)
    if model_kind == "ngram":
        path = model_dir / "ngram.json"
        if not path.exists():
            raise CliError(f"model file not found: {path}")
        return ngram_mod.NgramCompleter(ngram_mod.load_ngram(path))
    if model_kind == "transformer":
        path = model_dir / "transformer.npz"
        if not path.exists():
            raise CliError(f"model file not found: {path}")
        params, tf_config = tf_mod.load_params(path)
        vocab = _load_train_vocab(out, train_name)
        return tf_mod.TransformerCompleter(params, tf_config, vocab)
    raise CliError(f"unknown model kind: {model_kind}")


def cmd_evaluate(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    n_examples = _resolve(args, config, "n_examples")
    cutoff = _resolve(args, config, "cutoff")
    models = _corpus_list(args.models)
    trains = _corpus_list(args.train)
    evals = _corpus_list(args.eval)
    eval_sets = {}
    for eval_name in evals:
        split = pipeline.split_corpus(pipeline.load_corpus(out, eval_name), seed)
        eval_sets[eval_name] = pipeline.eval_examples(split, n_examples, seed)
    cells = []
    for model_kind in models:
        for train_name in trains:
            completer = _completer_for(out, model_kind, train_name)
            for eval_name in evals:
                report = evaluate(completer.topk, eval_sets[eval_name], cutoff=cutoff)
                cells.append(
                    {
                        "model": model_kind,
                        "train": train_name,
                        "eval": eval_name,
                        "top1": report.top1,
                        "mrr": report.mrr,
                        "n": report.n,
                    }
                )
                print(
                    f"evaluate: {model_kind} / train={train_name} / eval={eval_name}: "
                    f"top1={report.top1:.4f} mrr={report.mrr:.4f} (n={report.n})"
                )
    rdir = pipeline.reports_dir(out)
    rdir.mkdir(parents=True, exist_ok=True)
    with open(rdir / "eval.json", "w", encoding="utf-8") as fp:
        json.dump({"cutoff": cutoff, "cells": cells}, fp, sort_keys=True, indent=2)
        fp.write("\n")
    with open(rdir / "eval.csv", "w", encoding="utf-8", newline="") as fp:
        fp.write("model,train,eval,top1,mrr,n\n")
        for c in cells:
            fp.write(
                f"{c['model']},{c['train']},{c['eval']},"
                f"{c['top1']:.6f},{c['mrr']:.6f},{c['n']}\n"
            )
    _write_manifest(
        rdir,
        "evaluate",
        {
            "seed": seed,
            "models": models,
            "train": trains,
            "eval": evals,
            "n_examples": n_examples,
            "cutoff": cutoff,
        },
    )
    return 0


def cmd_analyze(args, config) -> int:
    out = Path(args.out)
    seed = _resolve(args, config, "seed")
    n_examples = _resolve(args, config, "n_examples")
    cutoff = _resolve(args, config, "cutoff")
    model_kind = args.model or "ngram"
    trains = _corpus_list(args.train)
    eval_name = args.eval
    eval_split = pipeline.split_corpus(pipeline.load_corpus(out, eval_name), seed)
    examples = pipeline.eval_examples(eval_split, n_examples, seed)

    rdir = pipeline.reports_dir(out)
    rdir.mkdir(parents=True, exist_ok=True)

    # Length CDFs and kind shares per corpus (training-side distributions).
    cdfs = {}
    kinds = {}
    for name in sorted(set(trains + [eval_name])):
        if name == pipeline.UNION:
            continue
        split = pipeline.split_corpus(pipeline.load_corpus(out, name), seed)
        corpus_examples = pipeline.eval_examples(split, n_examples, seed)
        cdfs[name] = analysis.length_cdf(corpus_examples)
        kinds[name] = analysis.kind_distribution(corpus_examples)
    analysis.write_length_cdf_csv(rdir, cdfs)
    analysis.write_kind_distribution_csv(rdir, kinds)

    by_length = {}
    by_oov = {}
    oov_rows = []
    for train_name in trains:
        completer = _completer_for(out, model_kind, train_name)
        vocab = _load_train_vocab(out, train_name)
        report = evaluate(completer.topk, examples, cutoff=cutoff)
        label = f"{model_kind}-{train_name}"
        by_length[label] = analysis.accuracy_by_length(
            report.per_example_ranks, examples
        )
        by_oov[label] = analysis.accuracy_by_context_oov(
            report.per_example_ranks, examples, vocab
        )
        oov_rows.append(
            (
                train_name,
                eval_name,
                analysis.oov_rate_targets(vocab, examples),
                analysis.oov_rate_context(vocab, examples),
            )
        )
    analysis.write_accuracy_by_length_csv(rdir, by_length)
    analysis.write_accuracy_by_oov_csv(rdir, by_oov)
    analysis.write_oov_rates_csv(rdir, oov_rows)
    print(f"analyze: wrote drift tables to {rdir}")
    _write_manifest(
        rdir,
        "analyze",
        {
            "seed": seed,
            "model": model_kind,
            "train": trains,
            "eval": eval_name,
            "n_examples": n_examples,
            "cutoff": cutoff,
        },
    )
    return 0


def cmd_serve(args, config) -> int:
    threshold = _resolve(args, config, "threshold")
    max_promote = _resolve(args, config, "max_promote")
    model_path = Path(args.model)
    if not model_path.exists():
        raise CliError(f"model file not found: {model_path}")
    if model_path.suffix == ".json":
        completer = ngram_mod.NgramCompleter(ngram_mod.load_ngram(model_path))
    elif model_path.suffix == ".npz":
        params, tf_config = tf_mod.load_params(model_path)
        vocab_path = model_path.parent / "vocab.tsv"
        if not vocab_path.exists():
            raise CliError(f"vocabulary not found next to model: {vocab_path}")
        completer = tf_mod.TransformerCompleter(params, tf_config, load_vocab(vocab_path))
    else:
        raise CliError(f"unrecognized model file type: {model_path}")
    acceptance_log = ranker.AcceptanceLog(args.log) if args.log else None
    if args.tcp:
        host, _, port = args.tcp.partition(":")
        server = ranker.serve_tcp(
            completer.prob,
            host=host or "127.0.0.1",
            port=int(port or 0),
            threshold=threshold,
            max_promote=max_promote,
            acceptance_log=acceptance_log,
        )
        print(f"serve: listening on {server.server_address[0]}:{server.server_address[1]}")
        try:
            server.serve_forever()
        finally:
            server.server_close()
        return 0
    ranker.serve_stream(
        completer.prob,
        sys.stdin,
        sys.stdout,
        threshold=threshold,
        max_promote=max_promote,
        acceptance_log=acceptance_log,
    )
    return 0


def cmd_abtest(args, config) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        raise CliError(f"acceptance log not found: {log_path}")
    records = []
    with open(log_path, encoding="utf-8") as fp:
        for line in fp:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    observations, skipped = abtest_mod.aggregate(records)
    if skipped:
        print(f"abtest: skipped {skipped} malformed records", file=sys.stderr)
    by_group: dict[str, list] = {}
    for obs in observations:
        by_group.setdefault(obs.group, []).append(obs)
    control_name = args.control
    if control_name not in by_group:
        raise CliError(f"control group {control_name!r} has no observations")
    reports = {}
    for name in _corpus_list(args.experiment):
        if name not in by_group:
            raise CliError(f"experiment group {name!r} has no observations")
        report = abtest_mod.compare(by_group[control_name], by_group[name])
        reports[name] = report
        print(
            f"abtest: {name} vs {control_name}: improvement "
            f"{report.improvement:+.4f}, p={report.p_value:.4f}"
        )
    out_json = Path(args.json) if args.json else log_path.with_suffix(".report.json")
    payload = {name: r.to_dict() for name, r in reports.items()}
    with open(out_json, "w", encoding="utf-8") as fp:
        json.dump(payload, fp, sort_keys=True, indent=2)
        fp.write("\n")
    if args.csv:
        abtest_mod.write_report_csv(reports, args.csv)
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="complab",
        description="code-completion modeling laboratory",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate synthetic corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--files", type=int)
    p.add_argument("--tokens-per-file", dest="tokens_per_file", type=int)
    p.add_argument("--event-rate", dest="event_rate", type=float)
    p.add_argument("--with-edit", action="store_true")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("build-corpus", help="lex corpora into token dumps")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("train-vocab", help="build whole-token vocabularies")
    p.add_argument("--out", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--max-size", dest="max_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_vocab)

    p = sub.add_parser("train-bpe", help="learn BPE merge lists")
    p.add_argument("--out", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--bpe-vocab-size", dest="bpe_vocab_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("train-ngram", help="train n-gram language models")
    p.add_argument("--out", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--budget-tokens", dest="budget_tokens", type=int)
    p.set_defaults(func=cmd_train_ngram)

    p = sub.add_parser("train-transformer", help="train transformer language models")
    p.add_argument("--out", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--profile", choices=("test", "desk"))
    p.add_argument("--seed", type=int)
    p.add_argument("--budget-tokens", dest="budget_tokens", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_transformer)

    p = sub.add_parser("evaluate", help="cross-corpus evaluation matrix")
    p.add_argument("--out", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-examples", dest="n_examples", type=int)
    p.add_argument("--cutoff", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="corpus drift tables")
    p.add_argument("--out", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--model")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-examples", dest="n_examples", type=int)
    p.add_argument("--cutoff", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="rank candidates over NDJSON")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--max-promote", dest="max_promote", type=int)
    p.add_argument("--log")
    p.add_argument("--tcp", help="HOST:PORT to listen on instead of stdio")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("abtest", help="experiment significance report")
    p.add_argument("--log", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--experiment", required=True)
    p.add_argument("--json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_abtest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except (CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
