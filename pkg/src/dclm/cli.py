"""Command-line front end.

    dclm stats --corpus train.txt
    dclm synth --out synth.txt --docs 200 --seed 1
    dclm train --corpus train.txt --dev dev.txt --variant ccdclm --checkpoint m.ckpt --out hist.tsv
    dclm ppl --checkpoint m.ckpt --test test.txt
    dclm coherence --checkpoint m.ckpt --test test.txt --baseline-checkpoint base.ckpt
    dclm gridsearch --corpus train.txt --dev dev.txt --variant ccdclm

Text outputs start with a ``# dclm`` header line holding the full flag
set; ``header_argv`` turns it back into an argument list. Exit codes: 0
on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import shlex
import sys
import tempfile
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, training
from .corpus import Vocabulary
from .models import ModelConfig, forced_uniform, new_model
from .nn import VARIANTS
from .training import DEFAULT_GRID, TrainConfig

log = logging.getLogger("dclm")

HEADER = "# dclm"


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dclm", description="Document-context language models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--variant", choices=VARIANTS, default="ccdclm")
    model.add_argument("--K", type=_positive_int, default=32, help="word embedding size")
    model.add_argument("--H", type=_positive_int, default=32, help="LSTM hidden size")
    model.add_argument("--A", type=_positive_int, default=48, help="attention hidden size (adclm)")

    fit = argparse.ArgumentParser(add_help=False)
    fit.add_argument("--corpus", required=True, help="training corpus")
    fit.add_argument("--dev", required=True, help="development corpus")
    fit.add_argument("--L", type=_positive_int, default=5, help="max sentences per training segment")
    fit.add_argument("--lambda", dest="lr", type=_positive_float, default=0.1, help="AdaGrad learning rate")
    fit.add_argument("--tau", type=_positive_float, default=5.0, help="gradient norm clipping threshold")
    fit.add_argument("--epochs", type=int, default=10)
    fit.add_argument("--eval-every", type=_positive_int, default=None,
                     help="updates between dev evaluations (default: once per epoch)")
    fit.add_argument("--vocab-size", type=_positive_int, default=10000,
                     help="number of most frequent training words kept")

    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")

    p = sub.add_parser("synth", parents=[seed], help="write a synthetic topic-chain corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=_positive_int, default=200)
    p.add_argument("--sentences", type=_positive_int, default=5)
    p.add_argument("--words", type=_positive_int, default=6)
    p.add_argument("--topics", type=_positive_int, default=5)
    p.add_argument("--words-per-topic", type=_positive_int, default=5)
    p.add_argument("--dependency", choices=("chained", "independent"), default="chained")

    p = sub.add_parser("train", parents=[model, fit, seed], help="train a model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="history file: updates and mean dev log-likelihood")

    p = sub.add_parser("ppl", help="test perplexity of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--L", type=int, default=0,
                   help="segment test documents into at most L sentences (0: whole documents)")
    p.add_argument("--force-uniform", action="store_true",
                   help="debug: zero the output layer so every word is equally likely")
    p.add_argument("--out")

    p = sub.add_parser("coherence", parents=[seed], help="shuffled-document coherence test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--bootstrap-sets", type=_positive_int, default=1000)
    p.add_argument("--baseline-checkpoint")
    p.add_argument("--out")

    p = sub.add_parser("gridsearch", parents=[model, fit, seed], help="grid search over K and H")
    p.add_argument("--K-values", type=_int_list, default=list(DEFAULT_GRID))
    p.add_argument("--H-values", type=_int_list, default=list(DEFAULT_GRID))
    p.add_argument("--out")
    return parser


def header_line(args: argparse.Namespace) -> str:
    parts = [args.command]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "verbose") or value is None or value is False:
            continue
        flag = "--lambda" if key == "lr" else "--" + key.replace("_", "-")
        if value is True:
            parts.append(flag)
        elif isinstance(value, list):
            parts.extend([flag, ",".join(map(str, value))])
        else:
            parts.extend([flag, str(value)])
    return f"{HEADER} {shlex.join(parts)}"


def header_argv(line: str) -> list[str]:
    """Argument list recorded in an output header line."""
    if not line.startswith(HEADER + " "):
        raise ValueError("not a dclm header line")
    return shlex.split(line[len(HEADER) + 1:])


def _write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _read_docs(path) -> list[corpus_mod.RawDocument]:
    if not Path(path).is_file():
        raise CliError(f"{path}: no such file")
    return corpus_mod.read_corpus(path)


def _vocab_path(checkpoint) -> str:
    return str(checkpoint) + ".vocab"


def _load_model(checkpoint):
    for path in (checkpoint, _vocab_path(checkpoint)):
        if not Path(path).is_file():
            raise CliError(f"{path}: no such file")
    model, meta = training.load_checkpoint(checkpoint)
    vocab = Vocabulary.load(_vocab_path(checkpoint))
    if len(vocab) != model.config.V:
        raise CliError(f"{_vocab_path(checkpoint)}: {len(vocab)} entries, checkpoint has V={model.config.V}")
    return model, vocab, meta


def _encode(docs, vocab):
    return [corpus_mod.encode_document(d, vocab) for d in docs]


def emit_history_plot_data(history: training.TrainHistory, path, header: str = HEADER) -> None:
    """Tab-separated ``updates`` / ``mean_loglik`` rows, sorted by update count."""
    if not history.points:
        raise ValueError("empty training history")
    rows = sorted(history.points, key=lambda p: p.updates)
    lines = [header, "updates\tmean_loglik"]
    lines += [f"{p.updates}\t{p.mean_loglik!r}" for p in rows]
    _write_text(path, "\n".join(lines) + "\n")


def cmd_stats(args, header) -> str:
    stats = corpus_mod.corpus_stats(_read_docs(args.corpus))
    return f"{stats.as_table()}\n{stats.as_keyvalues()}"


def cmd_synth(args, header) -> str:
    synth = corpus_mod.generate_synthetic_corpus(
        args.docs, args.sentences, args.words, args.topics, args.words_per_topic,
        args.dependency, args.seed)
    oracle = (f"entropy_with_context={synth.entropy_with_context!r}\n"
              f"entropy_sentence_level={synth.entropy_sentence_level!r}\n"
              f"perplexity_with_context={math.exp(synth.entropy_with_context)!r}\n"
              f"perplexity_sentence_level={math.exp(synth.entropy_sentence_level)!r}")
    _write_text(args.out, header + "\n" + corpus_mod.format_corpus(synth.docs))
    _write_text(args.out + ".oracle", header + "\n" + oracle + "\n")
    return oracle


def _train_config(args) -> TrainConfig:
    return TrainConfig(L=args.L, lr=args.lr, tau=args.tau, epochs=args.epochs,
                       seed=args.seed, eval_every=args.eval_every)


def cmd_train(args, header) -> str:
    raw_train, raw_dev = _read_docs(args.corpus), _read_docs(args.dev)
    vocab = corpus_mod.build_vocab(raw_train, args.vocab_size)
    cfg = ModelConfig(args.variant, len(vocab), args.K, args.H, args.A)
    model = new_model(cfg, rng=args.seed)
    best, history = training.train(model, _encode(raw_train, vocab), _encode(raw_dev, vocab),
                                   _train_config(args))
    # write to temporaries first so a failure leaves no partial outputs
    ckpt = Path(args.checkpoint)
    tmp = ckpt.with_name(ckpt.name + ".tmp")
    vocab_tmp = tmp.with_name(tmp.name + ".vocab")
    try:
        training.save_checkpoint(best, tmp, L=args.L, seed=args.seed)
        vocab.save(vocab_tmp)
        if args.out:
            emit_history_plot_data(history, args.out, header)
        os.replace(vocab_tmp, _vocab_path(ckpt))
        os.replace(tmp, ckpt)
    finally:
        for leftover in (tmp, vocab_tmp):
            leftover.unlink(missing_ok=True)
    point = history.best()
    return (f"variant={cfg.variant}\nparams={best.n_params()}\nupdates={history.points[-1].updates}\n"
            f"best_updates={point.updates}\ndev_perplexity={point.perplexity!r}")


def cmd_ppl(args, header) -> str:
    model, vocab, _ = _load_model(args.checkpoint)
    docs = _encode(_read_docs(args.test), vocab)
    if args.L > 0:
        docs = corpus_mod.segment_corpus(docs, args.L)
    if args.force_uniform:
        model = forced_uniform(model)
    return f"perplexity={evaluation.perplexity(model, docs)!r}"


def cmd_coherence(args, header) -> str:
    model, vocab, _ = _load_model(args.checkpoint)
    docs = [d for d in _encode(_read_docs(args.test), vocab) if len(d) >= 2]
    if not docs:
        raise CliError(f"{args.test}: no document with two or more sentences")
    result = evaluation.bootstrap_coherence(model, docs, args.bootstrap_sets, args.seed)
    lines = [result.as_table(model.config.variant)]
    kv = [result.as_keyvalues()]
    if args.baseline_checkpoint:
        base, base_vocab, _ = _load_model(args.baseline_checkpoint)
        if base_vocab.itos != vocab.itos:
            raise CliError("baseline checkpoint uses a different vocabulary")
        base_result = evaluation.bootstrap_coherence(base, docs, args.bootstrap_sets, args.seed)
        lines.append(base_result.as_table(base.config.variant).splitlines()[1])
        kv.append(f"baseline_mean_accuracy={base_result.mean!r}\nbaseline_std={base_result.std!r}")
        try:
            z, p = evaluation.z_test(result, base_result)
            kv.append(f"z={z!r}\np={p!r}")
        except evaluation.ZeroVarianceError as e:
            kv.append(f"z=undefined\np=undefined\nz_error={e}")
    return "\n".join(lines + kv)


def cmd_gridsearch(args, header) -> str:
    raw_train, raw_dev = _read_docs(args.corpus), _read_docs(args.dev)
    vocab = corpus_mod.build_vocab(raw_train, args.vocab_size)
    grid = [(k, h) for k in args.K_values for h in args.H_values]
    result = training.grid_search(args.variant, _encode(raw_train, vocab), _encode(raw_dev, vocab),
                                  grid, _train_config(args), V=len(vocab), A=args.A)
    k, h = result.best
    return f"{result.as_table()}\ncells={len(grid)}\nbest_K={k}\nbest_H={h}\nbest_perplexity={result.cells[result.best]!r}"


COMMANDS = {
    "stats": cmd_stats, "synth": cmd_synth, "train": cmd_train,
    "ppl": cmd_ppl, "coherence": cmd_coherence, "gridsearch": cmd_gridsearch,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    header = header_line(args)
    try:
        text = COMMANDS[args.command](args, header)
        out = getattr(args, "out", None)
        if out and args.command in ("stats", "ppl", "coherence", "gridsearch"):
            _write_text(out, header + "\n" + text + "\n")
    except (CliError, FileNotFoundError, ValueError, OSError) as e:
        print(f"dclm: error: {e}", file=sys.stderr)
        return 1
    print(text)
    return 0


def main() -> None:
    sys.exit(run())
