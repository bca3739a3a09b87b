"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (also collected into the
terminal summary) before asserting, so a failing criterion still reports
its measured values.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dclm import cli, nn
from dclm.corpus import build_vocab, encode_document, generate_synthetic_corpus
from dclm.evaluation import bootstrap_coherence, perplexity, z_test
from dclm.graph import Graph
from dclm.models import START_ID, ModelConfig, forced_uniform, new_model
from dclm.training import TrainConfig, train
from helpers import model_rel_error, overfit_corpus, toy_corpus


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def synthetic():
    """Chained topic corpus: 200 train, 50 dev, 50 test documents."""
    train_c = generate_synthetic_corpus(200, 5, 6, 5, 5, "chained", 1)
    dev_c = generate_synthetic_corpus(50, 5, 6, 5, 5, "chained", 2)
    test_c = generate_synthetic_corpus(50, 5, 6, 5, 5, "chained", 3)
    vocab = build_vocab(train_c.docs, 10000)
    enc = lambda c: [encode_document(d, vocab) for d in c.docs]
    return train_c, vocab, enc(train_c), enc(dev_c), enc(test_c)


@pytest.fixture(scope="module")
def trained(synthetic):
    _, vocab, tr, dv, _ = synthetic
    models = {}
    for variant in ("rnnlm", "ccdclm", "codclm", "adclm"):
        model = new_model(ModelConfig(variant, len(vocab), 32, 32, 48), rng=0)
        models[variant], _ = train(model, tr, dv, TrainConfig(epochs=10, seed=0))
    return models


def test_1_gradient_correctness():
    vocab, docs = toy_corpus()
    assert len(vocab) == 20
    start = time.perf_counter()
    worst = {}
    for variant in nn.VARIANTS:
        model = new_model(ModelConfig(variant, 20, 8, 12, 6), rng=0)
        worst[variant] = max(model_rel_error(model, docs, eps=1e-5).values())
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 120
    detail = ", ".join(f"{v}={e:.1e}" for v, e in worst.items())
    report(1, ok, f"max rel error {detail}; {elapsed:.0f}s (limits 1e-4, 120s)")
    assert ok


def test_2_parameter_count_oracle():
    combos = [(10003, 32, 48), (20, 8, 12), (57, 5, 3), (15003, 256, 128)]
    mismatches = []
    lines = []
    for (V, K, H), variant in itertools.product(combos, nn.VARIANTS):
        model = new_model(ModelConfig(variant, V, K, H), rng=0)
        enumerated = sum(a.size for a in model.params.values())
        closed = nn.param_count(variant, V, K, H)
        if enumerated != closed:
            mismatches.append((variant, V, K, H, enumerated, closed))
        printed = nn.reference_param_count(variant, V, K, H)
        if printed is not None:
            lines.append(f"{variant}({V},{K},{H}): ours {closed}, printed formula {printed}, "
                         f"difference {printed - closed}")
    ptb = nn.param_count("ccdclm", 10003, 32, 48)
    for line in lines:
        print("  " + line)
    ok = not mismatches and ptb == 853683
    report(2, ok, f"20 cells enumerated == closed form; ccdclm(10003,32,48)={ptb}; "
                  f"printed formulas differ, see output")
    assert ok, mismatches


@pytest.mark.parametrize("variant", ["ccdclm", "rnnlm"])
def test_3_overfit_capacity(variant):
    vocab, docs = overfit_corpus()
    model = new_model(ModelConfig(variant, len(vocab), 32, 32), rng=0)
    # dev = train, so every dev evaluation is the training perplexity
    _, history = train(model, docs, docs, TrainConfig(epochs=500, seed=0),
                       on_eval=lambda p: p.perplexity < 1.5)
    reached = history.points[-1]
    epochs = reached.updates // len(docs)
    ok = reached.perplexity < 1.5
    report(3, ok, f"{variant} training perplexity {reached.perplexity:.4f} after {epochs} epochs "
                  f"(limit < 1.5 within 500)")
    assert ok


def test_4_cross_sentence_signal(synthetic, trained):
    train_c, _, _, _, te = synthetic
    oracle_ctx = math.exp(train_c.entropy_with_context)
    oracle_sent = math.exp(train_c.entropy_sentence_level)
    cc, rn = perplexity(trained["ccdclm"], te), perplexity(trained["rnnlm"], te)
    ratio_ok = cc <= 0.8 * rn
    cc_ok = abs(cc - oracle_ctx) <= 0.15 * oracle_ctx
    rn_ok = abs(rn - oracle_sent) <= 0.15 * oracle_sent
    ok = ratio_ok and cc_ok and rn_ok
    report(4, ok, f"ccdclm ppl {cc:.4f} (oracle {oracle_ctx:.4f}, within 15%: {cc_ok}); "
                  f"rnnlm ppl {rn:.4f} (oracle {oracle_sent:.4f}, within 15%: {rn_ok}); "
                  f"ratio {cc / rn:.4f} vs required <= 0.8: {ratio_ok} "
                  f"(oracle ratio {oracle_ctx / oracle_sent:.4f})")
    assert ok


def test_5_coherence_discrimination(synthetic, trained):
    te = synthetic[4]
    results = {v: bootstrap_coherence(trained[v], te, 200, rng=0)
               for v in ("ccdclm", "codclm", "adclm")}
    coin_rng = np.random.default_rng(1)
    coin = bootstrap_coherence(lambda doc: float(coin_rng.random()), te, 200, rng=0)
    z, p = z_test(results["ccdclm"], coin)
    ok = (results["ccdclm"].mean >= 0.90 and results["codclm"].mean >= 0.80
          and results["adclm"].mean >= 0.80 and p < 0.01)
    accs = ", ".join(f"{v}={r.mean:.4f}" for v, r in results.items())
    report(5, ok, f"mean accuracy {accs}; z vs coin {z:.2f}, p={p:.3g} "
                  f"(limits 0.90 / 0.80 / 0.80, p < 0.01)")
    assert ok


def test_6_harness_statistics():
    synth = generate_synthetic_corpus(155, 5, 6, 5, 5, "chained", 4)
    # the generative log_prob ties on cyclic rotations of a full topic cycle, so the
    # always-correct scorer is built from the originals instead
    originals = {tuple(map(tuple, d)) for d in synth.docs}
    always = lambda doc: 0.0 if tuple(map(tuple, doc)) in originals else -1.0
    oracle = bootstrap_coherence(always, synth.docs, 1000, rng=0)
    coin_rng = np.random.default_rng(2)
    coin = bootstrap_coherence(lambda doc: float(coin_rng.random()), synth.docs, 1000, rng=0)
    ok = oracle.mean == 1.0 and oracle.std == 0.0 and 0.485 <= coin.mean <= 0.515
    report(6, ok, f"oracle mean {oracle.mean} std {oracle.std}; coin mean {coin.mean:.4f} "
                  f"(limit [0.485, 0.515]) over 155 docs x 1000 sets")
    assert ok


def test_7_conventions():
    vocab, docs = toy_corpus()
    V = len(vocab)
    uniform_ppl = perplexity(forced_uniform(new_model(ModelConfig("ccdclm", V, 8, 12), rng=0)), docs)
    # exp(log V) is V only up to rounding, so "exactly" is checked to 1e-12
    uniform_ok = abs(uniform_ppl - V) <= 1e-12 * V

    rnnlm = new_model(ModelConfig("rnnlm", V, 8, 12), rng=0)
    rng = np.random.default_rng(0)
    worst = 0.0
    for doc in docs:
        base = rnnlm.document_log_likelihood(doc)[0]
        for _ in range(10):
            perm = [doc[i] for i in rng.permutation(len(doc))]
            worst = max(worst, abs(rnnlm.document_log_likelihood(perm)[0] - base))
    invariant_ok = worst <= 1e-9

    counts_ok = all(rnnlm.document_log_likelihood(d)[1] == sum(len(s) + 1 for s in d) for d in docs)
    try:
        rnnlm.score_sentence(Graph(), [5, START_ID])
        start_rejected = False
    except ValueError:
        start_rejected = True
    ok = uniform_ok and invariant_ok and counts_ok and start_rejected
    report(7, ok, f"uniform ppl {uniform_ppl!r} vs V={V}; RNNLM permutation drift {worst:.1e} "
                  f"(limit 1e-9); predictions = words + END: {counts_ok}; START rejected: {start_rejected}")
    assert ok


def test_8_determinism(tmp_path):
    corpus = tmp_path / "synth.txt"
    assert cli.run(["synth", "--out", str(corpus), "--docs", "20", "--seed", "5"]) == 0
    outputs = []
    for _ in range(2):
        # identical flags, including output paths, so headers match too
        args = ["--corpus", str(corpus), "--dev", str(corpus)]
        ckpt, hist, coh = tmp_path / "m.ckpt", tmp_path / "hist.tsv", tmp_path / "coh.txt"
        for stale in (ckpt, hist, coh):
            stale.unlink(missing_ok=True)
        assert cli.run(["train", *args, "--variant", "ccdclm", "--K", "8", "--H", "8",
                        "--epochs", "2", "--seed", "7", "--checkpoint", str(ckpt), "--out", str(hist)]) == 0
        assert cli.run(["coherence", "--checkpoint", str(ckpt), "--test", str(corpus),
                        "--bootstrap-sets", "20", "--seed", "7", "--out", str(coh)]) == 0
        outputs.append([p.read_bytes() for p in (ckpt, hist, coh)])
    ok = outputs[0] == outputs[1]
    report(8, ok, "checkpoint, history and coherence files bit-identical across two runs: " + str(ok))
    assert ok


def test_9_full_scale_numbers_informational():
    # not reproducible here; check only that the full pipeline is exposed
    commands = set(cli.COMMANDS)
    ok = commands == {"stats", "synth", "train", "ppl", "coherence", "gridsearch"}
    report(9, ok, "informational: reference PTB test perplexity 66.42 and coherence 83.26% +- 3.77 are not "
                  "reproduced (licensed corpora); CLI exposes train/ppl/coherence/gridsearch for them")
    assert ok
