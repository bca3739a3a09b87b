"""Shared oracles for the test suite."""

import numpy as np

from dclm.corpus import build_vocab, encode_document


def numeric_grad(f, array, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = array[idx]
        array[idx] = old + eps
        hi = f()
        array[idx] = old - eps
        lo = f()
        array[idx] = old
        grad[idx] = (hi - lo) / (2 * eps)
    return grad


def rel_error(analytic, numeric, floor=1e-3):
    """Max elementwise |a - n| / max(|a|, |n|, floor).

    The floor turns the check absolute for near-zero gradients, where
    finite-difference round-off dominates.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def model_rel_error(model, docs, eps=1e-5, names=None):
    """Worst relative error between backprop and finite differences over ``names``."""
    from dclm.graph import Graph

    def loss():
        return sum(-model.document_log_likelihood(d)[0] for d in docs)

    g = Graph()
    total = g.sum([model.document_loss(g, d)[0] for d in docs])
    g.backward(total)
    worst = {}
    for name in names or model.params:
        node = g.params.get(name)
        analytic = node.grad.copy() if node is not None else np.zeros_like(model.params[name])
        worst[name] = rel_error(analytic, numeric_grad(loss, model.params[name], eps))
    return worst


# 5 distinct sentences over 27 word types; document d is the cycle A..E rotated by d,
# so the next sentence is determined by the previous one.
_WORDS = [f"w{i:02d}" for i in range(27)]
_CYCLE = [_WORDS[0:6], _WORDS[6:12], _WORDS[12:18], _WORDS[18:24],
          [_WORDS[24], _WORDS[25], _WORDS[26], _WORDS[0], _WORDS[7], _WORDS[14]]]
OVERFIT_DOCS = [[list(_CYCLE[(d + s) % 5]) for s in range(5)] for d in range(5)]


def overfit_corpus():
    vocab = build_vocab(OVERFIT_DOCS, 1000)
    return vocab, [encode_document(d, vocab) for d in OVERFIT_DOCS]


# 2 documents x 3 sentences over a 17-word vocabulary (V = 20)
TOY_DOCS = [
    [["a", "b", "c"], ["d", "e"], ["f", "g", "h", "a"]],
    [["i", "j"], ["k", "l", "m"], ["n", "o", "p", "q"]],
]


def toy_corpus():
    vocab = build_vocab(TOY_DOCS, 100)
    return vocab, [encode_document(d, vocab) for d in TOY_DOCS]
