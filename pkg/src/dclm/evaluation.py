"""Perplexity and the shuffled-document coherence test.

A *scorer* is either a :class:`~dclm.models.LanguageModel` or any callable
mapping an encoded document to a log-likelihood; the latter lets the
harness be checked with oracle and random scorers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .corpus import EncodedDocument
from .models import LanguageModel

Scorer = Union[LanguageModel, Callable[[EncodedDocument], float]]

CORRECT, INCORRECT, TIE = "correct", "incorrect", "tie"


def _loglik(scorer: Scorer, doc: EncodedDocument) -> float:
    if isinstance(scorer, LanguageModel):
        return scorer.document_log_likelihood(doc)[0]
    return float(scorer(doc))


def perplexity(model: LanguageModel, docs: Sequence[EncodedDocument]) -> float:
    """``exp`` of the mean negative log-likelihood per predicted token.

    Every sentence contributes its words plus END; START is never predicted.
    """
    if not docs:
        raise ValueError("perplexity of an empty corpus")
    total, count = 0.0, 0
    for doc in docs:
        ll, n = model.document_log_likelihood(doc)
        total += ll
        count += n
    return math.exp(-total / count)


def shuffle_document(doc: EncodedDocument, rng: np.random.Generator) -> EncodedDocument:
    """Uniformly random non-identity reordering of the sentences of ``doc``."""
    n = len(doc)
    if n < 2:
        raise ValueError("a document needs at least two sentences to be shuffled")
    identity = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.array_equal(perm, identity):
            return [list(doc[i]) for i in perm]


def _same_sentences(a: EncodedDocument, b: EncodedDocument) -> bool:
    return sorted(map(tuple, a)) == sorted(map(tuple, b))


def coherence_pair(scorer: Scorer, original: EncodedDocument, shuffled: EncodedDocument) -> str:
    """``"correct"`` iff the original scores strictly higher; equality is ``"tie"``."""
    if not _same_sentences(original, shuffled):
        raise ValueError("original and shuffled documents hold different sentences")
    lo = _loglik(scorer, original)
    ls = _loglik(scorer, shuffled)
    if lo > ls:
        return CORRECT
    if lo == ls:
        return TIE
    return INCORRECT


@dataclass
class BootstrapResult:
    accuracies: np.ndarray
    ties: int
    pairs_per_set: int

    @property
    def n_sets(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))

    def as_table(self, name: str = "model") -> str:
        return (f"{'model':<16}{'sets':>6}{'pairs':>7}{'accuracy':>10}{'std':>9}{'ties':>7}\n"
                f"{name:<16}{self.n_sets:>6}{self.pairs_per_set:>7}"
                f"{100 * self.mean:>9.2f}%{100 * self.std:>8.2f}%{self.ties:>7}")

    def as_keyvalues(self) -> str:
        return f"mean_accuracy={self.mean!r}\nstd={self.std!r}\nties={self.ties}"


def _base_seed(rng: np.random.Generator | int | None) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(np.random.default_rng(rng).integers(2**63))


def bootstrap_coherence(scorer: Scorer, test_docs: Sequence[EncodedDocument], n_sets: int,
                        rng: np.random.Generator | int | None = 0) -> BootstrapResult:
    """Resample ``test_docs`` with replacement ``n_sets`` times and score shuffle pairs.

    Set ``l`` draws from ``default_rng([seed, l])``, so each set is
    reproducible on its own. Ties count as incorrect.
    """
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    if not test_docs:
        raise ValueError("empty test set")
    for i, doc in enumerate(test_docs):
        if len(doc) < 2:
            raise ValueError(f"test document {i} has fewer than two sentences")
    seed = _base_seed(rng)
    n = len(test_docs)
    if isinstance(scorer, LanguageModel):
        # models are deterministic, so a document's score can be reused
        model, memo = scorer, {}

        def scorer(doc):
            key = tuple(map(tuple, doc))
            if key not in memo:
                memo[key] = model.document_log_likelihood(doc)[0]
            return memo[key]

    accuracies = np.empty(n_sets)
    ties = 0
    for ell in range(n_sets):
        r = np.random.default_rng([seed, ell])
        correct = 0
        for i in r.integers(n, size=n):
            doc = test_docs[i]
            outcome = coherence_pair(scorer, doc, shuffle_document(doc, r))
            correct += outcome == CORRECT
            ties += outcome == TIE
        accuracies[ell] = correct / n
    return BootstrapResult(accuracies, ties, n)


class ZeroVarianceError(ValueError):
    """The z statistic is undefined when both bootstrap samples are constant."""


def normal_sf(z: float) -> float:
    """``1 - Phi(z)`` for the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def z_test(a: BootstrapResult, b: BootstrapResult) -> tuple[float, float]:
    """Two-sample one-sided z-test of ``mean(a) > mean(b)``; returns ``(z, p)``."""
    if a.n_sets != b.n_sets:
        raise ValueError(f"resample counts differ: {a.n_sets} vs {b.n_sets}")
    z = z_from_moments(a.mean, a.std, b.mean, b.std, a.n_sets)
    return z, normal_sf(z)


def z_from_moments(mean_a: float, std_a: float, mean_b: float, std_b: float, n: int) -> float:
    var = (std_a ** 2 + std_b ** 2) / n
    if var == 0.0:
        raise ZeroVarianceError("both bootstrap samples have zero variance")
    return (mean_a - mean_b) / math.sqrt(var)
