"""Corpus reading, vocabulary, encoding, segmentation and synthetic data.

File format: one whitespace-tokenised sentence per line, documents
separated by one or more blank lines. Leading lines starting with
``# dclm`` are provenance headers written by the CLI and are skipped.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

UNK, START, END = "<unk>", "<s>", "</s>"
HEADER_PREFIX = "# dclm"

RawDocument = list[list[str]]
EncodedDocument = list[list[int]]


def parse_corpus(text: str | Iterable[str]) -> list[RawDocument]:
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = [line.rstrip("\n") for line in text]
    i = 0
    while i < len(lines) and lines[i].startswith(HEADER_PREFIX):
        i += 1
    docs: list[RawDocument] = []
    current: RawDocument = []
    for line in lines[i:]:
        tokens = line.split()
        if tokens:
            current.append(tokens)
        elif current:
            docs.append(current)
            current = []
    if current:
        docs.append(current)
    return docs


def read_corpus(path) -> list[RawDocument]:
    with open(path, encoding="utf-8") as f:
        return parse_corpus(f)


def format_corpus(docs: Sequence[RawDocument]) -> str:
    return "\n\n".join("\n".join(" ".join(s) for s in doc) for doc in docs) + "\n"


class Vocabulary:
    """Bidirectional token/id map. Ids 0, 1, 2 are UNK, START and END."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [UNK, START, END]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t in self.stoi:
                raise ValueError(f"duplicate token {t!r}")
            self.stoi[t] = len(self.itos)
            self.itos.append(t)

    unk_id, start_id, end_id = 0, 1, 2

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def content_tokens(self) -> list[str]:
        return self.itos[3:]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.content_tokens()) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.strip())


def build_vocab(train_docs: Sequence[RawDocument], top_k: int) -> Vocabulary:
    """Keep the ``top_k`` most frequent tokens; ties go to the lexicographically smaller token."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    counts = Counter(tok for doc in train_docs for sent in doc for tok in sent)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty training set")
    for special in (UNK, START, END):
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tok for tok, _ in ranked[:top_k])


def encode_document(doc: RawDocument, vocab: Vocabulary) -> EncodedDocument:
    return [[vocab.id(tok) for tok in sent] for sent in doc]


def decode_document(doc: EncodedDocument, vocab: Vocabulary) -> RawDocument:
    return [[vocab.token(i) for i in sent] for sent in doc]


def segment_document(doc: EncodedDocument, L: int) -> list[EncodedDocument]:
    """Split into consecutive pieces of at most ``L`` sentences."""
    if L < 1:
        raise ValueError("segment length L must be >= 1")
    return [doc[i:i + L] for i in range(0, len(doc), L)]


def segment_corpus(docs: Sequence[EncodedDocument], L: int) -> list[EncodedDocument]:
    return [seg for doc in docs for seg in segment_document(doc, L)]


@dataclass
class CorpusStats:
    documents: int
    mean_tokens: float
    mean_sentences: float

    def as_table(self) -> str:
        rows = [("documents", str(self.documents)),
                ("mean tokens/document", f"{self.mean_tokens:.2f}"),
                ("mean sentences/document", f"{self.mean_sentences:.2f}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>10}" for k, v in rows)

    def as_keyvalues(self) -> str:
        return (f"documents={self.documents}\n"
                f"mean_tokens={self.mean_tokens!r}\n"
                f"mean_sentences={self.mean_sentences!r}")


def corpus_stats(docs: Sequence[Sequence[Sequence]]) -> CorpusStats:
    if not docs:
        return CorpusStats(0, 0.0, 0.0)
    n = len(docs)
    tokens = sum(len(s) for doc in docs for s in doc)
    sentences = sum(len(doc) for doc in docs)
    return CorpusStats(n, tokens / n, sentences / n)


@dataclass
class SyntheticCorpus:
    """Documents from a topic-chain process plus its exact entropies.

    Each sentence picks a topic and draws every word uniformly from that
    topic's private word list. Under ``chained`` dependency the first
    sentence's topic is uniform and each later topic is the successor
    (mod ``n_topics``) of the previous one; under ``independent`` every
    sentence's topic is uniform.

    Entropies are in nats per predicted token, where a sentence of ``W``
    words contributes ``W + 1`` predictions (its words and END).
    ``entropy_with_context`` is the true entropy rate of the process;
    ``entropy_sentence_level`` is the best achievable by a model that sees
    only the current sentence.
    """

    docs: list[RawDocument]
    topics: list[list[int]]
    topic_words: list[list[str]]
    dependency: str
    entropy_with_context: float
    entropy_sentence_level: float
    first_word_entropy_given_context: float
    first_word_entropy_marginal: float
    per_word_entropy_within_sentence: float

    def log_prob(self, doc: RawDocument) -> float:
        """Log-probability of ``doc`` under the generating process (END included)."""
        n_topics = len(self.topic_words)
        word_topic = {w: k for k, ws in enumerate(self.topic_words) for w in ws}
        per_topic = len(self.topic_words[0])
        total = 0.0
        prev_topic = None
        for sent in doc:
            ks = {word_topic.get(w) for w in sent}
            if len(ks) != 1 or None in ks:
                return -math.inf
            (k,) = ks
            if prev_topic is None or self.dependency == "independent":
                total -= math.log(n_topics)
            elif k != (prev_topic + 1) % n_topics:
                return -math.inf
            total -= len(sent) * math.log(per_topic)
            prev_topic = k
        return total


def generate_synthetic_corpus(n_docs: int, sents_per_doc: int, words_per_sent: int,
                              n_topics: int, words_per_topic: int, dependency: str,
                              rng: np.random.Generator | int) -> SyntheticCorpus:
    if min(n_docs, sents_per_doc, words_per_sent, n_topics, words_per_topic) < 1:
        raise ValueError("all counts must be >= 1")
    if dependency not in ("chained", "independent"):
        raise ValueError(f"dependency must be 'chained' or 'independent', not {dependency!r}")
    rng = np.random.default_rng(rng)
    topic_words = [[f"t{k}w{j}" for j in range(words_per_topic)] for k in range(n_topics)]
    docs, topics = [], []
    for _ in range(n_docs):
        doc, seq = [], []
        k = int(rng.integers(n_topics))
        for s in range(sents_per_doc):
            if s > 0:
                k = (k + 1) % n_topics if dependency == "chained" else int(rng.integers(n_topics))
            picks = rng.integers(words_per_topic, size=words_per_sent)
            doc.append([topic_words[k][j] for j in picks])
            seq.append(k)
        docs.append(doc)
        topics.append(seq)

    ln_t, ln_w = math.log(n_topics), math.log(words_per_topic)
    S, W = sents_per_doc, words_per_sent
    # END is deterministic given sentence length, so it carries no entropy.
    sentence_level = S * (ln_t + W * ln_w)
    if dependency == "chained":
        with_context = ln_t + S * W * ln_w
        first_given_ctx = ln_w
    else:
        with_context = sentence_level
        first_given_ctx = ln_t + ln_w
    n_pred = S * (W + 1)
    return SyntheticCorpus(
        docs=docs, topics=topics, topic_words=topic_words, dependency=dependency,
        entropy_with_context=with_context / n_pred,
        entropy_sentence_level=sentence_level / n_pred,
        first_word_entropy_given_context=first_given_ctx,
        first_word_entropy_marginal=ln_t + ln_w,
        per_word_entropy_within_sentence=ln_w,
    )
