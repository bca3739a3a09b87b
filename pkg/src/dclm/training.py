"""Training loop, grid search and checkpoint I/O."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .corpus import EncodedDocument, segment_corpus
from .graph import Graph
from .models import LanguageModel, ModelConfig, model_from_params, new_model, param_shapes

log = logging.getLogger(__name__)

DEFAULT_GRID = (32, 48, 64, 96, 128, 256)


@dataclass
class TrainConfig:
    L: int = 5
    lr: float = 0.1
    tau: float = 5.0
    epochs: int = 1
    seed: int = 0
    eval_every: int | None = None  # None: evaluate once per epoch
    eps: float = 1e-8

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("lr and tau must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class HistoryPoint:
    updates: int
    mean_loglik: float
    perplexity: float
    wall_time: float


@dataclass
class TrainHistory:
    points: list[HistoryPoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def append(self, point: HistoryPoint) -> None:
        if self.points and point.updates <= self.points[-1].updates:
            raise ValueError("history update counts must be strictly increasing")
        self.points.append(point)

    def best(self) -> HistoryPoint:
        return min(self.points, key=lambda p: p.perplexity)


def corpus_loglik(model: LanguageModel, docs: Sequence[EncodedDocument]) -> tuple[float, int]:
    total, count = 0.0, 0
    for doc in docs:
        ll, n = model.document_log_likelihood(doc)
        total += ll
        count += n
    return total, count


def train_step(model: LanguageModel, segment: EncodedDocument, opt: nn.OptimizerState) -> float:
    """Forward one segment, backprop once, clip globally, AdaGrad. Returns the loss."""
    g = Graph()
    loss, _ = model.document_loss(g, segment)
    g.backward(loss)
    names = [name for name, node in g.params.items() if node._grad is not None]
    clipped, _ = nn.clip_gradients([g.params[n]._grad for n in names], opt.tau)
    nn.adagrad_update(model.params, dict(zip(names, clipped)), opt)
    return float(loss.value[0, 0])


def train(model: LanguageModel, train_docs: Sequence[EncodedDocument],
          dev_docs: Sequence[EncodedDocument], cfg: TrainConfig,
          on_eval=None) -> tuple[LanguageModel, TrainHistory]:
    """Train ``model`` in place; return a copy of the best-on-dev parameters and the history.

    Documents are split into segments of at most ``cfg.L`` sentences and
    each segment is one update. Dev documents are segmented the same way.
    ``on_eval(point)`` is called after every dev evaluation; returning
    ``True`` stops training early.
    """
    segments = segment_corpus(train_docs, cfg.L)
    dev = segment_corpus(dev_docs, cfg.L)
    if not segments or not dev:
        raise ValueError("training and dev corpora must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = nn.OptimizerState(lr=cfg.lr, tau=cfg.tau, eps=cfg.eps)
    history = TrainHistory()
    best_model, best_ppl = model.copy(), math.inf
    start = time.perf_counter()
    updates = 0

    def evaluate() -> bool:
        nonlocal best_model, best_ppl
        ll, n = corpus_loglik(model, dev)
        point = HistoryPoint(updates, ll / n, math.exp(-ll / n), time.perf_counter() - start)
        history.append(point)
        log.info("updates=%d dev_ppl=%.4f", updates, point.perplexity)
        if point.perplexity < best_ppl:
            best_ppl, best_model = point.perplexity, model.copy()
        return on_eval is not None and on_eval(point) is True

    stop = False
    for _ in range(cfg.epochs):
        for idx in rng.permutation(len(segments)):
            train_step(model, segments[idx], opt)
            updates += 1
            if cfg.eval_every and updates % cfg.eval_every == 0 and evaluate():
                stop = True
                break
        if stop or (not cfg.eval_every and evaluate()):
            break
    if not history.points or history.points[-1].updates != updates:
        evaluate()
    return best_model, history


@dataclass
class GridResult:
    best: tuple[int, int]
    cells: dict[tuple[int, int], float]

    def as_table(self) -> str:
        Ks = sorted({k for k, _ in self.cells})
        Hs = sorted({h for _, h in self.cells})
        lines = ["K\\H " + "".join(f"{h:>10}" for h in Hs)]
        for k in Ks:
            row = "".join(f"{self.cells[(k, h)]:>10.3f}" if (k, h) in self.cells else f"{'-':>10}"
                          for h in Hs)
            lines.append(f"{k:<4}" + row)
        return "\n".join(lines)


def grid_search(variant: str, train_docs, dev_docs, grid: Sequence[tuple[int, int]],
                cfg: TrainConfig, V: int, A: int = 48, build=None) -> GridResult:
    """Train one model per ``(K, H)`` cell and pick the lowest dev perplexity.

    Ties go to the smaller H, then the smaller K. ``build(K, H)`` may
    override model construction (used by tests).
    """
    if not grid:
        raise ValueError("empty grid")
    cells = {}
    for K, H in grid:
        if build is not None:
            model = build(K, H)
        else:
            model = new_model(ModelConfig(variant, V, K, H, A), rng=cfg.seed)
        _, history = train(model, train_docs, dev_docs, cfg)
        cells[(K, H)] = history.best().perplexity
    best = min(cells, key=lambda kh: (cells[kh], kh[1], kh[0]))
    return GridResult(best, cells)


MAGIC = b"DCLM1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: LanguageModel, path, L: int = 5, seed: int = 0) -> None:
    """Write ``model`` in the DCLM1 format.

    Layout: the magic line ``DCLM1``, a header line ``variant V K H A L seed``,
    then for every tensor in canonical order a line ``name rows cols``
    followed by ``rows * cols`` little-endian float64 values (row-major).
    """
    c = model.config
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(f"{c.variant} {c.V} {c.K} {c.H} {c.A} {L} {seed}\n".encode("ascii"))
        for name, arr in model.params.items():
            r, k = arr.shape
            f.write(f"{name} {r} {k}\n".encode("ascii"))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _readline(f) -> str:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise CheckpointError("checkpoint truncated")
    return line[:-1].decode("ascii")


def load_checkpoint(path) -> tuple[LanguageModel, dict]:
    """Read a DCLM1 checkpoint; returns the model and ``{"L": .., "seed": ..}``."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC and magic.startswith(b"DCLM"):
            raise CheckpointError(f"{path}: unsupported checkpoint version {magic.strip()!r}")
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a DCLM1 checkpoint (bad magic {magic[:8]!r})")
        try:
            variant, V, K, H, A, L, seed = _readline(f).split()
            cfg = ModelConfig(variant, int(V), int(K), int(H), int(A))
            meta = {"L": int(L), "seed": int(seed)}
        except ValueError as e:
            raise CheckpointError(f"{path}: bad header: {e}") from e
        shapes = param_shapes(cfg)
        params = {}
        for expected, shape in shapes.items():
            fields = _readline(f).split()
            if len(fields) != 3 or fields[0] != expected or (int(fields[1]), int(fields[2])) != shape:
                raise CheckpointError(f"{path}: expected tensor {expected} {shape}, got {fields}")
            n = shape[0] * shape[1]
            raw = f.read(8 * n)
            if len(raw) != 8 * n:
                raise CheckpointError(f"{path}: checkpoint truncated in {expected}")
            params[expected] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return model_from_params(cfg, params), meta


def count_checkpoint_scalars(path) -> int:
    model, _ = load_checkpoint(path)
    return model.n_params()
