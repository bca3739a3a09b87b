"""Neural building blocks: Glorot init, stacked LSTM, clipping, AdaGrad."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import Graph, GraphError, Node

N_LAYERS = 2
# row blocks of the stacked gate matrices, in this order
GATES = ("input", "forget", "output", "candidate")

VARIANTS = ("rnnlm", "drnnlm", "ccdclm", "codclm", "adclm")


def glorot_init(d1: int, d2: int, rng: np.random.Generator) -> np.ndarray:
    """``d1 x d2`` matrix uniform on +-sqrt(6 / (d1 + d2))."""
    if d1 < 1 or d2 < 1:
        raise ValueError(f"glorot_init needs positive dims, got ({d1}, {d2})")
    bound = math.sqrt(6.0 / (d1 + d2))
    return rng.uniform(-bound, bound, size=(d1, d2))


@dataclass
class LstmLayerParams:
    """Parameter names of one LSTM layer inside a model's parameter dict.

    ``W_x`` is ``4H x I``, ``W_h`` is ``4H x H`` and ``b`` is ``4H x 1``;
    rows ``[k*H:(k+1)*H]`` belong to gate ``GATES[k]``.
    """

    W_x: str
    W_h: str
    b: str
    input_dim: int
    hidden_dim: int

    def shapes(self) -> dict[str, tuple[int, int]]:
        H, I = self.hidden_dim, self.input_dim
        return {self.W_x: (4 * H, I), self.W_h: (4 * H, H), self.b: (4 * H, 1)}

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        H, I = self.hidden_dim, self.input_dim
        # Glorot bounds per gate block, not for the stacked matrix
        return {
            self.W_x: np.vstack([glorot_init(H, I, rng) for _ in GATES]),
            self.W_h: np.vstack([glorot_init(H, H, rng) for _ in GATES]),
            self.b: np.zeros((4 * H, 1)),
        }


@dataclass
class LstmState:
    """Per-layer ``(hidden, cell)`` node pairs, bottom layer first."""

    layers: list[tuple[Node, Node]]

    def __post_init__(self):
        if len(self.layers) != N_LAYERS:
            raise ValueError(f"LstmState holds {N_LAYERS} layers, got {len(self.layers)}")

    @property
    def top_hidden(self) -> Node:
        return self.layers[-1][0]

    @classmethod
    def zeros(cls, g: Graph, hidden_dim: int) -> "LstmState":
        z = np.zeros((hidden_dim, 1))
        return cls([(g.input(z), g.input(z)) for _ in range(N_LAYERS)])


def lstm_cell(g: Graph, layer: LstmLayerParams, params: Mapping[str, np.ndarray],
              x: Node, h: Node, c: Node) -> tuple[Node, Node]:
    H = layer.hidden_dim
    if x.value.shape != (layer.input_dim, 1):
        raise GraphError(f"LSTM input is {x.value.shape}, layer expects ({layer.input_dim}, 1)")
    hc = g.lstm_cell(g.param(layer.W_x, params[layer.W_x]), g.param(layer.W_h, params[layer.W_h]),
                     g.param(layer.b, params[layer.b]), x, h, c)
    return g.rows(hc, 0, H), g.rows(hc, H, 2 * H)


def lstm_cell_composed(g: Graph, layer: LstmLayerParams, params: Mapping[str, np.ndarray],
                       x: Node, h: Node, c: Node) -> tuple[Node, Node]:
    """Gate-by-gate version of :func:`lstm_cell` built from elementary ops."""
    H = layer.hidden_dim
    if x.value.shape != (layer.input_dim, 1):
        raise GraphError(f"LSTM input is {x.value.shape}, layer expects ({layer.input_dim}, 1)")
    z = g.add(
        g.affine(g.param(layer.W_x, params[layer.W_x]), x, g.param(layer.b, params[layer.b])),
        g.matmul(g.param(layer.W_h, params[layer.W_h]), h),
    )
    i = g.logistic(g.rows(z, 0, H))
    f = g.logistic(g.rows(z, H, 2 * H))
    o = g.logistic(g.rows(z, 2 * H, 3 * H))
    cand = g.tanh(g.rows(z, 3 * H, 4 * H))
    c_new = g.add(g.mul(f, c), g.mul(i, cand))
    h_new = g.mul(o, g.tanh(c_new))
    return h_new, c_new


def lstm_step(g: Graph, layers: Sequence[LstmLayerParams], params: Mapping[str, np.ndarray],
              x: Node, prev: LstmState, cell=lstm_cell) -> tuple[Node, LstmState]:
    """One time step of the stacked LSTM; returns the top hidden and the new state."""
    if len(layers) != len(prev.layers):
        raise ValueError("layer count and state depth differ")
    new = []
    inp = x
    for layer, (h, c) in zip(layers, prev.layers):
        h, c = cell(g, layer, params, inp, h, c)
        new.append((h, c))
        inp = h
    return inp, LstmState(new)


def clip_gradients(grads: Sequence[np.ndarray], tau: float) -> tuple[list[np.ndarray], float]:
    """Rescale ``grads`` so their global L2 norm is at most ``tau``.

    Returns the (possibly scaled) gradients and the norm measured before
    clipping. Inputs are not modified.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    norm = math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads))
    if norm > tau:
        scale = tau / norm
        return [g * scale for g in grads], norm
    return [g.copy() for g in grads], norm


@dataclass
class OptimizerState:
    lr: float = 0.1
    tau: float = 5.0
    eps: float = 1e-8
    accum: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("learning rate and clip threshold must be positive")


def adagrad_update(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
                   opt: OptimizerState) -> dict[str, np.ndarray]:
    """In-place AdaGrad step on every parameter named in ``grads``."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        acc = opt.accum.get(name)
        if acc is None:
            acc = opt.accum[name] = np.zeros_like(p)
        acc += g * g
        p -= opt.lr * g / (np.sqrt(acc) + opt.eps)
    return params


def param_count(variant: str, V: int, K: int, H: int, A: int = 48) -> int:
    """Closed-form number of trainable scalars for ``variant``."""
    if min(V, K, H, A) < 1:
        raise ValueError("all dimensions must be >= 1")
    lstm_plain = 4 * H * K + 12 * H * H + 8 * H
    lstm_ctx = 4 * H * K + 16 * H * H + 8 * H
    if variant in ("rnnlm", "drnnlm"):
        return lstm_plain + V * K + V * H + V
    if variant == "ccdclm":
        return lstm_ctx + V * K + V * H + V + H
    if variant == "codclm":
        return lstm_plain + V * K + 2 * V * H + V + H
    if variant == "adclm":
        head = 2 * H * H + H + V * H
        attention = A + 2 * A * H
        return lstm_ctx + V * K + head + attention + H
    raise ValueError(f"unknown variant {variant!r}")


def reference_param_count(variant: str, V: int, K: int, H: int) -> int | None:
    """Commonly quoted closed-form counts (ccDCLM and coDCLM only).

    These assume a different LSTM layout from the one used here and do not
    match :func:`param_count`.
    """
    if variant == "ccdclm":
        return H * (16 * H + 3 * K + 6) + V * (H + K + 1)
    if variant == "codclm":
        return H * (13 * H + 3 * K + 6) + V * (2 * H + K + 1)
    return None
