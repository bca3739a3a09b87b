"""Sentence-level and document-context LSTM language models.

All five variants share one interface. A sentence ``w_1..w_N`` is read as
inputs ``[START, w_1, .., w_N]`` and predicts ``[w_1, .., w_N, END]``;
START is never a prediction target. Context flows from sentence to
sentence inside one graph, so a document loss backpropagates through the
whole document.

Variants and what they carry between sentences:

``rnnlm``   nothing; every sentence starts from the zero state.
``drnnlm``  the full LSTM state, as if sentence boundaries were absent.
``ccdclm``  the previous sentence's final top hidden, concatenated to
            every layer-1 input of the current sentence.
``codclm``  the same vector, added to the output logits through ``W_c``.
``adclm``   all top hiddens of the previous sentence; each position
            attends over them and feeds the mixture to both the
            recurrence and the output layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .corpus import Vocabulary
from .graph import Graph, Node
from .nn import LstmLayerParams, LstmState

START_ID = Vocabulary.start_id
END_ID = Vocabulary.end_id


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    V: int
    K: int
    H: int
    A: int = 48

    def __post_init__(self):
        if self.variant not in nn.VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {nn.VARIANTS}")
        if min(self.V, self.K, self.H, self.A) < 1:
            raise ValueError("V, K, H and A must be positive")
        if self.V < 4:
            raise ValueError("V must cover the three reserved tokens plus one word")


class LanguageModel:
    """Base class; subclasses define the context path."""

    variant = ""
    uses_context_input = False
    output_head: tuple[str, ...] = ()

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 rng: np.random.Generator | int | None = None):
        if config.variant != self.variant:
            raise ValueError(f"{type(self).__name__} cannot take variant {config.variant!r}")
        self.config = config
        self.layers = self._layers_for(config)
        shapes = self.param_shapes()
        if params is None:
            params = self._init_params(np.random.default_rng(rng))
        if list(params) != list(shapes):
            raise ValueError(f"parameter names {list(params)} do not match {list(shapes)}")
        for name, arr in params.items():
            if arr.shape != shapes[name]:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shapes[name]}")
        self.params = params

    # parameters

    @classmethod
    def _layers_for(cls, c: ModelConfig) -> list[LstmLayerParams]:
        in1 = c.K + c.H if cls.uses_context_input else c.K
        return [LstmLayerParams("lstm1.W_x", "lstm1.W_h", "lstm1.b", in1, c.H),
                LstmLayerParams("lstm2.W_x", "lstm2.W_h", "lstm2.b", c.H, c.H)]

    @classmethod
    def shapes_for(cls, c: ModelConfig) -> dict[str, tuple[int, int]]:
        """Every trainable tensor, in canonical (checkpoint) order."""
        shapes = {"embed": (c.V, c.K)}
        for layer in cls._layers_for(c):
            shapes.update(layer.shapes())
        shapes.update(cls._head_shapes(c))
        return shapes

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        return self.shapes_for(self.config)

    @classmethod
    def _head_shapes(cls, c: ModelConfig) -> dict[str, tuple[int, int]]:
        return {"W_o": (c.V, c.H), "b_o": (c.V, 1)}

    def _init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        out = {}
        for name, (r, c) in self.param_shapes().items():
            if name in params:
                out[name] = params[name]
            elif name.startswith("b"):
                out[name] = np.zeros((r, c))
            else:
                out[name] = nn.glorot_init(r, c, rng)
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.params.values())

    def copy(self) -> "LanguageModel":
        return type(self)(self.config, {k: v.copy() for k, v in self.params.items()})

    def p(self, g: Graph, name: str) -> Node:
        return g.param(name, self.params[name])

    # scoring

    def initial_context(self, g: Graph):
        return None

    def _embed(self, g: Graph, token: int) -> Node:
        return g.lookup(self.p(g, "embed"), token)

    def _check_sentence(self, sentence: Sequence[int]) -> None:
        if len(sentence) == 0:
            raise ValueError("cannot score an empty sentence")
        V = self.config.V
        for tok in sentence:
            if not 0 <= tok < V:
                raise ValueError(f"token id {tok} outside vocabulary of size {V}")
            if tok == START_ID:
                raise ValueError("START may not appear inside a sentence; it is never a target")

    def sentence_logits(self, g: Graph, sentence: Sequence[int], ctx=None) -> tuple[list[Node], object]:
        """Output logits for each of the ``N + 1`` predictions, and the next context."""
        self._check_sentence(sentence)
        if ctx is None:
            ctx = self.initial_context(g)
        return self._run(g, [START_ID, *sentence], ctx)

    def score_sentence(self, g: Graph, sentence: Sequence[int], ctx=None) -> tuple[list[Node], object]:
        """Per-position negative log-probabilities (1x1 nodes) and the next context.

        ``ctx=None`` means the first sentence of a document.
        """
        logits, new_ctx = self.sentence_logits(g, sentence, ctx)
        targets = [*sentence, END_ID]
        assert START_ID not in targets
        return [g.neg_log_softmax_pick(z, t) for z, t in zip(logits, targets)], new_ctx

    def document_loss(self, g: Graph, doc: Sequence[Sequence[int]]) -> tuple[Node, int]:
        """Summed negative log-likelihood node of ``doc`` and its number of predictions."""
        if not doc:
            raise ValueError("cannot score an empty document")
        losses: list[Node] = []
        ctx = None
        for sentence in doc:
            nll, ctx = self.score_sentence(g, sentence, ctx)
            losses.extend(nll)
        return g.sum(losses), len(losses)

    def document_log_likelihood(self, doc: Sequence[Sequence[int]]) -> tuple[float, int]:
        """Natural-log likelihood of ``doc`` and its number of predictions.

        Token terms are summed with ``math.fsum``; the result is correctly
        rounded and so independent of summation order.
        """
        if not doc:
            raise ValueError("cannot score an empty document")
        g, terms, ctx = Graph(), [], None
        for sentence in doc:
            nll, ctx = self.score_sentence(g, sentence, ctx)
            terms.extend(float(n.value[0, 0]) for n in nll)
        return -math.fsum(terms), len(terms)

    def _plain_steps(self, g: Graph, inputs: Sequence[int], state: LstmState) -> tuple[list[Node], LstmState]:
        hiddens = []
        for tok in inputs:
            h, state = nn.lstm_step(g, self.layers, self.params, self._embed(g, tok), state)
            hiddens.append(h)
        return hiddens, state

    def _run(self, g: Graph, inputs: Sequence[int], ctx) -> tuple[list[Node], object]:
        raise NotImplementedError


class RNNLM(LanguageModel):
    variant = "rnnlm"
    output_head = ("W_o", "b_o")

    def _run(self, g, inputs, ctx):
        if ctx is not None:
            raise ValueError("rnnlm takes no document context")
        hiddens, _ = self._plain_steps(g, inputs, LstmState.zeros(g, self.config.H))
        W, b = self.p(g, "W_o"), self.p(g, "b_o")
        return [g.affine(W, h, b) for h in hiddens], None


class DRNNLM(LanguageModel):
    variant = "drnnlm"
    output_head = ("W_o", "b_o")

    def initial_context(self, g):
        return LstmState.zeros(g, self.config.H)

    def _run(self, g, inputs, ctx):
        if not isinstance(ctx, LstmState):
            raise ValueError("drnnlm context must be an LstmState")
        hiddens, state = self._plain_steps(g, inputs, ctx)
        W, b = self.p(g, "W_o"), self.p(g, "b_o")
        return [g.affine(W, h, b) for h in hiddens], state


class _VectorContextModel(LanguageModel):
    @classmethod
    def _head_shapes(cls, c):
        return {"W_o": (c.V, c.H), "b_o": (c.V, 1), "c0": (c.H, 1)}

    def initial_context(self, g):
        return self.p(g, "c0")

    def _check_ctx(self, ctx):
        if not isinstance(ctx, Node) or ctx.value.shape != (self.config.H, 1):
            raise ValueError(f"{self.variant} context must be an H x 1 node")


class CCDCLM(_VectorContextModel):
    variant = "ccdclm"
    uses_context_input = True
    output_head = ("W_o", "b_o")

    def _run(self, g, inputs, ctx):
        self._check_ctx(ctx)
        state = LstmState.zeros(g, self.config.H)
        W, b = self.p(g, "W_o"), self.p(g, "b_o")
        logits = []
        h = None
        for tok in inputs:
            x = g.concat(self._embed(g, tok), ctx)
            h, state = nn.lstm_step(g, self.layers, self.params, x, state)
            logits.append(g.affine(W, h, b))
        return logits, h


class CODCLM(_VectorContextModel):
    variant = "codclm"
    output_head = ("W_h", "W_c", "b_o")

    @classmethod
    def _head_shapes(cls, c):
        return {"W_h": (c.V, c.H), "W_c": (c.V, c.H), "b_o": (c.V, 1), "c0": (c.H, 1)}

    def hidden_states(self, g: Graph, sentence: Sequence[int]) -> list[Node]:
        """Top hiddens of one sentence; they never depend on the context."""
        self._check_sentence(sentence)
        hiddens, _ = self._plain_steps(g, [START_ID, *sentence], LstmState.zeros(g, self.config.H))
        return hiddens

    def _run(self, g, inputs, ctx):
        self._check_ctx(ctx)
        hiddens, _ = self._plain_steps(g, inputs, LstmState.zeros(g, self.config.H))
        # W_c c + b is shared by every position of the sentence
        shift = g.affine(self.p(g, "W_c"), ctx, self.p(g, "b_o"))
        W_h = self.p(g, "W_h")
        return [g.add(g.matmul(W_h, h), shift) for h in hiddens], hiddens[-1]


class ADCLM(LanguageModel):
    variant = "adclm"
    uses_context_input = True
    output_head = ("W_o",)

    @classmethod
    def _head_shapes(cls, c):
        return {"W_h": (c.H, c.H), "W_c": (c.H, c.H), "b_h": (c.H, 1), "W_o": (c.V, c.H),
                "w_a": (c.A, 1), "W_a1": (c.A, c.H), "W_a2": (c.A, c.H), "c0": (c.H, 1)}

    def initial_context(self, g):
        return [self.p(g, "c0")]

    def attend(self, g: Graph, query: Node, memory: Node, keys: Node) -> tuple[Node, Node]:
        """Attention weights (1 x M) and the mixed context (H x 1).

        ``memory`` is the H x M matrix of previous hiddens and ``keys`` is
        ``W_a2 @ memory``, precomputed once per sentence.
        """
        u = g.matmul(self.p(g, "W_a1"), query)
        scores = g.matmul(g.transpose(self.p(g, "w_a")), g.tanh(g.add_column(keys, u)))
        alpha = g.softmax(scores)
        return alpha, g.matmul(memory, g.transpose(alpha))

    def _memory(self, g: Graph, ctx) -> tuple[Node, Node]:
        if not isinstance(ctx, list) or not ctx:
            raise ValueError("adclm context must be a non-empty list of hidden nodes")
        memory = g.hstack(ctx)
        return memory, g.matmul(self.p(g, "W_a2"), memory)

    def _run(self, g, inputs, ctx):
        memory, keys = self._memory(g, ctx)
        state = LstmState.zeros(g, self.config.H)
        W_h, W_c, b_h, W_o = (self.p(g, n) for n in ("W_h", "W_c", "b_h", "W_o"))
        logits, hiddens = [], []
        for tok in inputs:
            # query is the top hidden before this step
            _, c = self.attend(g, state.top_hidden, memory, keys)
            x = g.concat(c, self._embed(g, tok))
            h, state = nn.lstm_step(g, self.layers, self.params, x, state)
            merged = g.tanh(g.add(g.affine(W_h, h, b_h), g.matmul(W_c, c)))
            logits.append(g.matmul(W_o, merged))
            hiddens.append(h)
        # the hidden after START is not a word position
        return logits, hiddens[1:]


MODEL_CLASSES: dict[str, type[LanguageModel]] = {
    cls.variant: cls for cls in (RNNLM, DRNNLM, CCDCLM, CODCLM, ADCLM)
}


def new_model(cfg: ModelConfig, rng: np.random.Generator | int | None = None) -> LanguageModel:
    return MODEL_CLASSES[cfg.variant](cfg, rng=rng)


def model_from_params(cfg: ModelConfig, params: dict[str, np.ndarray]) -> LanguageModel:
    return MODEL_CLASSES[cfg.variant](cfg, params=params)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    return MODEL_CLASSES[cfg.variant].shapes_for(cfg)


def attention_weights(model: ADCLM, query, prev_hiddens: Sequence) -> np.ndarray:
    """Attention distribution of ``model`` for one query over ``prev_hiddens``."""
    if not isinstance(model, ADCLM):
        raise ValueError("attention weights exist only for adclm")
    if len(prev_hiddens) == 0:
        raise ValueError("attention over an empty context")
    g = Graph()
    q = query if isinstance(query, Node) else g.input(query)
    hs = [h if isinstance(h, Node) else g.input(h) for h in prev_hiddens]
    memory, keys = model._memory(g, hs)
    alpha, _ = model.attend(g, q, memory, keys)
    return alpha.value[0].copy()


def forced_uniform(model: LanguageModel) -> LanguageModel:
    """Copy of ``model`` whose output head is zero, so every logit is equal."""
    out = model.copy()
    for name in out.output_head:
        out.params[name][...] = 0.0
    return out
