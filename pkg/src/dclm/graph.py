"""Dynamic computation graph with reverse-mode differentiation.

Every value is a 2-D float64 numpy array (column vectors are ``n x 1``).
A :class:`Graph` is rebuilt for every example; nodes are appended in
creation order, which is also a valid topological order, so ``backward``
is a single reverse sweep.

    g = Graph()
    x = g.input(np.array([[3.0]]))
    y = g.mul(x, x)
    g.backward(y)
    x.grad  # [[6.]]
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = ["Graph", "Node", "GraphError", "as_tensor"]


class GraphError(ValueError):
    """Raised on shape mismatches and other contract violations."""


def as_tensor(t) -> np.ndarray:
    """Coerce ``t`` to a 2-D float64 array; 1-D input becomes a column."""
    a = np.asarray(t, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise GraphError(f"tensors are 2-D, got shape {a.shape}")
    if a.size == 0:
        raise GraphError("zero-sized tensor")
    return a


class Node:
    __slots__ = ("id", "op", "inputs", "value", "_grad", "_backward")

    def __init__(self, id: int, op: str, inputs: tuple[int, ...], value: np.ndarray,
                 backward: Callable[[np.ndarray], None] | None):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self._grad: np.ndarray | None = None
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def _accumulate(self, delta: np.ndarray, owned: bool = False) -> None:
        # owned=True: delta is a fresh array nobody else references
        if self._grad is None:
            self._grad = delta if owned else delta.copy()
        else:
            self._grad += delta

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


def _check_column(n: Node, what: str) -> None:
    if n.value.shape[1] != 1:
        raise GraphError(f"{what} must be a column vector, got {n.value.shape}")


def _check_same(a: Node, b: Node, what: str) -> None:
    if a.value.shape != b.value.shape:
        raise GraphError(f"{what}: shape mismatch {a.value.shape} vs {b.value.shape}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Graph:
    """Append-only tape of nodes.

    Parameter tensors enter through :meth:`param`, which wraps the caller's
    array without copying and caches the leaf by name, so a parameter used
    at many time steps is a single node whose gradient accumulates.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _add(self, op: str, inputs: Sequence[Node], value: np.ndarray,
             backward: Callable[[np.ndarray], None] | None = None) -> Node:
        node = Node(len(self.nodes), op, tuple(n.id for n in inputs), value, backward)
        self.nodes.append(node)
        return node

    # leaves

    def input(self, t) -> Node:
        a = as_tensor(t)
        if not np.all(np.isfinite(a)):
            raise GraphError("input tensor has non-finite entries")
        return self._add("input", (), a.copy())

    def param(self, name: str, array: np.ndarray) -> Node:
        node = self.params.get(name)
        if node is None:
            node = self._add("param", (), array)
            self.params[name] = node
        return node

    # linear algebra

    def matmul(self, W: Node, x: Node) -> Node:
        if W.value.shape[1] != x.value.shape[0]:
            raise GraphError(f"matmul: {W.value.shape} @ {x.value.shape}")
        Wv, xv = W.value, x.value

        def back(g):
            W._accumulate(g @ xv.T, True)
            x._accumulate(Wv.T @ g, True)

        return self._add("matmul", (W, x), Wv @ xv, back)

    def affine(self, W: Node, x: Node, b: Node) -> Node:
        m, n = W.value.shape
        if x.value.shape != (n, 1) or b.value.shape != (m, 1):
            raise GraphError(
                f"affine: W {W.value.shape}, x {x.value.shape}, b {b.value.shape}")
        Wv, xv = W.value, x.value

        def back(g):
            W._accumulate(g @ xv.T, True)
            x._accumulate(Wv.T @ g, True)
            b._accumulate(g)

        return self._add("affine", (W, x, b), Wv @ xv + b.value, back)

    def transpose(self, a: Node) -> Node:
        def back(g):
            a._accumulate(g.T)

        return self._add("transpose", (a,), a.value.T.copy(), back)

    # structure

    def concat(self, a: Node, b: Node) -> Node:
        _check_column(a, "concat operand")
        _check_column(b, "concat operand")
        m = a.value.shape[0]

        def back(g):
            a._accumulate(g[:m])
            b._accumulate(g[m:])

        return self._add("concat", (a, b), np.vstack((a.value, b.value)), back)

    def rows(self, a: Node, start: int, stop: int) -> Node:
        """Row slice ``a[start:stop]``."""
        if not 0 <= start < stop <= a.value.shape[0]:
            raise GraphError(f"rows: bad slice {start}:{stop} of {a.value.shape}")

        def back(g):
            if a._grad is None:
                a._grad = np.zeros_like(a.value)
            a._grad[start:stop] += g

        return self._add("rows", (a,), a.value[start:stop].copy(), back)

    def lookup(self, table: Node, index: int) -> Node:
        """Row ``index`` of ``table`` as a column vector (embedding lookup)."""
        n_rows = table.value.shape[0]
        if not 0 <= index < n_rows:
            raise GraphError(f"lookup: index {index} out of range [0, {n_rows})")

        def back(g):
            if table._grad is None:
                table._grad = np.zeros_like(table.value)
            table._grad[index] += g[:, 0]

        return self._add("lookup", (table,), table.value[index].reshape(-1, 1).copy(), back)

    def hstack(self, columns: Sequence[Node]) -> Node:
        """Stack column vectors side by side into an ``n x M`` matrix."""
        if not columns:
            raise GraphError("hstack of an empty list")
        for c in columns:
            _check_column(c, "hstack operand")
            _check_same(c, columns[0], "hstack")
        cols = list(columns)

        def back(g):
            for j, c in enumerate(cols):
                c._accumulate(g[:, j:j + 1])

        return self._add("hstack", cols, np.hstack([c.value for c in cols]), back)

    # elementwise

    def pointwise(self, kind: str, *operands: Node) -> Node:
        unary = {"tanh": self.tanh, "logistic": self.logistic}
        binary = {"add": self.add, "mul": self.mul}
        if kind in unary and len(operands) == 1:
            return unary[kind](*operands)
        if kind in binary and len(operands) == 2:
            return binary[kind](*operands)
        raise GraphError(f"pointwise: unknown kind {kind!r} for {len(operands)} operands")

    def tanh(self, a: Node) -> Node:
        y = np.tanh(a.value)

        def back(g):
            a._accumulate(g * (1.0 - y * y), True)

        return self._add("tanh", (a,), y, back)

    def logistic(self, a: Node) -> Node:
        y = _sigmoid(a.value)

        def back(g):
            a._accumulate(g * y * (1.0 - y), True)

        return self._add("logistic", (a,), y, back)

    def add(self, a: Node, b: Node) -> Node:
        _check_same(a, b, "add")

        def back(g):
            a._accumulate(g)
            b._accumulate(g)

        return self._add("add", (a, b), a.value + b.value, back)

    def add_column(self, M: Node, c: Node) -> Node:
        """Add column vector ``c`` to every column of ``M``."""
        _check_column(c, "add_column operand")
        if M.value.shape[0] != c.value.shape[0]:
            raise GraphError(f"add_column: {M.value.shape} vs {c.value.shape}")

        def back(g):
            M._accumulate(g)
            c._accumulate(g.sum(axis=1, keepdims=True))

        return self._add("add_column", (M, c), M.value + c.value, back)

    def mul(self, a: Node, b: Node) -> Node:
        _check_same(a, b, "mul")
        av, bv = a.value, b.value

        def back(g):
            a._accumulate(g * bv, True)
            b._accumulate(g * av, True)

        return self._add("mul", (a, b), av * bv, back)

    def sum(self, terms: Iterable[Node]) -> Node:
        """Sum of equally shaped nodes."""
        terms = list(terms)
        if not terms:
            raise GraphError("sum of an empty list")
        for t in terms:
            _check_same(t, terms[0], "sum")
        total = terms[0].value.copy()
        for t in terms[1:]:
            total += t.value

        def back(g):
            for t in terms:
                t._accumulate(g)

        return self._add("sum", terms, total, back)

    def lstm_cell(self, W_x: Node, W_h: Node, b: Node, x: Node, h: Node, c: Node) -> Node:
        """Fused LSTM cell; the value is ``[h_new; c_new]`` (``2H x 1``).

        Gate pre-activations are ``W_x x + W_h h + b`` with row blocks
        input, forget, output, candidate.
        """
        H = h.value.shape[0]
        if (W_x.value.shape != (4 * H, x.value.shape[0]) or W_h.value.shape != (4 * H, H)
                or b.value.shape != (4 * H, 1) or c.value.shape != (H, 1)
                or x.value.shape[1] != 1 or h.value.shape[1] != 1):
            raise GraphError(
                f"lstm_cell: W_x {W_x.value.shape}, W_h {W_h.value.shape}, b {b.value.shape}, "
                f"x {x.value.shape}, h {h.value.shape}, c {c.value.shape}")
        Wx, Wh, xv, hv, cv = W_x.value, W_h.value, x.value, h.value, c.value
        z = Wx @ xv + Wh @ hv + b.value
        s = _sigmoid(z[:3 * H])
        i, f, o = s[:H], s[H:2 * H], s[2 * H:]
        u = np.tanh(z[3 * H:])
        c_new = f * cv + i * u
        t = np.tanh(c_new)
        h_new = o * t

        def back(g):
            gh, gc = g[:H], g[H:]
            dc = gc + gh * o * (1.0 - t * t)
            dz = np.empty((4 * H, 1))
            dz[:H] = dc * u
            dz[H:2 * H] = dc * cv
            dz[2 * H:3 * H] = gh * t
            dz[:3 * H] *= s * (1.0 - s)
            dz[3 * H:] = dc * i * (1.0 - u * u)
            W_x._accumulate(dz @ xv.T, True)
            W_h._accumulate(dz @ hv.T, True)
            b._accumulate(dz)
            x._accumulate(Wx.T @ dz, True)
            h._accumulate(Wh.T @ dz, True)
            c._accumulate(dc * f, True)

        return self._add("lstm_cell", (W_x, W_h, b, x, h, c), np.vstack((h_new, c_new)), back)

    # normalisation and loss

    def softmax(self, a: Node) -> Node:
        """Softmax over all entries of ``a`` (a row or a column)."""
        if 1 not in a.value.shape:
            raise GraphError(f"softmax expects a vector, got {a.value.shape}")
        z = a.value - a.value.max()
        e = np.exp(z)
        p = e / e.sum()

        def back(g):
            a._accumulate(p * (g - np.sum(g * p)))

        return self._add("softmax", (a,), p, back)

    def neg_log_softmax_pick(self, logits: Node, target: int) -> Node:
        """``-log softmax(logits)[target]`` as a 1x1 node."""
        _check_column(logits, "logits")
        V = logits.value.shape[0]
        if not 0 <= target < V:
            raise GraphError(f"target {target} out of range [0, {V})")
        z = logits.value[:, 0]
        shift = z.max()
        e = np.exp(z - shift)
        total = e.sum()
        loss = np.log(total) + shift - z[target]

        def back(g):
            d = (e / total).reshape(-1, 1)
            d[target, 0] -= 1.0
            logits._accumulate(g[0, 0] * d)

        return self._add("nll", (logits,), np.array([[loss]]), back)

    # differentiation

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Populate ``grad`` of every node reachable from ``root``.

        Returns a map from node id to gradient for those nodes. Gradients
        from earlier calls are discarded first.
        """
        if root.value.shape != (1, 1):
            raise GraphError(f"backward needs a scalar root, got {root.value.shape}")
        if root.id >= len(self.nodes) or self.nodes[root.id] is not root:
            raise GraphError("root does not belong to this graph")
        for n in self.nodes:
            n._grad = None
        root._grad = np.ones((1, 1))
        for n in reversed(self.nodes[:root.id + 1]):
            if n._grad is not None and n._backward is not None:
                n._backward(n._grad)
        return {n.id: n._grad for n in self.nodes if n._grad is not None}
