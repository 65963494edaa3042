"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`GradTape` records every primitive operation as it happens; calling
:meth:`GradTape.backward` on a scalar loss sweeps the record once in reverse,
accumulating adjoints into the leaves.  The op set is just what dense policy
and value networks need: affine maps, tanh/relu, exp/log, reductions,
elementwise min, clipping, column concat/slice.

Everything is float64.  At the scale this package targets that costs little
and keeps finite-difference gradient checks tight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an upstream gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One recorded value.  Only tracked nodes accumulate gradients."""

    __slots__ = ("value", "grad", "track", "pullbacks", "tape")

    def __init__(self, tape: "GradTape", value: np.ndarray, track: bool, pullbacks):
        self.tape = tape
        self.value = value
        self.grad: np.ndarray | None = None
        self.track = track
        self.pullbacks = pullbacks  # tuple of (parent Node, fn grad -> parent grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, self.tape.lift(other))

    def __radd__(self, other):
        return add(self.tape.lift(other), self)

    def __sub__(self, other):
        return sub(self, self.tape.lift(other))

    def __rsub__(self, other):
        return sub(self.tape.lift(other), self)

    def __mul__(self, other):
        return mul(self, self.tape.lift(other))

    def __rmul__(self, other):
        return mul(self.tape.lift(other), self)

    def __truediv__(self, other):
        return div(self, self.tape.lift(other))

    def __rtruediv__(self, other):
        return div(self.tape.lift(other), self)

    def __neg__(self):
        return mul(self, self.tape.const(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Record of primitive operations and their adjoint rules."""

    def __init__(self):
        self._nodes: list[Node] = []

    def _record(self, value: np.ndarray, track: bool, pullbacks=()) -> Node:
        node = Node(self, value, track, pullbacks)
        self._nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        """A differentiable input (parameter); grads accumulate here."""
        return self._record(_as_array(value), track=True)

    def const(self, value) -> Node:
        """A non-differentiable input (data, targets, samples)."""
        return self._record(_as_array(value), track=False)

    def lift(self, value) -> Node:
        return value if isinstance(value, Node) else self.const(value)

    def backward(self, loss: Node) -> None:
        """Push d(loss)/d(node) through the record, newest to oldest.

        The loss must be a scalar (size 1) produced through this tape.  Each
        recorded node is visited exactly once.
        """
        if loss.tape is not self:
            raise ValueError("loss was not produced through this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            g = node.grad
            if g is None:
                continue
            for parent, pull in node.pullbacks:
                if not parent.track:
                    continue  # no tracked ancestor below: nothing needs this adjoint
                contribution = pull(g)
                if parent.grad is None:
                    parent.grad = contribution
                else:
                    parent.grad = parent.grad + contribution


# -- primitive operations ---------------------------------------------------

def _binary(a: Node, b: Node, value, da, db) -> Node:
    if a.tape is not b.tape:
        raise ValueError("operands were recorded on different tapes")
    return a.tape._record(value, a.track or b.track, ((a, da), (b, db)))


def add(a: Node, b: Node) -> Node:
    return _binary(
        a, b, a.value + b.value,
        lambda g: _unbroadcast(g, a.value.shape),
        lambda g: _unbroadcast(g, b.value.shape),
    )


def sub(a: Node, b: Node) -> Node:
    return _binary(
        a, b, a.value - b.value,
        lambda g: _unbroadcast(g, a.value.shape),
        lambda g: _unbroadcast(-g, b.value.shape),
    )


def mul(a: Node, b: Node) -> Node:
    return _binary(
        a, b, a.value * b.value,
        lambda g: _unbroadcast(g * b.value, a.value.shape),
        lambda g: _unbroadcast(g * a.value, b.value.shape),
    )


def div(a: Node, b: Node) -> Node:
    return _binary(
        a, b, a.value / b.value,
        lambda g: _unbroadcast(g / b.value, a.value.shape),
        lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
    )


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.value.shape} @ {b.value.shape}")
    return _binary(
        a, b, a.value @ b.value,
        lambda g: g @ b.value.T,
        lambda g: a.value.T @ g,
    )


def _unary(a: Node, value, da) -> Node:
    return a.tape._record(value, a.track, ((a, da),))


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return _unary(a, t, lambda g: g * (1.0 - t * t))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return _unary(a, a.value * mask, lambda g: g * mask)


def exp(a: Node) -> Node:
    e = np.exp(a.value)
    return _unary(a, e, lambda g: g * e)


def log(a: Node) -> Node:
    return _unary(a, np.log(a.value), lambda g: g / a.value)


def square(a: Node) -> Node:
    return _unary(a, a.value * a.value, lambda g: g * 2.0 * a.value)


def minimum(a: Node, b: Node) -> Node:
    mask = a.value <= b.value  # ties route the gradient to the first operand
    return _binary(
        a, b, np.minimum(a.value, b.value),
        lambda g: _unbroadcast(g * mask, a.value.shape),
        lambda g: _unbroadcast(g * ~mask, b.value.shape),
    )


def clip(a: Node, lo: float, hi: float) -> Node:
    mask = (a.value >= lo) & (a.value <= hi)
    return _unary(a, np.clip(a.value, lo, hi), lambda g: g * mask)


def sum_cols(a: Node) -> Node:
    """Row-wise sum of a 2-D node, kept as a (n, 1) column."""
    if a.value.ndim != 2:
        raise ValueError("sum_cols expects a 2-D node")
    cols = a.value.shape[1]
    return _unary(a, a.value.sum(axis=1, keepdims=True), lambda g: np.repeat(g, cols, axis=1))


def mean_all(a: Node) -> Node:
    size = a.value.size
    return _unary(a, _as_array(a.value.mean()), lambda g: np.full_like(a.value, float(g) / size))


def sum_all(a: Node) -> Node:
    return _unary(a, _as_array(a.value.sum()), lambda g: np.full_like(a.value, float(g)))


def concat_cols(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("concat_cols expects 2-D nodes")
    na = a.value.shape[1]
    return _binary(
        a, b, np.concatenate([a.value, b.value], axis=1),
        lambda g: g[:, :na],
        lambda g: g[:, na:],
    )


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if a.value.ndim != 2:
        raise ValueError("slice_cols expects a 2-D node")

    def pull(g):
        out = np.zeros_like(a.value)
        out[:, start:stop] = g
        return out

    return _unary(a, a.value[:, start:stop], pull)


# -- dense network ------------------------------------------------------------

_ACTIVATIONS = {"tanh": tanh, "relu": relu}
_ACTIVATIONS_NP = {"tanh": np.tanh, "relu": lambda x: np.maximum(x, 0.0)}


class Mlp:
    """Fully-connected net with a linear output layer.

    Weights and biases are initialized uniformly in +-1/sqrt(fan_in), which
    keeps activations on a sane scale for both tanh and relu hidden layers.
    """

    def __init__(self, widths: list[int], activation: str = "tanh", rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.widths = list(int(w) for w in widths)
        self.activation = activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=(fan_out,)))

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameters(self, params: list[np.ndarray]) -> None:
        current = self.parameters()
        if len(params) != len(current):
            raise ValueError("parameter count mismatch")
        for mine, new in zip(current, params):
            if mine.shape != new.shape:
                raise ValueError(f"parameter shape mismatch {mine.shape} vs {new.shape}")
            mine[...] = new

    def copy_from(self, other: "Mlp") -> None:
        self.set_parameters(other.parameters())

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Plain inference; accepts (d,) or (n, d), returns matching shape."""
        arr = _as_array(x)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.shape[1] != self.widths[0]:
            raise ValueError(f"input width {arr.shape[1]} != {self.widths[0]}")
        act = _ACTIVATIONS_NP[self.activation]
        h = arr
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = act(h)
        return h[0] if squeeze else h

    def bind(self, tape: GradTape) -> "BoundMlp":
        """Wrap the parameters as tape leaves for a differentiable pass."""
        return BoundMlp(self, tape)


class BoundMlp:
    """One network's parameters lifted onto a tape; call it on node inputs."""

    def __init__(self, mlp: Mlp, tape: GradTape):
        self.mlp = mlp
        self.tape = tape
        self.weight_nodes = [tape.leaf(w) for w in mlp.weights]
        self.bias_nodes = [tape.leaf(b) for b in mlp.biases]

    def __call__(self, x) -> Node:
        h = self.tape.lift(x)
        if h.value.ndim != 2:
            raise ValueError("bound networks expect 2-D (batch, features) input")
        if h.value.shape[1] != self.mlp.widths[0]:
            raise ValueError(f"input width {h.value.shape[1]} != {self.mlp.widths[0]}")
        act = _ACTIVATIONS[self.mlp.activation]
        last = len(self.weight_nodes) - 1
        for i, (w, b) in enumerate(zip(self.weight_nodes, self.bias_nodes)):
            h = add(matmul(h, w), b)
            if i < last:
                h = act(h)
        return h

    def grads(self) -> list[np.ndarray]:
        """Gradients in parameters() order; zeros where a tensor was unused."""
        out: list[np.ndarray] = []
        for w_node, b_node in zip(self.weight_nodes, self.bias_nodes):
            out.append(w_node.grad if w_node.grad is not None else np.zeros_like(w_node.value))
            out.append(b_node.grad if b_node.grad is not None else np.zeros_like(b_node.value))
        return out


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moment accumulators for one parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    check_finite: bool = False,
) -> list[np.ndarray]:
    """One Adam update, applied to the parameter arrays in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if check_finite and not np.all(np.isfinite(p)):
            raise FloatingPointError("non-finite parameter after Adam update")
    return params


# -- checkpoint serialization --------------------------------------------------

CHECKPOINT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays as versioned JSON: shapes plus row-major flat values."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    tensors = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["tensors"].items()
    }
    return tensors, payload.get("meta", {})
