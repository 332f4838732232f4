"""Dense float64 tensors with a reverse-mode differentiation tape.

Values are numpy float64 arrays (row-major).  A :class:`Tape` records every
operation as a node; node ids are indices into the construction-ordered node
list, so parents always precede children and the backward pass is a single
reverse sweep.  Tapes are rebuilt per forward pass; nothing is cached.

Arrays handed to the tape are copied, and recorded values are treated as
immutable afterwards.  Every operation checks its result for non-finite
entries and fails loudly instead of propagating inf/nan.
"""

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's shape rules."""


class NonFiniteError(FloatingPointError):
    """An operation produced inf or nan."""


def as_tensor(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, order="C")
    return arr


def _require_2d(kind: str, name: str, x: np.ndarray) -> None:
    if x.ndim != 2:
        raise ShapeError(f"{kind}: {name} must be 2-D, got shape {x.shape}")


@dataclass
class Node:
    kind: str
    parents: tuple[int, ...]
    value: np.ndarray
    ctx: Any = None


class Tape:
    """Construction-ordered list of operation nodes."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def leaf(self, value) -> int:
        """Record an input tensor; leaves are the gradient targets."""
        arr = as_tensor(value)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("leaf: input contains non-finite values")
        self.nodes.append(Node("leaf", (), arr))
        return len(self.nodes) - 1

    def apply(self, kind: str, *parents: int, **ctx) -> int:
        """Record one operation and compute its forward value.

        Supported kinds: matmul, add, scale (by the constant ``const``),
        elementwise mul, transpose, tanh, sum, mse, select (index ``index``
        along axis 0), cross_entropy (integer ``labels``).
        """
        forward = _FORWARD.get(kind)
        if forward is None:
            raise ValueError(f"unknown op kind {kind!r}")
        values = [self.nodes[p].value for p in parents]
        value, saved = forward(values, ctx)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{kind}: result contains non-finite values")
        self.nodes.append(Node(kind, tuple(parents), value, saved))
        return len(self.nodes) - 1

    def var(self, value) -> "Var":
        return Var(self, self.leaf(value))

    def wrap(self, nid: int) -> "Var":
        return Var(self, nid)


# ---------------------------------------------------------------------------
# forward rules: (values, ctx) -> (result, saved-context)
# ---------------------------------------------------------------------------

def _fw_matmul(values, ctx):
    a, b = values
    _require_2d("matmul", "left operand", a)
    _require_2d("matmul", "right operand", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, None


def _fw_add(values, ctx):
    a, b = values
    if a.shape == b.shape:
        return a + b, None
    # row-broadcast bias: (n, d) + (d,)
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b, "bias"
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def _fw_scale(values, ctx):
    (a,) = values
    c = float(ctx["const"])
    if not math.isfinite(c):
        raise NonFiniteError("scale: constant is non-finite")
    return c * a, c


def _fw_mul(values, ctx):
    a, b = values
    if a.shape == b.shape:
        return a * b, None
    if a.size == 1 or b.size == 1:
        return a * b, None
    raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")


def _fw_transpose(values, ctx):
    (a,) = values
    _require_2d("transpose", "operand", a)
    return a.T.copy(), None


def _fw_tanh(values, ctx):
    (a,) = values
    return np.tanh(a), None


def _fw_sum(values, ctx):
    (a,) = values
    return np.asarray(np.sum(a)), None


def _fw_mse(values, ctx):
    a, b = values
    if a.shape != b.shape:
        raise ShapeError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    d = a - b
    return np.asarray(np.mean(d * d)), None


def _fw_select(values, ctx):
    (a,) = values
    i = int(ctx["index"])
    if a.ndim < 1 or not 0 <= i < a.shape[0]:
        raise ShapeError(f"select: index {i} out of range for shape {a.shape}")
    return a[i].copy(), i


def _fw_cross_entropy(values, ctx):
    (logits,) = values
    labels = np.asarray(ctx["labels"], dtype=np.int64)
    _require_2d("cross_entropy", "logits", logits)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy: labels shape {labels.shape} does not match logits {logits.shape}"
        )
    n, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    return np.asarray(loss), (labels, np.exp(logp))


_FORWARD: dict[str, Callable] = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "scale": _fw_scale,
    "mul": _fw_mul,
    "transpose": _fw_transpose,
    "tanh": _fw_tanh,
    "sum": _fw_sum,
    "mse": _fw_mse,
    "select": _fw_select,
    "cross_entropy": _fw_cross_entropy,
}

OP_KINDS = tuple(_FORWARD)


# ---------------------------------------------------------------------------
# backward rules: (grad, node, parent-values) -> per-parent gradients
# ---------------------------------------------------------------------------

def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape) if shape else np.asarray(np.sum(grad))


def _bw_matmul(g, node, vals):
    a, b = vals
    return [g @ b.T, a.T @ g]


def _bw_add(g, node, vals):
    a, b = vals
    gb = g.sum(axis=0) if node.ctx == "bias" else g
    return [g, gb]


def _bw_scale(g, node, vals):
    return [node.ctx * g]


def _bw_mul(g, node, vals):
    a, b = vals
    return [_reduce_to(g * b, a.shape), _reduce_to(g * a, b.shape)]


def _bw_transpose(g, node, vals):
    return [g.T.copy()]


def _bw_tanh(g, node, vals):
    y = node.value
    return [g * (1.0 - y * y)]


def _bw_sum(g, node, vals):
    (a,) = vals
    return [np.full(a.shape, float(g))]


def _bw_mse(g, node, vals):
    a, b = vals
    d = (2.0 * float(g) / a.size) * (a - b)
    return [d, -d]


def _bw_select(g, node, vals):
    (a,) = vals
    out = np.zeros_like(a)
    out[node.ctx] = g
    return [out]


def _bw_cross_entropy(g, node, vals):
    (logits,) = vals
    labels, p = node.ctx
    n = logits.shape[0]
    gl = p.copy()
    gl[np.arange(n), labels] -= 1.0
    return [(float(g) / n) * gl]


_BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "scale": _bw_scale,
    "mul": _bw_mul,
    "transpose": _bw_transpose,
    "tanh": _bw_tanh,
    "sum": _bw_sum,
    "mse": _bw_mse,
    "select": _bw_select,
    "cross_entropy": _bw_cross_entropy,
}


def backward(tape: Tape, output: int, seed: float = 1.0) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar output node.

    Returns a gradient for every leaf on the tape; leaves the output does not
    depend on get zeros.
    """
    out_node = tape.nodes[output]
    if out_node.value.size != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {out_node.value.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[output] = np.full(out_node.value.shape, float(seed))
    for nid in range(output, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.kind == "leaf":
            continue
        vals = [tape.nodes[p].value for p in node.parents]
        for pid, pg in zip(node.parents, _BACKWARD[node.kind](g, node, vals)):
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    return {
        nid: (grads[nid] if grads[nid] is not None else np.zeros_like(n.value))
        for nid, n in enumerate(tape.nodes)
        if n.kind == "leaf"
    }


# ---------------------------------------------------------------------------
# Var: a thin operator-friendly handle on a tape node
# ---------------------------------------------------------------------------

class Var:
    """Handle (tape, node id) supporting arithmetic that records ops.

    Lets numerical code (RK steppers, residual modules) run unchanged on
    plain arrays or on tape nodes.
    """

    __slots__ = ("tape", "nid")

    def __init__(self, tape: Tape, nid: int):
        self.tape = tape
        self.nid = nid

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.nid].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def T(self) -> "Var":
        return Var(self.tape, self.tape.apply("transpose", self.nid))

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("cannot combine nodes from different tapes")
            return other
        return Var(self.tape, self.tape.leaf(other))

    def __add__(self, other) -> "Var":
        o = self._lift(other)
        return Var(self.tape, self.tape.apply("add", self.nid, o.nid))

    def __radd__(self, other) -> "Var":
        return self._lift(other).__add__(self)

    def __sub__(self, other) -> "Var":
        return self.__add__(self._lift(other) * -1.0)

    def __mul__(self, other) -> "Var":
        if isinstance(other, (int, float)):
            return Var(self.tape, self.tape.apply("scale", self.nid, const=float(other)))
        o = self._lift(other)
        return Var(self.tape, self.tape.apply("mul", self.nid, o.nid))

    __rmul__ = __mul__

    def __neg__(self) -> "Var":
        return self * -1.0

    def __matmul__(self, other) -> "Var":
        o = self._lift(other)
        return Var(self.tape, self.tape.apply("matmul", self.nid, o.nid))

    def __repr__(self) -> str:
        return f"Var(nid={self.nid}, shape={self.shape})"


# ---------------------------------------------------------------------------
# dispatchers: same spelling for taped and plain-numpy execution
# ---------------------------------------------------------------------------

def tanh(x):
    if isinstance(x, Var):
        return Var(x.tape, x.tape.apply("tanh", x.nid))
    return np.tanh(x)


def vsum(x):
    if isinstance(x, Var):
        return Var(x.tape, x.tape.apply("sum", x.nid))
    return np.asarray(np.sum(x))


def mse(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        v = a if isinstance(a, Var) else b
        a = v._lift(a)
        b = v._lift(b)
        return Var(v.tape, v.tape.apply("mse", a.nid, b.nid))
    d = np.asarray(a) - np.asarray(b)
    return float(np.mean(d * d))


def select(x, index: int):
    """Slice along axis 0; the taped form routes gradient to that slice only."""
    if isinstance(x, Var):
        return Var(x.tape, x.tape.apply("select", x.nid, index=index))
    return x[index]


def cross_entropy(logits, labels):
    if isinstance(logits, Var):
        return Var(logits.tape, logits.tape.apply("cross_entropy", logits.nid, labels=labels))
    t = Tape()
    return float(t.value(t.apply("cross_entropy", t.leaf(logits), labels=labels)))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteDiffReport:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray


def finite_diff_check(f, point, step: float = 1e-6) -> FiniteDiffReport:
    """Compare tape gradients of ``f`` against central finite differences.

    ``f(tape, x_var)`` must build and return a scalar Var.  The relative
    discrepancy is ``max|analytic - numeric|`` scaled by the larger of the
    two gradient magnitudes (floored at 1e-12, so a correct zero gradient
    reports zero).
    """
    if step <= 0:
        raise ValueError("finite_diff_check: step must be positive")
    point = as_tensor(point)

    tape = Tape()
    x = tape.var(point)
    out = f(tape, x)
    if not isinstance(out, Var) or out.value.size != 1:
        raise ShapeError("finite_diff_check: function must return a scalar Var")
    analytic = backward(tape, out.nid)[x.nid]

    def value_at(p: np.ndarray) -> float:
        t = Tape()
        v = f(t, t.var(p))
        val = float(v.value)
        if not math.isfinite(val):
            raise NonFiniteError("finite_diff_check: non-finite function value")
        return val

    numeric = np.zeros_like(point)
    flat = numeric.reshape(-1)
    for i in range(point.size):
        dp = np.zeros_like(point).reshape(-1)
        dp[i] = step
        dp = dp.reshape(point.shape)
        flat[i] = (value_at(point + dp) - value_at(point - dp)) / (2.0 * step)

    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
    max_rel = float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale
    return FiniteDiffReport(max_rel, analytic, numeric)
