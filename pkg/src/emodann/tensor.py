"""Reverse-mode automatic differentiation on dense float64 matrices.

Everything is a 2-D array: scalars are 1x1, vectors are explicit rows or
columns. Operations executed while a ``Tape`` is active are recorded together
with a local backward rule; ``backward`` then sweeps the tape once in reverse
and returns gradients for every watched leaf. With no active tape the same
functions are plain numpy forward computations, which is what evaluation and
finite-difference oracles use.

There is deliberately no broadcasting: binary operations demand equal shapes,
and the only shape-mixing primitives are explicit (``add_rowvec``,
``scale_rows``, ``concat``, ...). Keeping the rule set small keeps the
gradient-checking surface small.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "InvalidValueError",
    "TapeError",
    "column",
    "row",
    "scalar",
    "matmul",
    "transpose",
    "concat",
    "add",
    "mul",
    "scale",
    "neg",
    "tanh",
    "sigmoid",
    "log",
    "softmax_rows",
    "sum_all",
    "add_rowvec",
    "scale_rows",
    "take_row",
    "take_col",
    "pick_rows",
    "stack_rows",
    "backward",
    "AdamState",
    "adam_step",
    "l2_penalty",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class InvalidValueError(ValueError):
    """An operand contains values outside the operation's domain (NaN, <=0, ...)."""


class TapeError(RuntimeError):
    """Tape misuse: nested tapes, backward on a spent/empty tape, off-tape loss."""


class Tensor:
    """A dense float64 matrix, optionally tracked for differentiation.

    ``node_id`` is the handle assigned by the currently active tape the last
    time this tensor was registered on one; it is bookkeeping only, the tape
    keeps its own authoritative map.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D; got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def column(values) -> Tensor:
    """Build a d x 1 column vector tensor."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return Tensor(arr)


def row(values) -> Tensor:
    """Build a 1 x d row vector tensor."""
    arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
    return Tensor(arr)


def scalar(value: float) -> Tensor:
    return Tensor(np.array([[value]], dtype=np.float64))


# ---------------------------------------------------------------------------
# Tape


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Recorder for one forward pass.

    Operations are appended in execution order, which is automatically a
    topological order of the graph. ``backward`` may be called once; a second
    call raises, which turns silent gradient-accumulation bugs into errors.
    """

    def __init__(self):
        self._ops: list[tuple[int, tuple[int, ...], Callable]] = []
        self._ids: dict[Tensor, int] = {}
        self._leaves: list[Tensor] = []
        self._next_id = 0
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def watch(self, tensor: Tensor) -> None:
        """Register a leaf so backward reports a gradient for it even when
        it never reaches the loss (it gets zeros)."""
        self._register(tensor)

    def _register(self, tensor: Tensor) -> int:
        nid = self._ids.get(tensor)
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._ids[tensor] = nid
            self._leaves.append(tensor)
            tensor.node_id = nid
        return nid

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward_rule: Callable) -> None:
        in_ids = tuple(self._register(t) for t in inputs)
        out_id = self._next_id
        self._next_id += 1
        self._ids[out] = out_id
        out.node_id = out_id
        self._ops.append((out_id, in_ids, backward_rule))

    @property
    def n_ops(self) -> int:
        return len(self._ops)


def _active() -> Tape | None:
    return _ACTIVE_TAPE


def _finish(out: Tensor, inputs: Sequence[Tensor], backward_rule: Callable) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, inputs, backward_rule)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(node) through the tape, newest op first.

    Returns gradients keyed by leaf tensor for every watched/used leaf with
    ``requires_grad``; leaves with no path to the loss get zeros. Each node is
    visited exactly once. The tape is consumed: a second call raises.
    """
    if tape._consumed:
        raise TapeError("backward was already called on this tape")
    if not tape._ops:
        raise TapeError("tape is empty; nothing was recorded")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    loss_id = tape._ids.get(loss)
    if loss_id is None:
        raise TapeError("loss tensor was not recorded on this tape")
    tape._consumed = True

    grads: list[np.ndarray | None] = [None] * tape._next_id
    grads[loss_id] = np.ones((1, 1))
    for out_id, in_ids, rule in reversed(tape._ops):
        g = grads[out_id]
        if g is None:
            continue
        for nid, contrib in zip(in_ids, rule(g)):
            if contrib is None:
                continue
            if grads[nid] is None:
                grads[nid] = contrib
            else:
                grads[nid] = grads[nid] + contrib

    result: dict[Tensor, np.ndarray] = {}
    for leaf in tape._leaves:
        if not leaf.requires_grad:
            continue
        g = grads[tape._ids[leaf]]
        result[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g)
    return result


# ---------------------------------------------------------------------------
# Operations


def _out(data: np.ndarray, *inputs: Tensor) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    rg = False
    for x in inputs:
        if x.requires_grad:
            rg = True
            break
    t.requires_grad = rg
    t.node_id = None
    return t


def _out1(data: np.ndarray, a: Tensor) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = a.requires_grad
    t.node_id = None
    return t


def _out2(data: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = a.requires_grad or b.requires_grad
    t.node_id = None
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product [m x k] @ [k x n] -> [m x n]."""
    ad, bd = a.data, b.data
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    out = _out2(ad @ bd, a, b)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out
    need_a, need_b = a.requires_grad, b.requires_grad

    def rule(g):
        return (g @ bd.T if need_a else None, ad.T @ g if need_b else None)

    tape._record(out, (a, b), rule)
    return out


def transpose(x: Tensor) -> Tensor:
    out = _out1(np.ascontiguousarray(x.data.T), x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x,), lambda g: (g.T,))
    return out


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (0 rows, 1 columns); other dims must match."""
    if axis not in (0, 1):
        raise ShapeError(f"concat axis must be 0 or 1, got {axis}")
    other = 1 - axis
    if a.data.shape[other] != b.data.shape[other]:
        raise ShapeError(
            f"concat along axis {axis} needs matching size on axis {other}: "
            f"{a.shape} vs {b.shape}"
        )
    out = _out2(np.concatenate([a.data, b.data], axis=axis), a, b)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out
    na = a.data.shape[axis]

    def rule(g):
        if axis == 0:
            return (g[:na, :], g[na:, :])
        return (g[:, :na], g[:, na:])

    tape._record(out, (a, b), rule)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add needs equal shapes: {a.shape} vs {b.shape}")
    out = _out2(a.data + b.data, a, b)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (a, b), lambda g: (g, g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"mul needs equal shapes: {ad.shape} vs {bd.shape}")
    out = _out2(ad * bd, a, b)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = _out1(x.data * c, x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x,), lambda g: (g * c,))
    return out


def neg(x: Tensor) -> Tensor:
    out = _out1(-x.data, x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x,), lambda g: (-g,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _out1(y, x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    # exp(-log(1 + exp(-x))) = 1/(1 + exp(-x)), stable across the whole line
    y = np.exp(-np.logaddexp(0.0, -x.data))
    out = _out1(y, x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def log(x: Tensor) -> Tensor:
    """Natural log; defined for strictly positive entries only."""
    xd = x.data
    if np.any(xd <= 0.0) or not np.all(np.isfinite(xd)):
        raise InvalidValueError("log needs strictly positive finite entries")
    out = _out1(np.log(xd), x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x,), lambda g: (g / xd,))
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    xd = x.data
    if xd.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs at least one column, got {xd.shape}")
    if not np.all(np.isfinite(xd)):
        raise InvalidValueError("softmax_rows input must be finite")
    e = np.exp(xd - xd.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)
    out = _out1(y, x)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out

    def rule(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    tape._record(out, (x,), rule)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    out = _out1(np.array([[x.data.sum()]]), x)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        shp = x.data.shape
        tape._record(out, (x,), lambda g: (np.full(shp, g[0, 0]),))
    return out


def add_rowvec(x: Tensor, r: Tensor) -> Tensor:
    """Add a 1 x n row vector to every row of an m x n matrix."""
    if r.data.shape[0] != 1 or r.data.shape[1] != x.data.shape[1]:
        raise ShapeError(f"add_rowvec needs shapes [m x n] + [1 x n]: {x.shape} + {r.shape}")
    out = _out2(x.data + r.data, x, r)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x, r), lambda g: (g, g.sum(axis=0, keepdims=True)))
    return out


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of an m x n matrix by entry i of an m x 1 column."""
    xd, sd = x.data, s.data
    if sd.shape[1] != 1 or sd.shape[0] != xd.shape[0]:
        raise ShapeError(f"scale_rows needs shapes [m x n] * [m x 1]: {xd.shape} * {sd.shape}")
    out = _out2(xd * sd, x, s)
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(out, (x, s),
                     lambda g: (g * sd, (g * xd).sum(axis=1, keepdims=True)))
    return out


def take_row(x: Tensor, i: int) -> Tensor:
    """Slice row i as a 1 x n tensor."""
    shp = x.data.shape
    if not 0 <= i < shp[0]:
        raise ShapeError(f"row index {i} out of range for shape {shp}")
    out = _out1(x.data[i : i + 1, :].copy(), x)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out

    def rule(g):
        full = np.zeros(shp)
        full[i, :] = g[0, :]
        return (full,)

    tape._record(out, (x,), rule)
    return out


def take_col(x: Tensor, j: int) -> Tensor:
    """Slice column j as an m x 1 tensor."""
    shp = x.data.shape
    if not 0 <= j < shp[1]:
        raise ShapeError(f"column index {j} out of range for shape {shp}")
    out = _out1(x.data[:, j : j + 1].copy(), x)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out

    def rule(g):
        full = np.zeros(shp)
        full[:, j] = g[:, 0]
        return (full,)

    tape._record(out, (x,), rule)
    return out


def pick_rows(x: Tensor, cols: Sequence[int]) -> Tensor:
    """Gather x[i, cols[i]] for every row i, as an m x 1 tensor."""
    idx = np.asarray(cols, dtype=np.intp)
    m, n = x.data.shape
    if idx.shape != (m,):
        raise ShapeError(f"pick_rows needs one index per row: {idx.shape} vs {m} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"pick_rows index out of range for {n} columns")
    rows_idx = np.arange(m)
    out = _out1(x.data[rows_idx, idx].reshape(-1, 1), x)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out
    shp = x.data.shape

    def rule(g):
        full = np.zeros(shp)
        full[rows_idx, idx] = g[:, 0]
        return (full,)

    tape._record(out, (x,), rule)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1 x n tensors into an m x n tensor."""
    if not rows:
        raise ShapeError("stack_rows needs at least one row")
    n = rows[0].data.shape[1]
    for t in rows:
        if t.data.shape != (1, n):
            raise ShapeError(f"stack_rows needs uniform 1 x {n} rows, got {t.shape}")
    out = _out(np.concatenate([t.data for t in rows], axis=0), *rows)
    tape = _ACTIVE_TAPE
    if tape is None or not out.requires_grad:
        return out
    needs = [t.requires_grad for t in rows]

    def rule(g):
        return tuple(g[i : i + 1, :] if needs[i] else None for i in range(len(needs)))

    tape._record(out, tuple(rows), rule)
    return out


# ---------------------------------------------------------------------------
# Optimizer and regularization


@dataclass
class AdamState:
    """Adam accumulators for a named parameter set.

    Moments start at zero and ``step`` increases by exactly one per update.
    """

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, Tensor], learning_rate: float = 1e-4,
             beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        state.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        state.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    if set(params) != set(grads):
        missing = set(params) ^ set(grads)
        raise KeyError("params and grads must share keys; mismatched: "
                       f"{sorted(missing, key=repr)}")
    if set(params) != set(state.m):
        raise KeyError("Adam state was initialized for a different parameter set")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape} for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def l2_penalty(weights: Iterable[Tensor] | dict[str, Tensor], weight: float) -> Tensor:
    """``weight * sum of squared entries`` over the given weight matrices.

    The caller decides what counts as a weight matrix; bias vectors are
    conventionally excluded. Participates in differentiation.
    """
    if weight < 0:
        raise InvalidValueError(f"l2 weight must be non-negative, got {weight}")
    if isinstance(weights, dict):
        weights = list(weights.values())
    else:
        weights = list(weights)
    total: Tensor | None = None
    for w in weights:
        sq = sum_all(mul(w, w))
        total = sq if total is None else add(total, sq)
    if total is None:
        return scalar(0.0)
    return scale(total, weight)
