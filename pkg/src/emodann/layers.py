"""Architectural blocks: dense layers, GRU cells, bidirectional GRU,
multi-head self-attention, attention-weighted modality fusion, and the
gradient reversal layer.

All functions consume and produce :class:`~emodann.tensor.Tensor` values and
record onto whatever tape is active. Vector arguments are columns (d x 1);
sequence arguments are matrices with one row per position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_rowvec,
    concat,
    matmul,
    mul,
    neg,
    scale,
    scale_rows,
    sigmoid,
    softmax_rows,
    stack_rows,
    take_col,
    take_row,
    tanh,
    transpose,
    _finish,
    _out,
)

__all__ = [
    "DenseParams",
    "AtFusionParams",
    "GruCellParams",
    "AttentionParams",
    "GrlConfig",
    "glorot_uniform",
    "dense_forward",
    "dense_rows",
    "at_fusion_forward",
    "fuse_sequence",
    "gru_cell_step",
    "bigru_forward",
    "self_attention_forward",
    "grl",
]

_ACTIVATIONS = {"none", "tanh", "sigmoid"}

_ONES: dict[int, Tensor] = {}


def _ones_column(n: int) -> Tensor:
    # shared constant; no op ever mutates its inputs, so reuse is safe
    t = _ONES.get(n)
    if t is None:
        t = Tensor(np.ones((n, 1)))
        _ONES[n] = t
    return t


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class DenseParams:
    """Fully-connected layer: W is out x in, b is out x 1."""

    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, out_dim: int, in_dim: int) -> "DenseParams":
        return cls(
            W=Tensor(glorot_uniform(rng, out_dim, in_dim), requires_grad=True),
            b=Tensor(np.zeros((out_dim, 1)), requires_grad=True),
        )

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class AtFusionParams:
    """Attention-based two-modality fusion.

    Both modalities are first projected to a shared size d; ``W_F`` (d x d)
    and ``w_F`` (d x 1) parameterize the attention scores over the two
    projected columns.
    """

    acoustic: DenseParams
    lexical: DenseParams
    W_F: Tensor
    w_F: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, d_a: int, d_t: int) -> "AtFusionParams":
        return cls(
            acoustic=DenseParams.init(rng, d, d_a),
            lexical=DenseParams.init(rng, d, d_t),
            W_F=Tensor(glorot_uniform(rng, d, d), requires_grad=True),
            w_F=Tensor(glorot_uniform(rng, d, 1), requires_grad=True),
        )

    @property
    def d(self) -> int:
        return self.W_F.shape[0]


@dataclass
class GruCellParams:
    """Standard GRU gates: update z, reset r, candidate h~ with the reset
    applied on the hidden-to-candidate path."""

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor
    hidden_size: int

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, in_dim: int) -> "GruCellParams":
        def w():
            return Tensor(glorot_uniform(rng, hidden, in_dim), requires_grad=True)

        def u():
            return Tensor(glorot_uniform(rng, hidden, hidden), requires_grad=True)

        def b():
            return Tensor(np.zeros((hidden, 1)), requires_grad=True)

        return cls(W_z=w(), U_z=u(), b_z=b(), W_r=w(), U_r=u(), b_r=b(),
                   W_h=w(), U_h=u(), b_h=b(), hidden_size=hidden)


@dataclass
class AttentionParams:
    """Per-head projection triples (W_Q, W_K, W_V), each d x (d/h)."""

    heads: list[tuple[Tensor, Tensor, Tensor]]
    model_dim: int
    scaled: bool = False

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, n_heads: int,
             scaled: bool = False) -> "AttentionParams":
        if d % n_heads != 0:
            raise ShapeError(f"model dim {d} is not divisible by {n_heads} heads")
        dh = d // n_heads
        heads = []
        for _ in range(n_heads):
            heads.append(tuple(
                Tensor(glorot_uniform(rng, d, dh), requires_grad=True)
                for _ in range(3)
            ))
        return cls(heads=heads, model_dim=d, scaled=scaled)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def head_dim(self) -> int:
        return self.model_dim // len(self.heads)


@dataclass
class GrlConfig:
    """Gradient reversal: identity forward, gradients multiplied by -lam."""

    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"gradient reversal lambda must be >= 0, got {self.lam}")


# ---------------------------------------------------------------------------
# Forward functions


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "none":
        return x
    if activation == "tanh":
        return tanh(x)
    if activation == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {activation!r}; expected one of {sorted(_ACTIVATIONS)}")


def dense_forward(x: Tensor, params: DenseParams, activation: str = "none") -> Tensor:
    """activation(W @ x + b) for a column vector x."""
    if x.shape[0] != params.in_dim or x.shape[1] != 1:
        raise ShapeError(
            f"dense_forward expects a {params.in_dim} x 1 column, got {x.shape}"
        )
    return _activate(add(matmul(params.W, x), params.b), activation)


def dense_rows(X: Tensor, params: DenseParams, activation: str = "none") -> Tensor:
    """The same dense layer applied to every row of an L x in matrix."""
    if X.shape[1] != params.in_dim:
        raise ShapeError(
            f"dense_rows expects L x {params.in_dim} input, got {X.shape}"
        )
    return _activate(add_rowvec(matmul(X, transpose(params.W)), transpose(params.b)), activation)


def at_fusion_forward(a_vec: Tensor, t_vec: Tensor,
                      params: AtFusionParams) -> tuple[Tensor, Tensor]:
    """Fuse one utterance's modality columns into a d x 1 representation.

    Both inputs are projected to size d, concatenated into a d x 2 block, and
    combined by attention weights ``alpha = softmax(w_F^T tanh(W_F u_cat))``;
    the result is ``u_cat @ alpha^T``, a convex combination of the two
    projected columns. Returns ``(fused, alpha)`` with alpha of shape 1 x 2.

    The score projection inside the tanh is bias-free.
    """
    a_p = dense_forward(a_vec, params.acoustic, "none")
    t_p = dense_forward(t_vec, params.lexical, "none")
    u_cat = concat(a_p, t_p, axis=1)
    scores = matmul(transpose(params.w_F), tanh(matmul(params.W_F, u_cat)))
    alpha = softmax_rows(scores)
    fused = matmul(u_cat, transpose(alpha))
    return fused, alpha


def fuse_sequence(A: Tensor, T: Tensor, params: AtFusionParams) -> tuple[Tensor, Tensor]:
    """Apply the fusion block to every row of L x d_a / L x d_t matrices.

    Row-oriented restatement of :func:`at_fusion_forward`; returns
    ``(F, alphas)`` of shapes L x d and L x 2.
    """
    if A.shape[0] != T.shape[0]:
        raise ShapeError(f"modalities disagree on sequence length: {A.shape} vs {T.shape}")
    A_p = dense_rows(A, params.acoustic, "none")
    T_p = dense_rows(T, params.lexical, "none")
    W_F_t = transpose(params.W_F)
    s_a = matmul(tanh(matmul(A_p, W_F_t)), params.w_F)
    s_t = matmul(tanh(matmul(T_p, W_F_t)), params.w_F)
    alphas = softmax_rows(concat(s_a, s_t, axis=1))
    F = add(scale_rows(A_p, take_col(alphas, 0)), scale_rows(T_p, take_col(alphas, 1)))
    return F, alphas


def gru_cell_step(x_t: Tensor, h_prev: Tensor, params: GruCellParams) -> Tensor:
    """One GRU step on column vectors:

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h_t = z * h_prev + (1 - z) * h~
    """
    h = params.hidden_size
    if h_prev.shape != (h, 1):
        raise ShapeError(f"hidden state must be {h} x 1, got {h_prev.shape}")
    if x_t.shape[0] != params.W_z.shape[1] or x_t.shape[1] != 1:
        raise ShapeError(f"input must be {params.W_z.shape[1]} x 1, got {x_t.shape}")
    z = sigmoid(add(add(matmul(params.W_z, x_t), matmul(params.U_z, h_prev)), params.b_z))
    r = sigmoid(add(add(matmul(params.W_r, x_t), matmul(params.U_r, h_prev)), params.b_r))
    cand = tanh(add(add(matmul(params.W_h, x_t), matmul(params.U_h, mul(r, h_prev))), params.b_h))
    one_minus_z = add(_ones_column(h), neg(z))
    return add(mul(z, h_prev), mul(one_minus_z, cand))


def bigru_forward(F: Tensor, fwd: GruCellParams, bwd: GruCellParams) -> Tensor:
    """Run both GRU directions over an L x d sequence, zero initial states.

    Row t of the output is the concatenation of the forward hidden state at t
    and the backward hidden state at t (the backward cell reads the sequence
    reversed), so both cells must have hidden size d/2.
    """
    L, d = F.shape
    if L < 1:
        raise ShapeError("bigru_forward needs a non-empty sequence")
    if d % 2 != 0:
        raise ShapeError(f"bigru_forward needs an even feature size, got {d}")
    if fwd.hidden_size != d // 2 or bwd.hidden_size != d // 2:
        raise ShapeError(
            f"cell hidden sizes ({fwd.hidden_size}, {bwd.hidden_size}) must both be {d // 2}"
        )
    xs = [transpose(take_row(F, t)) for t in range(L)]

    h = Tensor(np.zeros((fwd.hidden_size, 1)))
    front = []
    for t in range(L):
        h = gru_cell_step(xs[t], h, fwd)
        front.append(h)

    h = Tensor(np.zeros((bwd.hidden_size, 1)))
    back: list[Tensor] = [None] * L  # type: ignore[list-item]
    for t in reversed(range(L)):
        h = gru_cell_step(xs[t], h, bwd)
        back[t] = h

    return stack_rows([transpose(concat(front[t], back[t], axis=0)) for t in range(L)])


def self_attention_forward(H: Tensor, params: AttentionParams) -> Tensor:
    """Multi-head self-attention over an L x d sequence.

    Each head computes ``softmax_rows((H W_Q)(H W_K)^T) (H W_V)`` and the
    head outputs are concatenated column-wise back to L x d. Scores are used
    as raw inner products unless ``params.scaled`` is set, in which case they
    are divided by sqrt(d/h). There is no output projection.
    """
    L, d = H.shape
    if d != params.model_dim:
        raise ShapeError(f"attention expects L x {params.model_dim}, got {H.shape}")
    outs = []
    for W_Q, W_K, W_V in params.heads:
        scores = matmul(matmul(H, W_Q), transpose(matmul(H, W_K)))
        if params.scaled:
            scores = scale(scores, 1.0 / np.sqrt(params.head_dim))
        A = softmax_rows(scores)
        outs.append(matmul(A, matmul(H, W_V)))
    R = outs[0]
    for head_out in outs[1:]:
        R = concat(R, head_out, axis=1)
    return R


def grl(x: Tensor, cfg: GrlConfig) -> Tensor:
    """Gradient reversal layer.

    Forward is the bit-exact identity; the backward rule multiplies incoming
    gradients by ``-lam``, so everything upstream descends the negated loss.
    """
    out = _out(x.data.copy(), x)
    lam = float(cfg.lam)
    if lam == 0.0:
        # avoid -0.0 entries from multiplying by -0.0
        return _finish(out, (x,), lambda g: (np.zeros_like(g),))
    return _finish(out, (x,), lambda g: (g * -lam,))
