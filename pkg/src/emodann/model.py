"""Model assembly: fusion -> bi-GRU -> self-attention encoder, an emotion
classifier head, and a gradient-reversed speaker classifier head, plus the
joint training objective and JSON checkpointing.

Conventions for the two heads:

* the emotion head sees the encoder output directly;
* the speaker (domain) head sees the encoder output through the gradient
  reversal layer, so minimizing its cross-entropy trains the head normally
  while pushing the encoder toward speaker-invariant representations.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .layers import (
    AtFusionParams,
    AttentionParams,
    DenseParams,
    GrlConfig,
    GruCellParams,
    bigru_forward,
    dense_rows,
    fuse_sequence,
    grl,
    self_attention_forward,
)
from .tensor import (
    ShapeError,
    Tensor,
    add,
    l2_penalty,
    log,
    neg,
    pick_rows,
    scale,
    softmax_rows,
    sum_all,
)

if TYPE_CHECKING:
    from .data import Conversation

__all__ = [
    "ModelConfig",
    "DannModel",
    "LossBreakdown",
    "init_model",
    "encode_conversation",
    "emotion_probs",
    "domain_probs",
    "combined_loss",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Dimensions and knobs for one model instance.

    ``d`` is the shared representation size used by fusion, the bi-GRU
    (``d/2`` units per direction) and attention, so it must be even and
    divisible by ``n_heads``. ``lam`` is the gradient-reversal strength.
    """

    d_a: int
    d_t: int
    d: int = 100
    n_heads: int = 4
    k_emotions: int = 4
    k_domains: int = 10
    lam: float = 1.0
    scaled_attention: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("d_a", "d_t", "d", "n_heads", "k_emotions", "k_domains"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.d % 2 != 0:
            raise ValueError(f"d must be even for the two GRU directions, got {self.d}")
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} must be divisible by n_heads={self.n_heads}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass
class DannModel:
    config: ModelConfig
    at_fusion: AtFusionParams
    gru_fwd: GruCellParams
    gru_bwd: GruCellParams
    attention: AttentionParams
    emotion_head: DenseParams
    domain_head: DenseParams
    grl: GrlConfig

    def parameters(self) -> dict[str, Tensor]:
        """All trainable tensors in a fixed, stable order (domain head last)."""
        out: dict[str, Tensor] = {
            "fusion.acoustic.W": self.at_fusion.acoustic.W,
            "fusion.acoustic.b": self.at_fusion.acoustic.b,
            "fusion.lexical.W": self.at_fusion.lexical.W,
            "fusion.lexical.b": self.at_fusion.lexical.b,
            "fusion.W_F": self.at_fusion.W_F,
            "fusion.w_F": self.at_fusion.w_F,
        }
        for tag, cell in (("gru_fwd", self.gru_fwd), ("gru_bwd", self.gru_bwd)):
            for gate in ("z", "r", "h"):
                out[f"{tag}.W_{gate}"] = getattr(cell, f"W_{gate}")
                out[f"{tag}.U_{gate}"] = getattr(cell, f"U_{gate}")
                out[f"{tag}.b_{gate}"] = getattr(cell, f"b_{gate}")
        for i, (wq, wk, wv) in enumerate(self.attention.heads):
            out[f"attn.head{i}.W_Q"] = wq
            out[f"attn.head{i}.W_K"] = wk
            out[f"attn.head{i}.W_V"] = wv
        out["emotion.W"] = self.emotion_head.W
        out["emotion.b"] = self.emotion_head.b
        out["domain.W"] = self.domain_head.W
        out["domain.b"] = self.domain_head.b
        return out

    def weight_matrices(self) -> dict[str, Tensor]:
        """The subset of parameters subject to l2 decay (biases excluded)."""
        return {k: v for k, v in self.parameters().items()
                if not k.endswith((".b", ".b_z", ".b_r", ".b_h"))}


@dataclass
class LossBreakdown:
    """Scalars of one objective evaluation.

    ``total`` is the conventional reported loss ``L_y - lam * L_d + l2``.
    ``objective`` is the scalar actually differentiated: the reversal layer
    carries the ``-lam`` coupling in its backward rule, so the graph sums
    ``L_y + L_d + l2`` with L_d routed through the reversal; its gradients
    equal the reported total's for the encoder and emotion head, while the
    domain head descends on raw L_d.
    """

    l_y: float
    l_d: float
    l2: float
    total: float
    n: int
    m: int
    lam: float
    objective: Tensor | None = None


def init_model(config: ModelConfig) -> DannModel:
    """Seeded Glorot-uniform weights, zero biases.

    The speaker head starts at exactly zero instead: its first predictions
    are then uniform, so the reversal layer feeds no gradient back into the
    encoder until the head has actually learned something about speakers.
    A randomly initialized head would push arbitrary directions through the
    reversed branch from step one, which destabilizes the adversarial game
    long before the head is informative.

    Draw order is fixed with the speaker head last, so models differing only
    in that head share every upstream initialization.
    """
    rng = np.random.default_rng(config.seed)
    half = config.d // 2
    return DannModel(
        config=config,
        at_fusion=AtFusionParams.init(rng, config.d, config.d_a, config.d_t),
        gru_fwd=GruCellParams.init(rng, half, config.d),
        gru_bwd=GruCellParams.init(rng, half, config.d),
        attention=AttentionParams.init(rng, config.d, config.n_heads,
                                       scaled=config.scaled_attention),
        emotion_head=DenseParams.init(rng, config.k_emotions, config.d),
        domain_head=DenseParams(
            W=Tensor(np.zeros((config.k_domains, config.d)), requires_grad=True),
            b=Tensor(np.zeros((config.k_domains, 1)), requires_grad=True),
        ),
        grl=GrlConfig(config.lam),
    )


def _modality_matrices(conv: "Conversation", config: ModelConfig) -> tuple[Tensor, Tensor]:
    utts = conv.utterances
    if len(utts) == 0:
        raise ShapeError(f"conversation {conv.id!r} is empty")
    A = np.stack([np.asarray(u.acoustic, dtype=np.float64).ravel() for u in utts])
    T = np.stack([np.asarray(u.lexical, dtype=np.float64).ravel() for u in utts])
    if A.shape[1] != config.d_a or T.shape[1] != config.d_t:
        raise ShapeError(
            f"conversation {conv.id!r} has feature dims ({A.shape[1]}, {T.shape[1]}), "
            f"model expects ({config.d_a}, {config.d_t})"
        )
    return Tensor(A), Tensor(T)


def encode_conversation(conv: "Conversation", model: DannModel) -> Tensor:
    """Encode a conversation to its L x d representation matrix.

    Per-utterance modality fusion, then the bidirectional GRU over the
    conversation, then multi-head self-attention over the hidden states.
    """
    A, T = _modality_matrices(conv, model.config)
    F, _ = fuse_sequence(A, T, model.at_fusion)
    H = bigru_forward(F, model.gru_fwd, model.gru_bwd)
    return self_attention_forward(H, model.attention)


def emotion_probs(R: Tensor, model: DannModel) -> Tensor:
    """Row-stochastic L x k_emotions matrix of class probabilities."""
    return softmax_rows(dense_rows(R, model.emotion_head))


def domain_probs(R: Tensor, model: DannModel) -> Tensor:
    """Row-stochastic L x k_domains speaker probabilities.

    The reversal layer sits between R and the head: forward values are
    identical to applying the head directly, but encoder gradients from this
    branch arrive negated and scaled by lam.
    """
    return softmax_rows(dense_rows(grl(R, model.grl), model.domain_head))


def _gold_emotions(conv: "Conversation") -> list[int]:
    golds = []
    for k, u in enumerate(conv.utterances):
        if u.emotion is None:
            raise ValueError(
                f"utterance {k} of conversation {conv.id!r} has no emotion label"
            )
        golds.append(int(u.emotion))
    return golds


def _cross_entropy_sum(probs: Tensor, golds: Sequence[int]) -> Tensor:
    """Sum over rows of -ln(prob of the gold class)."""
    return neg(sum_all(log(pick_rows(probs, golds))))


def combined_loss(labeled: Sequence["Conversation"], unlabeled: Sequence["Conversation"],
                  model: DannModel, domain_index: dict[str, int],
                  l2_weight: float = 0.0, domain_branch: bool = True) -> LossBreakdown:
    """Joint objective over a batch of conversations.

    L_y is the mean emotion cross-entropy over the n labeled utterances; L_d
    is the mean speaker cross-entropy over all n+m utterances (labeled and
    unlabeled), computed through the reversal layer. The differentiated
    scalar ``objective`` includes the speaker term only when ``lam > 0``:
    at lam=0 the adversarial branch contributes nothing to any gradient and
    training is exactly the plain supervised baseline. L_d is still computed
    and reported in that case (the ops are recorded but dead, carrying no
    gradient into the objective).

    With ``domain_branch=False`` the speaker branch is skipped entirely:
    L_d is reported as nan and the objective is L_y + l2.
    """
    if len(labeled) == 0:
        raise ValueError("combined_loss needs at least one labeled conversation")
    lam = model.grl.lam

    n = 0
    m = 0
    ly_sum: Tensor | None = None
    ld_sum: Tensor | None = None

    def domain_term(R: Tensor, conv: "Conversation") -> Tensor:
        try:
            idx = [domain_index[u.speaker_id] for u in conv.utterances]
        except KeyError as e:
            raise ValueError(f"speaker {e.args[0]!r} missing from domain_index") from None
        k = model.config.k_domains
        if any(not 0 <= i < k for i in idx):
            raise ValueError(f"domain index out of range for k_domains={k}")
        return _cross_entropy_sum(domain_probs(R, model), idx)

    for conv in labeled:
        R = encode_conversation(conv, model)
        ce = _cross_entropy_sum(emotion_probs(R, model), _gold_emotions(conv))
        ly_sum = ce if ly_sum is None else add(ly_sum, ce)
        n += len(conv.utterances)
        if domain_branch:
            dce = domain_term(R, conv)
            ld_sum = dce if ld_sum is None else add(ld_sum, dce)
    for conv in unlabeled:
        m += len(conv.utterances)
        if domain_branch:
            R = encode_conversation(conv, model)
            dce = domain_term(R, conv)
            ld_sum = dce if ld_sum is None else add(ld_sum, dce)

    l_y = scale(ly_sum, 1.0 / n)
    l2 = l2_penalty(model.weight_matrices(), l2_weight)
    if domain_branch:
        l_d = scale(ld_sum, 1.0 / (n + m))
        if lam > 0.0:
            objective = add(add(l_y, l_d), l2)
        else:
            objective = add(l_y, l2)
        l_d_val = l_d.item()
    else:
        objective = add(l_y, l2)
        l_d_val = float("nan")

    l_y_val = l_y.item()
    l2_val = l2.item()
    total = l_y_val - lam * l_d_val + l2_val if domain_branch else l_y_val + l2_val
    return LossBreakdown(l_y=l_y_val, l_d=l_d_val, l2=l2_val, total=total,
                         n=n, m=m, lam=lam, objective=objective)


def predict(conv: "Conversation", model: DannModel) -> np.ndarray:
    """Per-utterance emotion labels: row argmax of the class probabilities,
    ties broken toward the lowest class index."""
    probs = emotion_probs(encode_conversation(conv, model), model)
    return np.argmax(probs.data, axis=1)


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(model: DannModel, path: str) -> None:
    """Write the model as a versioned JSON file (atomically).

    Floats are serialized with full round-trip precision, so save -> load
    reproduces every parameter bit-exactly and two identical models produce
    byte-identical files.
    """
    cfg = model.config
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "d_a": cfg.d_a, "d_t": cfg.d_t, "d": cfg.d, "n_heads": cfg.n_heads,
            "k_emotions": cfg.k_emotions, "k_domains": cfg.k_domains,
            "lam": cfg.lam, "scaled_attention": cfg.scaled_attention,
            "seed": cfg.seed,
        },
        "params": {name: p.data.tolist() for name, p in model.parameters().items()},
    }
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, sort_keys=True, allow_nan=False)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> DannModel:
    with open(path) as f:
        payload = json.load(f)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    config = ModelConfig(**payload["config"])
    model = init_model(config)
    params = model.parameters()
    stored = payload["params"]
    if set(stored) != set(params):
        missing = sorted(set(params) ^ set(stored))
        raise ValueError(f"checkpoint parameter set mismatch: {missing}")
    for name, p in params.items():
        arr = np.array(stored[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ValueError(
                f"checkpoint shape {arr.shape} != expected {p.data.shape} for '{name}'"
            )
        p.data = arr
    return model
