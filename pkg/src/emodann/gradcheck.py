"""Central finite-difference gradient checking.

The comparison metric is ``|analytic - numeric| / max(1, |analytic|,
|numeric|)``: relative for large gradients, absolute near zero, which is the
regime where raw relative error is dominated by float cancellation noise.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tape, Tensor, backward, mul, sum_all

__all__ = ["finite_difference_grads", "max_rel_error", "grad_check",
           "layer_battery", "GRADCHECK_TOLERANCE"]

DEFAULT_STEP = 1e-6
GRADCHECK_TOLERANCE = 1e-5


def finite_difference_grads(f: Callable[[], float], params: Iterable[Tensor],
                            h: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Central differences of ``f`` with respect to every entry of ``params``.

    ``f`` must be a pure function of the current parameter values (no RNG, no
    retained state); each call rebuilds its forward pass from scratch.
    """
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            f_plus = f()
            flat[i] = keep - h
            f_minus = f()
            flat[i] = keep
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        out.append(g)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(f: Callable[[], float], params: list[Tensor],
               analytic: dict[Tensor, np.ndarray], h: float = DEFAULT_STEP) -> float:
    """Worst-case discrepancy between analytic and numeric gradients."""
    numeric = finite_difference_grads(f, params, h=h)
    worst = 0.0
    for p, num in zip(params, numeric):
        worst = max(worst, max_rel_error(analytic[p], num))
    return worst


def _check_scalar_fn(build: Callable[[], Tensor], params: list[Tensor],
                     h: float = DEFAULT_STEP) -> float:
    """Record one forward pass, then compare its gradients against central
    differences of the same function re-run without a tape."""
    with Tape() as tape:
        for p in params:
            tape.watch(p)
        loss = build()
    analytic = backward(tape, loss)
    return grad_check(lambda: build().item(), params, analytic, h=h)


def layer_battery(seed: int = 0, trials: int = 100, h: float = DEFAULT_STEP) -> dict[str, float]:
    """Worst finite-difference error per architectural block over seeded
    random instances.

    Every entry is directly comparable to GRADCHECK_TOLERANCE. The reversal
    layer is the exception: its backward rule is deliberately not the
    derivative of its forward (a sign-flipped field cannot match finite
    differences), so 'grl' reports the deviation from its own contract,
    |grad_in + lam * grad_out|. The full model is checked in two blocks:
    encoder + emotion head against the reported total (emotion loss minus
    lam times domain loss plus the l2 term, which is what those parameters'
    gradients descend), and the domain head against domain loss plus l2
    (the head itself descends the raw domain loss).
    """
    from .data import Conversation, Utterance
    from .layers import (
        AtFusionParams,
        DenseParams,
        AttentionParams,
        GrlConfig,
        GruCellParams,
        at_fusion_forward,
        bigru_forward,
        dense_forward,
        fuse_sequence,
        grl,
        gru_cell_step,
        self_attention_forward,
    )
    from .model import ModelConfig, combined_loss, init_model

    worst: dict[str, float] = {}

    def note(key: str, err: float) -> None:
        worst[key] = max(worst.get(key, 0.0), err)

    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])

        dense = DenseParams.init(rng, 4, 3)
        x = Tensor(rng.standard_normal((3, 1)))
        note("dense", _check_scalar_fn(
            lambda: sum_all(dense_forward(x, dense, "tanh")), [dense.W, dense.b], h))

        fusion = AtFusionParams.init(rng, 4, 3, 2)
        a = Tensor(rng.standard_normal((3, 1)))
        t = Tensor(rng.standard_normal((2, 1)))
        fusion_params = [fusion.acoustic.W, fusion.acoustic.b, fusion.lexical.W,
                         fusion.lexical.b, fusion.W_F, fusion.w_F]
        note("at_fusion", _check_scalar_fn(
            lambda: sum_all(at_fusion_forward(a, t, fusion)[0]), fusion_params, h))

        A = Tensor(rng.standard_normal((3, 3)))
        T = Tensor(rng.standard_normal((3, 2)))
        note("fuse_sequence", _check_scalar_fn(
            lambda: sum_all(fuse_sequence(A, T, fusion)[0]), fusion_params, h))

        cell = GruCellParams.init(rng, 2, 3)
        xt = Tensor(rng.standard_normal((3, 1)))
        hp = Tensor(rng.standard_normal((2, 1)))
        cell_params = [getattr(cell, f"{kind}_{gate}")
                       for gate in ("z", "r", "h") for kind in ("W", "U", "b")]
        note("gru_cell", _check_scalar_fn(
            lambda: sum_all(gru_cell_step(xt, hp, cell)), cell_params, h))

        fwd = GruCellParams.init(rng, 2, 4)
        bwd = GruCellParams.init(rng, 2, 4)
        F = Tensor(rng.standard_normal((3, 4)))
        bigru_params = [getattr(c, f"{kind}_{gate}") for c in (fwd, bwd)
                        for gate in ("z", "r", "h") for kind in ("W", "U", "b")]
        note("bigru", _check_scalar_fn(
            lambda: sum_all(bigru_forward(F, fwd, bwd)), bigru_params, h))

        attn = AttentionParams.init(rng, 4, 2)
        Hmat = Tensor(rng.standard_normal((3, 4)))
        attn_params = [w for head in attn.heads for w in head]
        note("attention", _check_scalar_fn(
            lambda: sum_all(self_attention_forward(Hmat, attn)), attn_params, h))

        # reversal layer: contract check, not a finite-difference check
        lam = float(rng.uniform(0.25, 2.0))
        xg = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        c = Tensor(rng.standard_normal((3, 2)))
        with Tape() as tape:
            tape.watch(xg)
            loss = sum_all(mul(grl(xg, GrlConfig(lam)), c))
        g_rev = backward(tape, loss)[xg]
        note("grl", float(np.max(np.abs(g_rev + lam * c.data))))

        # full model, blockwise
        cfg = ModelConfig(d_a=3, d_t=2, d=4, n_heads=2, k_emotions=2, k_domains=2,
                          lam=1.0, seed=int(rng.integers(2 ** 31)))
        m = init_model(cfg)
        labeled = Conversation(id="gc-l", session_id=1, utterances=[
            Utterance(acoustic=rng.standard_normal(3), lexical=rng.standard_normal(2),
                      speaker_id="a", session_id=1, emotion=int(rng.integers(2)))
            for _ in range(3)
        ])
        unlabeled = Conversation(id="gc-u", session_id=2, utterances=[
            Utterance(acoustic=rng.standard_normal(3), lexical=rng.standard_normal(2),
                      speaker_id="b", session_id=2)
            for _ in range(2)
        ])
        index = {"a": 0, "b": 1}
        l2w = 0.01

        def breakdown():
            return combined_loss([labeled], [unlabeled], m, index, l2_weight=l2w)

        params = m.parameters()
        with Tape() as tape:
            for p in params.values():
                tape.watch(p)
            bd = breakdown()
        analytic = backward(tape, bd.objective)

        enc = [p for name, p in params.items() if not name.startswith("domain.")]
        num_enc = finite_difference_grads(lambda: breakdown().total, enc, h=h)
        for p, num in zip(enc, num_enc):
            note("model_encoder", max_rel_error(analytic[p], num))

        dom = [params["domain.W"], params["domain.b"]]
        num_dom = finite_difference_grads(
            lambda: (lambda b: b.l_d + b.l2)(breakdown()), dom, h=h)
        for p, num in zip(dom, num_dom):
            note("model_domain_head", max_rel_error(analytic[p], num))

    return worst
