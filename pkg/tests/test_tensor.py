"""Autodiff engine tests: forward oracles, finite-difference gradients,
optimizer arithmetic, and tape misuse errors."""

import numpy as np
import pytest

from emodann import tensor as T


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function over one array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


# ---------------------------------------------------------------------------
# Forward oracles


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, k, n = rng.integers(1, 7, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        out = T.matmul(T.Tensor(a), T.Tensor(b)).data
        expect = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                for l in range(k):
                    expect[i, j] += a[i, l] * b[l, j]
        assert np.allclose(out, expect, atol=1e-12)


def test_softmax_rows_are_stochastic():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 7)) * 10
    y = T.softmax_rows(T.Tensor(x)).data
    assert np.all(y > 0)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
    # invariant under per-row constant shifts
    y2 = T.softmax_rows(T.Tensor(x + 3.0)).data
    assert np.allclose(y, y2, atol=1e-12)


def test_sigmoid_stable_at_extremes():
    y = T.sigmoid(T.Tensor([[-1000.0, 0.0, 1000.0]])).data
    assert np.all(np.isfinite(y))
    assert y[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert y[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert y[0, 2] == pytest.approx(1.0, abs=1e-12)


def test_shape_helpers():
    c = T.column([1.0, 2.0, 3.0])
    r = T.row([1.0, 2.0, 3.0])
    s = T.scalar(4.0)
    assert c.shape == (3, 1)
    assert r.shape == (1, 3)
    assert s.shape == (1, 1) and s.item() == 4.0


def test_pick_rows_gathers_per_row():
    x = np.arange(12.0).reshape(3, 4)
    out = T.pick_rows(T.Tensor(x), [1, 0, 3]).data
    assert out.tolist() == [[1.0], [4.0], [11.0]]


def test_concat_and_slices():
    a = np.arange(6.0).reshape(2, 3)
    b = np.arange(6.0, 12.0).reshape(2, 3)
    rows = T.concat(T.Tensor(a), T.Tensor(b), axis=0).data
    cols = T.concat(T.Tensor(a), T.Tensor(b), axis=1).data
    assert rows.shape == (4, 3) and cols.shape == (2, 6)
    assert np.array_equal(T.take_row(T.Tensor(rows), 2).data, b[0:1, :])
    assert np.array_equal(T.take_col(T.Tensor(cols), 5).data, b[:, 2:3])


# ---------------------------------------------------------------------------
# Gradients against finite differences


def _check_grad(build, arrays, tol=1e-6):
    """``build(tensors) -> scalar Tensor``; checks every input's gradient."""
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        for t in tensors:
            tape.watch(t)
        loss = build(tensors)
        grads = T.backward(tape, loss)
    for t, a in zip(tensors, arrays):
        fd = central_diff(lambda: build([T.Tensor(arr) for arr in arrays]).item(), a)
        assert rel_err(grads[t], fd) < tol, f"gradient mismatch for shape {a.shape}"


def test_grad_matmul_chain():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))

    def build(ts):
        return T.sum_all(T.tanh(T.matmul(ts[0], ts[1])))

    _check_grad(build, [a, b])


def test_grad_elementwise_ops():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 5))
    y = rng.standard_normal((4, 5))

    def build(ts):
        z = T.mul(T.sigmoid(ts[0]), T.add(ts[0], ts[1]))
        return T.sum_all(T.mul(z, z))

    _check_grad(build, [x, y])


def test_grad_softmax_log_pick():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 4))
    labels = [0, 3, 1, 2, 2, 0]

    def build(ts):
        p = T.softmax_rows(ts[0])
        return T.neg(T.sum_all(T.log(T.pick_rows(p, labels))))

    _check_grad(build, [x])


def test_grad_structural_ops():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4))
    r = rng.standard_normal((1, 4))
    s = rng.standard_normal((3, 1))

    def build(ts):
        y = T.scale_rows(T.add_rowvec(ts[0], ts[1]), ts[2])
        top = T.take_row(y, 0)
        rest = T.concat(T.take_row(y, 1), T.take_row(y, 2), axis=0)
        return T.sum_all(T.tanh(T.concat(top, rest, axis=0)))

    _check_grad(build, [x, r, s])


def test_grad_stack_rows():
    rng = np.random.default_rng(6)
    rows = [rng.standard_normal((1, 5)) for _ in range(4)]

    def build(ts):
        return T.sum_all(T.sigmoid(T.stack_rows(ts)))

    _check_grad(build, rows)


def test_grad_scale_and_neg():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3))

    def build(ts):
        return T.sum_all(T.neg(T.scale(ts[0], -2.5)))

    _check_grad(build, [x])


def test_disconnected_leaf_gets_zeros():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    unused = T.Tensor(np.ones((3, 3)), requires_grad=True)
    with T.Tape() as tape:
        tape.watch(x)
        tape.watch(unused)
        loss = T.sum_all(T.mul(x, x))
        grads = T.backward(tape, loss)
    assert np.array_equal(grads[unused], np.zeros((3, 3)))
    assert np.allclose(grads[x], 2 * np.ones((2, 2)))


def test_reused_tensor_accumulates_gradient():
    # f(x) = sum(x*x) + sum(x) uses x on two paths; grad = 2x + 1
    x = T.Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    with T.Tape() as tape:
        tape.watch(x)
        loss = T.add(T.sum_all(T.mul(x, x)), T.sum_all(x))
        grads = T.backward(tape, loss)
    assert np.allclose(grads[x], np.array([[3.0, -3.0]]), atol=1e-12)


# ---------------------------------------------------------------------------
# Adam against an independent simulation


def adam_oracle(p0, gs, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook bias-corrected Adam, written independently of the engine."""
    p = p0.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (np.sqrt(vh) + eps)
    return p


def test_adam_matches_simulation():
    rng = np.random.default_rng(8)
    p0 = rng.standard_normal((3, 4))
    gs = [rng.standard_normal((3, 4)) for _ in range(25)]
    params = {"w": T.Tensor(p0.copy(), requires_grad=True)}
    state = T.AdamState.init(params, learning_rate=1e-3)
    for g in gs:
        T.adam_step(params, {"w": g}, state)
    assert state.step == 25
    expect = adam_oracle(p0, gs, lr=1e-3)
    assert rel_err(params["w"].data, expect) < 1e-12


def test_adam_zero_grad_fresh_state_is_noop():
    # with zero moments and a zero gradient the update is exactly 0.0
    p0 = np.array([[0.5, -1.25], [3.0, 0.0]])
    params = {"w": T.Tensor(p0.copy(), requires_grad=True)}
    state = T.AdamState.init(params)
    T.adam_step(params, {"w": np.zeros_like(p0)}, state)
    assert params["w"].data.tobytes() == p0.tobytes()


def test_adam_first_step_magnitude():
    # bias correction makes the first step lr-sized regardless of grad scale
    # (up to the epsilon floor, visible only at tiny gradients)
    for scale in (1e-6, 1.0, 1e6):
        params = {"w": T.Tensor(np.zeros((1, 1)), requires_grad=True)}
        state = T.AdamState.init(params, learning_rate=0.01)
        T.adam_step(params, {"w": np.full((1, 1), scale)}, state)
        assert params["w"].data[0, 0] == pytest.approx(-0.01, rel=2e-2)


def test_adam_key_mismatch_raises():
    params = {"w": T.Tensor(np.zeros((2, 2)), requires_grad=True)}
    state = T.AdamState.init(params)
    with pytest.raises(KeyError):
        T.adam_step(params, {"other": np.zeros((2, 2))}, state)
    with pytest.raises(T.ShapeError):
        T.adam_step(params, {"w": np.zeros((3, 3))}, state)


# ---------------------------------------------------------------------------
# L2 penalty


def test_l2_penalty_value_and_grad():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((2, 4))
    ta = T.Tensor(a, requires_grad=True)
    tb = T.Tensor(b, requires_grad=True)
    with T.Tape() as tape:
        tape.watch(ta)
        tape.watch(tb)
        pen = T.l2_penalty([ta, tb], 0.01)
        grads = T.backward(tape, pen)
    assert pen.item() == pytest.approx(0.01 * ((a * a).sum() + (b * b).sum()), rel=1e-12)
    assert np.allclose(grads[ta], 0.02 * a, atol=1e-12)
    assert np.allclose(grads[tb], 0.02 * b, atol=1e-12)


def test_l2_penalty_empty_and_negative():
    assert T.l2_penalty([], 0.5).item() == 0.0
    with pytest.raises(T.InvalidValueError):
        T.l2_penalty([T.Tensor(np.ones((1, 1)))], -1.0)


# ---------------------------------------------------------------------------
# Errors


def test_shape_errors():
    a = T.Tensor(np.ones((2, 3)))
    b = T.Tensor(np.ones((2, 3)))
    with pytest.raises(T.ShapeError):
        T.matmul(a, b)
    with pytest.raises(T.ShapeError):
        T.add(a, T.Tensor(np.ones((3, 2))))
    with pytest.raises(T.ShapeError):
        T.add_rowvec(a, T.Tensor(np.ones((1, 4))))
    with pytest.raises(T.ShapeError):
        T.scale_rows(a, T.Tensor(np.ones((3, 1))))
    with pytest.raises(T.ShapeError):
        T.take_row(a, 5)
    with pytest.raises(T.ShapeError):
        T.pick_rows(a, [0, 1, 2])
    with pytest.raises(T.ShapeError):
        T.Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(T.ShapeError):
        a.item()


def test_value_errors():
    with pytest.raises(T.InvalidValueError):
        T.log(T.Tensor([[1.0, 0.0]]))
    with pytest.raises(T.InvalidValueError):
        T.log(T.Tensor([[np.nan]]))
    with pytest.raises(T.InvalidValueError):
        T.softmax_rows(T.Tensor([[np.inf, 1.0]]))


def test_tape_misuse():
    x = T.Tensor(np.ones((1, 1)), requires_grad=True)
    with T.Tape() as tape:
        tape.watch(x)
        loss = T.sum_all(T.mul(x, x))
        T.backward(tape, loss)
        with pytest.raises(T.TapeError):
            T.backward(tape, loss)  # consumed

    with pytest.raises(T.TapeError):
        with T.Tape():
            with T.Tape():
                pass  # tapes do not nest

    with T.Tape() as tape:
        with pytest.raises(T.TapeError):
            T.backward(tape, T.scalar(0.0))  # nothing recorded

    with T.Tape() as tape:
        y = T.sum_all(T.mul(x, x))
    off_tape = T.sum_all(T.mul(x, x))  # built after the tape closed
    with T.Tape() as tape2:
        z = T.sum_all(T.mul(x, x))
        with pytest.raises(T.TapeError):
            T.backward(tape2, off_tape)


def test_backward_requires_scalar_loss():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    with T.Tape() as tape:
        tape.watch(x)
        y = T.mul(x, x)
        with pytest.raises(T.ShapeError):
            T.backward(tape, y)


def test_no_tape_is_plain_forward():
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    y = T.mul(x, x)
    assert y.node_id is None
    assert y.requires_grad  # flag propagates, but nothing was recorded
