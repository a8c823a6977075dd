"""A tour of the reverse-mode autodiff engine.

Builds a small computation, checks its gradients against central finite
differences, then runs a few Adam steps on a quadratic bowl to show the
optimizer converging.
"""

import numpy as np

from emodann.tensor import (
    AdamState, Tape, Tensor, adam_step, add, backward, matmul, mul, neg,
    sum_all, tanh,
)

rng = np.random.default_rng(0)

# --- record a forward pass and differentiate it ---------------------------

W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
x = Tensor(rng.standard_normal((4, 1)), requires_grad=True)

with Tape() as tape:
    tape.watch(W)
    tape.watch(x)
    loss = sum_all(tanh(matmul(W, x)))
grads = backward(tape, loss)

print("loss          :", f"{loss.item():.6f}")
print("dloss/dW shape:", grads[W].shape)
print("dloss/dx      :", np.round(grads[x].ravel(), 4))

# --- confirm against central finite differences ----------------------------

h = 1e-6
fd = np.zeros_like(x.data)
for i in range(x.data.size):
    keep = x.data[i, 0]
    x.data[i, 0] = keep + h
    up = np.sum(np.tanh(W.data @ x.data))
    x.data[i, 0] = keep - h
    down = np.sum(np.tanh(W.data @ x.data))
    x.data[i, 0] = keep
    fd[i, 0] = (up - down) / (2 * h)

worst = np.max(np.abs(fd - grads[x]) / np.maximum(1.0, np.abs(fd)))
print(f"max diff vs finite differences: {worst:.2e}")
assert worst < 1e-8

# --- Adam on a quadratic ----------------------------------------------------

target = rng.standard_normal((5, 1))
theta = Tensor(np.zeros((5, 1)), requires_grad=True)
params = {"theta": theta}
opt = AdamState.init(params, learning_rate=0.1)

print("\nminimizing ||theta - target||^2 with Adam:")
for step in range(1, 201):
    with Tape() as tape:
        tape.watch(theta)
        diff = add(theta, neg(Tensor(target)))
        loss = sum_all(mul(diff, diff))
    grads = backward(tape, loss)
    adam_step(params, {"theta": grads[theta]}, opt)
    if step in (1, 10, 50, 200):
        print(f"  step {step:3d}  loss {loss.item():.6f}")

print("recovered target within", f"{np.max(np.abs(theta.data - target)):.4f}")
