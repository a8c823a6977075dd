"""What the gradient reversal layer actually does.

Forward: identity. Backward: multiply by -lambda. That one sign flip turns a
single backward pass into a two-player game; this script makes the flip
visible, then plays the game on a 2-d toy problem where a feature extractor
must keep class information while erasing a nuisance direction.
"""

import numpy as np

from emodann.layers import GrlConfig, grl
from emodann.tensor import (
    AdamState, Tape, Tensor, adam_step, add, backward, matmul, mul, neg,
    scale, sum_all,
)

# --- the sign flip, directly ------------------------------------------------

x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
c = Tensor(np.ones((3, 2)))

for lam in (0.0, 0.5, 1.0):
    with Tape() as tape:
        tape.watch(x)
        y = grl(x, GrlConfig(lam))
        loss = sum_all(mul(y, c))
    g = backward(tape, loss)[x]
    print(f"lambda={lam:3.1f}: forward identical {np.array_equal(y.data, x.data)}, "
          f"gradient = {g[0]} (plain loss gradient is [1. 1.])")

# --- a two-player game ------------------------------------------------------
# data: 2-d points, class = sign along axis 0, nuisance = sign along axis 1.
# the extractor is a 1x2 linear map to a single feature; a classifier head
# and a nuisance head (behind the GRL) both read that feature. If the game
# works, the extractor keeps axis 0 and zeroes out axis 1.

rng = np.random.default_rng(7)
n = 200
cls = rng.integers(0, 2, n) * 2.0 - 1.0
nui = rng.integers(0, 2, n) * 2.0 - 1.0
X = np.stack([cls, nui], axis=1) + 0.1 * rng.standard_normal((n, 2))

extract = Tensor(rng.standard_normal((1, 2)) * 0.5, requires_grad=True)
w_cls = Tensor(np.array([[0.5]]), requires_grad=True)
w_nui = Tensor(np.array([[0.5]]), requires_grad=True)
params = {"extract": extract, "w_cls": w_cls, "w_nui": w_nui}
opt = AdamState.init(params, learning_rate=0.05)
Xt = Tensor(X.T)
y_cls = Tensor(cls.reshape(1, n))
y_nui = Tensor(nui.reshape(1, n))

def mse(pred, target):
    diff = add(pred, neg(target))
    return scale(sum_all(mul(diff, diff)), 1.0 / n)


print("\nextractor weights [class_axis, nuisance_axis] while training:")
for step in range(1, 301):
    with Tape() as tape:
        for p in params.values():
            tape.watch(p)
        feat = matmul(extract, Xt)                        # 1 x n
        l_cls = mse(matmul(w_cls, feat), y_cls)
        l_nui = mse(matmul(w_nui, grl(feat, GrlConfig(1.0))), y_nui)
        total = add(l_cls, l_nui)                         # one backward pass
    grads = backward(tape, total)
    adam_step(params, {k: grads[p] for k, p in params.items()}, opt)
    if step in (1, 100, 300):
        print(f"  step {step:3d}: {np.round(extract.data.ravel(), 3)}")

print("\nthe class direction survives; the nuisance head's reversed gradient")
print("pushes the extractor's nuisance weight toward zero.")
