"""Tour of the tensor engine: build a tiny network, differentiate it,
and confirm the gradients against central finite differences.

Run: python demos/01_autodiff_engine.py
"""

import numpy as np

from aqvq.tensor import (
    Tensor, affine, backward, detach, finite_difference_grad, mse,
    relative_error, relu, straight_through,
)

rng = np.random.default_rng(0)

# A two-layer network: x -> relu(affine) -> affine -> mse against a target.
x = Tensor(rng.normal(size=(8, 4)))
w1 = Tensor(rng.normal(size=(4, 6)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(6), requires_grad=True)
w2 = Tensor(rng.normal(size=(6, 3)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(3), requires_grad=True)
target = Tensor(rng.normal(size=(8, 3)))


def loss_fn():
    hidden = relu(affine(x, w1, b1))
    return mse(affine(hidden, w2, b2), target)


loss = loss_fn()
backward(loss)
print(f"loss = {loss.item():.6f}")
print(f"w1 gradient norm = {np.linalg.norm(w1.grad):.6f}")

# The engine's backward pass must agree with a finite-difference probe.
fd = finite_difference_grad(lambda _: loss_fn(), w1, step=1e-6)
print(f"relative error vs central differences: {relative_error(w1.grad, fd.data):.2e}")

# detach turns a value into a constant: no gradient reaches its inputs.
w1.grad = None
backward(mse(detach(affine(x, w1, b1)), Tensor(np.zeros((8, 6)))))
print(f"gradient through detach: {w1.grad}")

# straight_through forwards one tensor's values while routing the
# gradient to another: the mechanism behind quantized bottlenecks.
z_e = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
z_q = Tensor(rng.normal(size=(3, 2)))
out = straight_through(z_e, z_q)
print(f"straight-through forwards z_q exactly: {np.array_equal(out.data, z_q.data)}")
backward(mse(out, Tensor(np.zeros((3, 2)))))
print(f"...while z_e receives the downstream gradient: norm {np.linalg.norm(z_e.grad):.4f}")
