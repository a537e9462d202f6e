"""
Backprop against finite differences
===================================

Build a small MLP, compute the exact gradient, and compare it against central
differences coordinate by coordinate.
"""

import numpy as np

from fedblur.nn import MlpModel

rng = np.random.default_rng(0)
model = MlpModel((6, 10, 3))  # relu hidden layer, softmax cross-entropy
model.init_params(seed=0)
print("layers:", model.params.layer_names, "total params:", model.params.total_dim)

X = rng.normal(size=(8, 6))
y = rng.integers(0, 3, size=8)
loss, grad = model.loss_and_grad(model.params, X, y)
print(f"loss {loss:.6f}")

h = 1e-5
fd = np.empty(model.params.total_dim)
for j in range(fd.size):
    plus, minus = model.params.copy(), model.params.copy()
    plus.values[j] += h
    minus.values[j] -= h
    fd[j] = (model.loss_value(plus, X, y) - model.loss_value(minus, X, y)) / (2 * h)

err = np.abs(grad.values - fd) / np.maximum(np.maximum(np.abs(fd), np.abs(grad.values)), 1e-6)
print(f"max relative error {err.max():.2e}")

# a layer view is a slice of the flat vector, not a copy
W0 = grad.layer("W0")
print("W0 gradient shape", W0.shape, "norm", np.linalg.norm(W0))
