"""
Checking gradients and sensitivities by finite differences
==========================================================

Every quantity in the delta method is built from two derivatives of a
trained network: per-example cost gradients and the output sensitivity
matrix F.  This script builds a small convolutional net and compares both
against central differences.
"""

import numpy as np

from deltaboot import netcore
from deltaboot.netcore import Conv3x3, Dense, Input, MaxPool2x2, NetworkSpec, ReLU, Softmax

spec = NetworkSpec(
    (Input((1, 8, 8)), Conv3x3(1, 3), MaxPool2x2(), ReLU(), Dense(27, 4), ReLU(), Dense(4, 3), Softmax()),
    num_classes=3,
    reg_rate=0.01,
)
print("parameters:", spec.num_params)
for i, shape in enumerate(spec.shapes):
    print(f"  layer {i:2d} {type(spec.layers[i]).__name__:<10} -> {shape}")

rng = np.random.default_rng(0)
w = rng.normal(0, 0.3, spec.num_params)
x = rng.uniform(0, 1, (1, 8, 8))
y = np.array([0.0, 1.0, 0.0])

# the per-example cost includes the L2 term, so its gradient has a reg_rate * w part
def example_cost(v):
    p = netcore.forward(spec, v, x)
    return -np.log(p[1]) + 0.5 * spec.reg_rate * v @ v

g = netcore.per_example_grad(spec, w, x, y)
F = netcore.sensitivity(spec, w, x)

fd_g = np.empty_like(g)
fd_F = np.empty_like(F)
for j in range(spec.num_params):
    h = 1e-5 * (1 + abs(w[j]))
    e = np.zeros_like(w)
    e[j] = h
    fd_g[j] = (example_cost(w + e) - example_cost(w - e)) / (2 * h)
    fd_F[:, j] = (netcore.forward(spec, w + e, x) - netcore.forward(spec, w - e, x)) / (2 * h)

print("max |grad - fd|       :", np.abs(g - fd_g).max())
print("max |F - fd|          :", np.abs(F - fd_F).max())

# softmax outputs sum to one, so every column of F sums to zero
print("max |column sums of F|:", np.abs(F.sum(axis=0)).max())
