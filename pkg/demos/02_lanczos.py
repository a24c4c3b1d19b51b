"""
Top eigenpairs of the OPG matrix without forming it
===================================================

G = (1/N) sum g_n g_n^T + lam I is only ever applied to vectors.  Lanczos
iteration recovers its leading eigenpairs; the rest of the spectrum is
replaced by the floor lam when computing predictive sigmas.  The bracket
width epsilon shrinks as K grows and vanishes at K = P.
"""

import numpy as np

from deltaboot import netcore
from deltaboot.data import gen_synthetic
from deltaboot.delta import LowRankPredictor, OpgOperator, lanczos_topk, sigma_delta_exact

train = gen_synthetic(classes=3, per_class=40, dim=5, separation=2.0, seed=0)
spec = netcore.dense_spec(5, [12], 3, reg_rate=0.01)
w = np.random.default_rng(1).normal(0, 0.4, spec.num_params)

J = netcore.per_example_grads(spec, w, train.inputs, train.labels)
op = OpgOperator(J, spec.reg_rate)
print(f"N={op.n}, P={op.dim}")

pairs = lanczos_topk(op, op.dim, tol=1e-10)
dense = np.linalg.eigh(op.dense())[0][::-1]
print("largest eigenvalues (lanczos):", np.round(pairs.values[:5], 6))
print("largest eigenvalues (dense)  :", np.round(dense[:5], 6))
print("smallest eigenvalue          :", pairs.values[-1], "(floor is", spec.reg_rate, ")")

test_x = gen_synthetic(3, 5, 5, 2.0, seed=0, stream=1).inputs
F = netcore.sensitivities(spec, w, test_x)
pred = LowRankPredictor.from_sensitivities(F, pairs, len(train), spec.reg_rate)
exact = sigma_delta_exact(F, J, spec.reg_rate).sigma

print("\n   K   max eps      max |sigma - exact|")
for K in (1, 5, 10, 25, 50, op.dim):
    u = pred.sigma(K)
    print(f"{K:4d}   {u.epsilon.max():.3e}    {np.abs(u.sigma - exact).max():.3e}")
