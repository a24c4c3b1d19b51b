"""
Bootstrap and delta-method sigmas on one problem
================================================

A small blob classifier is trained once for the delta method and B times on
bootstrap resamples.  The bootstrap standard deviations are then regressed
on the delta-method ones; a good match shows up as a high R^2 and an
intercept near zero.  Takes about half a minute.
"""

from pathlib import Path

import numpy as np

from deltaboot import bootstrap, compare, netcore, plots, trainer
from deltaboot.data import gen_synthetic
from deltaboot.delta import LowRankPredictor, OpgOperator, lanczos_topk

train = gen_synthetic(classes=3, per_class=150, dim=8, separation=2.5, seed=0)
test = gen_synthetic(classes=3, per_class=40, dim=8, separation=2.5, seed=0, stream=1)
spec = netcore.dense_spec(8, [24], 3, reg_rate=0.01)
cfg = trainer.TrainConfig(batch_size=90, schedule=((0, 3e-3), (1200, 3e-4), (1400, 3e-5)), total_steps=1500)

# delta method: one network, one decomposition
net, stats = trainer.train(spec, train, test, cfg, trainer.SeedPolicy(trainer.DRWI, 100))
print(f"delta net: train acc {stats.train_accuracy:.3f}, test acc {stats.test_accuracy:.3f}, "
      f"|grad| {stats.grad_norm:.2e}")
op = OpgOperator.from_network(spec, net, train)
K = 150
pairs = lanczos_topk(op, K, tol=1e-8)
u = LowRankPredictor.from_network(spec, net, test.inputs, pairs, len(train)).sigma(K)
print(f"P={spec.num_params}, K={K}, max eps {u.epsilon.max():.2e}")

# bootstrap: B networks on resampled indices
B = 16
idx = bootstrap.make_resamples(len(train), B, seed=0)
ensemble = bootstrap.train_ensemble(spec, train, test, idx, cfg, trainer.SeedPolicy(trainer.DRWI, 0))
preds = np.stack([netcore.predict(spec, p, test.inputs) for p, _ in ensemble])
sigma_boot = bootstrap.boot_sigma(preds)
summary = trainer.format_stats_row(trainer.summarize_stats([s for _, s in ensemble]))
print("ensemble test accuracy (mean ± 2 sd):", summary["test_accuracy"])

table = compare.build_table(sigma_boot, u.sigma, u.epsilon, {"B": B, "K": K})
fit = table.regress()
print(f"sigma_boot = {fit.alpha:.4f} + {fit.beta:.4f} sigma_delta,  R^2 = {fit.r_squared:.3f}")

out = Path("out/demos")
out.mkdir(parents=True, exist_ok=True)
print("scatter plot:", plots.scatter_plot(table, out / "bootstrap_vs_delta.svg"))
