"""Deterministic Adam training with piecewise-constant learning rates."""
from __future__ import annotations

import bisect
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import netcore
from .errors import TrainingAborted
from .seeding import TAG_INIT, make_rng

log = logging.getLogger(__name__)

SRWI = "SRWI"
DRWI = "DRWI"

#: Learning-rate schedules of the full-scale MNIST and CIFAR-10 runs.
MNIST_SCHEDULE = ((0, 1e-3), (60_000, 1e-4), (70_000, 1e-5), (80_000, 1e-6))
MNIST_STEPS = 90_000
CIFAR_SCHEDULE = ((0, 1e-3), (55_000, 1e-4), (85_000, 1e-5), (95_000, 1e-6), (105_000, 1e-7))
CIFAR_STEPS = 115_000


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    schedule: tuple = ((0, 1e-3),)
    total_steps: int = 1000
    adam: tuple = (0.9, 0.999, 1e-8)
    init_stddev: float = 0.05
    grad_norm_warn: float = 0.05

    def __post_init__(self):
        schedule = tuple((int(s), float(r)) for s, r in self.schedule)
        object.__setattr__(self, "schedule", schedule)
        object.__setattr__(self, "adam", tuple(float(a) for a in self.adam))
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not schedule or schedule[0][0] != 0:
            raise ValueError("schedule must start at step 0")
        steps = [s for s, _ in schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("schedule steps must be strictly increasing")
        if any(r <= 0 for _, r in schedule):
            raise ValueError("learning rates must be positive")
        if self.total_steps < 0 or self.total_steps < steps[-1]:
            raise ValueError("total_steps must be >= the last schedule step")
        if self.init_stddev <= 0 or self.grad_norm_warn <= 0:
            raise ValueError("init_stddev and grad_norm_warn must be positive")
        if len(self.adam) != 3:
            raise ValueError("adam must be (beta1, beta2, eps_hat)")

    def rate_at(self, step):
        """Rate of the last schedule pair whose step is <= ``step``."""
        steps = [s for s, _ in self.schedule]
        return self.schedule[bisect.bisect_right(steps, step) - 1][1]


@dataclass(frozen=True)
class SeedPolicy:
    mode: str = DRWI
    base_seed: int = 0

    def __post_init__(self):
        if self.mode not in (SRWI, DRWI):
            raise ValueError(f"unknown seed policy {self.mode!r}")

    def init_seed(self, replicate):
        return self.base_seed if self.mode == SRWI else self.base_seed + replicate


@dataclass
class TrainingStats:
    train_accuracy: float
    test_accuracy: float
    final_cost: float
    grad_norm: float
    steps_run: int
    wall_time: float
    converged: bool = True
    clamped_examples: int = 0

    def to_dict(self, with_time=True):
        d = {
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "final_cost": self.final_cost,
            "grad_norm": self.grad_norm,
            "steps_run": self.steps_run,
            "converged": self.converged,
            "clamped_examples": self.clamped_examples,
        }
        if with_time:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def init_params(spec, seed, stddev):
    """Normal(0, stddev^2) weights and zero biases, keyed by ``seed``."""
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    values = make_rng(seed, TAG_INIT).normal(0.0, stddev, spec.num_params)
    values[spec.bias_mask()] = 0.0
    return spec.params(values)


def adam_step(state, params, grad, rate, betas=(0.9, 0.999), eps_hat=1e-8):
    """One Adam update with bias correction folded into the step size.

    Uses the ``eps_hat`` formulation::

        lr_t = rate * sqrt(1 - b2^t) / (1 - b1^t)
        w   -= lr_t * m / (sqrt(v) + eps_hat)
    """
    b1, b2 = betas
    values = params.values if isinstance(params, netcore.ParamVector) else np.asarray(params)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape or values.shape != state.m.shape:
        raise ValueError("Adam state, parameters and gradient must have matching shapes")
    t = state.t + 1
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise TrainingAborted(f"non-finite gradient component {bad}", step=t)
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    lr_t = rate * math.sqrt(1 - b2**t) / (1 - b1**t)
    new_values = values - lr_t * m / (np.sqrt(v) + eps_hat)
    new_state = AdamState(m, v, t)
    if isinstance(params, netcore.ParamVector):
        return new_state, netcore.ParamVector(new_values, params.offsets)
    return new_state, new_values


def _gather(data, indices):
    return data if indices is None else data.subset(indices)


def train(spec, data, test, cfg, seed_policy, replicate=0, indices=None, on_step=None, init=None):
    """Train one network with minibatches taken in fixed dataset order.

    ``indices`` turns ``data`` into the virtual dataset ``data[indices]``
    (bootstrap replicates).  Batches cycle through it without shuffling; the
    last short batch is used as is.  ``on_step(step, rate)`` is called before
    every update.
    """
    start = time.perf_counter()
    if init is None:
        init = init_params(spec, seed_policy.init_seed(replicate), cfg.init_stddev)
    values = init.values.copy()
    order = np.arange(len(data)) if indices is None else np.asarray(indices)
    n = order.size
    n_batches = -(-n // cfg.batch_size)
    b1, b2, eps_hat = cfg.adam
    state = AdamState.fresh(spec.num_params)
    for step in range(cfg.total_steps):
        rate = cfg.rate_at(step)
        if on_step is not None:
            on_step(step, rate)
        k = step % n_batches
        idx = order[k * cfg.batch_size : (k + 1) * cfg.batch_size]
        c, grad = netcore.cost_and_grad(spec, values, data.inputs[idx], data.labels[idx])
        if not math.isfinite(c):
            raise TrainingAborted("non-finite cost", step=step, replicate=replicate)
        try:
            state, values = adam_step(state, values, grad, rate, (b1, b2), eps_hat)
        except TrainingAborted as exc:
            raise TrainingAborted("non-finite gradient", step=step, replicate=replicate) from exc

    params = spec.params(values)
    train_data = _gather(data, indices)
    final_cost, clamped = netcore.cost_details(spec, params, train_data)
    grad_norm = float(np.linalg.norm(netcore.grad_cost(spec, params, train_data)))
    converged = grad_norm <= cfg.grad_norm_warn
    if not converged:
        log.warning("replicate %d: gradient norm %.4g exceeds %.4g", replicate, grad_norm, cfg.grad_norm_warn)
    if clamped:
        log.warning("replicate %d: %d examples hit the cross-entropy floor", replicate, clamped)
    stats = TrainingStats(
        train_accuracy=netcore.accuracy(spec, params, train_data),
        test_accuracy=netcore.accuracy(spec, params, test) if test is not None else float("nan"),
        final_cost=float(final_cost),
        grad_norm=grad_norm,
        steps_run=cfg.total_steps,
        wall_time=time.perf_counter() - start,
        converged=converged,
        clamped_examples=clamped,
    )
    return params, stats


def summarize_stats(stats):
    """``{field: (mean, 2 * sample sd)}`` across a list of TrainingStats."""
    out = {}
    for name in ("train_accuracy", "test_accuracy", "final_cost", "grad_norm"):
        vals = np.array([getattr(s, name) for s in stats], dtype=float)
        sd = vals.std(ddof=1) if vals.size > 1 else 0.0
        out[name] = (float(vals.mean()), float(2 * sd))
    return out


def format_stats_row(summary, digits=3):
    """Render a summary as ``mean ± 2sd`` cells."""
    return {k: f"{m:.{digits}f} ± {s:.{digits}f}" for k, (m, s) in summary.items()}
