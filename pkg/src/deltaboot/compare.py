"""Regression of bootstrap sigmas onto delta-method sigmas, and sweeps over K and B.

One regression pools every (test example, class) pair:

    sigma_boot[n, m] = alpha + beta * sigma_delta[n, m] + e[n, m]
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import boot_sigma
from .errors import DegenerateRegressorError, InsufficientDataError, InsufficientReplicatesError

CSV_HEADER = ("n", "m", "sigma_boot", "sigma_delta", "epsilon")


@dataclass
class RegressionResult:
    alpha: float
    beta: float
    r_squared: float
    n_points: int
    max_epsilon: float = 0.0

    def to_dict(self):
        return asdict(self)


def ols(x, y, epsilon=None):
    """Least-squares fit of ``y`` on ``x``; ``R^2`` is the squared correlation."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if x.size < 2:
        raise InsufficientDataError(f"insufficient data: need at least 2 points, got {x.size}")
    if np.ptp(x) == 0:
        raise DegenerateRegressorError("degenerate regressor: x has zero variance")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx, sxy, syy = dx @ dx, dx @ dy, dy @ dy
    beta = sxy / sxx
    alpha = ym - beta * xm
    # constant y is fitted exactly by a zero slope
    r2 = 1.0 if syy == 0 else min(max(sxy * sxy / (sxx * syy), 0.0), 1.0)
    max_eps = float(np.max(epsilon)) if epsilon is not None and np.size(epsilon) else 0.0
    return RegressionResult(float(alpha), float(beta), float(r2), int(x.size), max_eps)


@dataclass
class UncertaintyTable:
    n: np.ndarray
    m: np.ndarray
    sigma_boot: np.ndarray
    sigma_delta: np.ndarray
    epsilon: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.n.size

    def regress(self):
        return ols(self.sigma_delta, self.sigma_boot, self.epsilon)


def build_table(boot_sigmas, delta_sigmas, epsilon=None, meta=None):
    """Pair ``(N_test, T)`` arrays of sigmas into one row per (example, class)."""
    sb = np.asarray(boot_sigmas, dtype=np.float64)
    sd = np.asarray(delta_sigmas, dtype=np.float64)
    eps = np.zeros_like(sd) if epsilon is None else np.asarray(epsilon, dtype=np.float64)
    if sb.shape != sd.shape or sd.shape != eps.shape or sb.ndim != 2:
        raise ValueError(f"sigma arrays must share one (N_test, T) shape: {sb.shape}, {sd.shape}, {eps.shape}")
    n_test, t = sb.shape
    n_idx, m_idx = np.divmod(np.arange(n_test * t), t)
    return UncertaintyTable(n_idx, m_idx, sb.ravel(), sd.ravel(), eps.ravel(), dict(meta or {}))


def write_table(table, path):
    """CSV with one leading ``# {json metadata}`` line, then the header row."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(table.meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(table.n, table.m, table.sigma_boot, table.sigma_delta, table.epsilon):
            w.writerow((int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3])), repr(float(row[4]))))
    return path


def read_table(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata line")
        meta = json.loads(first[2:])
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * 5
    return UncertaintyTable(
        np.array(cols[0], dtype=np.int64),
        np.array(cols[1], dtype=np.int64),
        np.array(cols[2], dtype=np.float64),
        np.array(cols[3], dtype=np.float64),
        np.array(cols[4], dtype=np.float64),
        meta,
    )


def band(values):
    """``(mean, mean - 2 sd, mean + 2 sd)`` with the sample sd; zero width for one value."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, mean - 2 * sd, mean + 2 * sd


@dataclass
class SweepPoint:
    value: int
    regressions: list

    @property
    def r_squared(self):
        return band([r.r_squared for r in self.regressions])

    @property
    def beta(self):
        return band([r.beta for r in self.regressions])

    @property
    def alpha(self):
        return band([r.alpha for r in self.regressions])

    @property
    def max_epsilon(self):
        return max(r.max_epsilon for r in self.regressions)

    def to_dict(self):
        return {
            "value": self.value,
            "r_squared": dict(zip(("mean", "lo", "hi"), self.r_squared)),
            "beta": dict(zip(("mean", "lo", "hi"), self.beta)),
            "alpha": dict(zip(("mean", "lo", "hi"), self.alpha)),
            "max_epsilon": self.max_epsilon,
            "repetitions": [r.to_dict() for r in self.regressions],
        }


@dataclass
class SweepSummary:
    axis: str
    points: list
    fixed: dict = field(default_factory=dict)

    def values(self):
        return [p.value for p in self.points]

    def to_dict(self):
        return {"axis": self.axis, "fixed": self.fixed, "points": [p.to_dict() for p in self.points]}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def sweep_K(predictors, sigma_boot, K_values, B=None):
    """Regress ``sigma_boot`` on each repetition's delta sigmas at every K.

    ``predictors`` holds one object per delta repetition exposing
    ``sigma(K)`` (see :class:`deltaboot.delta.LowRankPredictor`), so every K
    reuses a prefix of a single decomposition.
    """
    points = []
    for K in sorted(K_values):
        regs = []
        for pred in predictors:
            u = pred.sigma(K)
            regs.append(ols(u.sigma, sigma_boot, u.epsilon))
        points.append(SweepPoint(int(K), regs))
    return SweepSummary("K", points, {"B": B})


def sweep_B(ensemble_preds, delta_sigmas, B_values, K=None):
    """Regress the sigma of the first B replicates on each repetition's delta sigmas.

    ``ensemble_preds`` is ``(B_max, N_test, T)``; ``delta_sigmas`` is a list
    of :class:`deltaboot.delta.UncertaintyVector`, one per repetition.
    """
    ensemble_preds = np.asarray(ensemble_preds)
    points = []
    for B in sorted(B_values):
        if B < 2:
            raise InsufficientReplicatesError(f"insufficient replicates: B={B}")
        if B > ensemble_preds.shape[0]:
            raise ValueError(f"B={B} exceeds the ensemble size {ensemble_preds.shape[0]}")
        sb = boot_sigma(ensemble_preds[:B])
        regs = [ols(u.sigma, sb, u.epsilon) for u in delta_sigmas]
        points.append(SweepPoint(int(B), regs))
    return SweepSummary("B", points, {"K": K})
