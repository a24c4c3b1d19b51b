"""Bootstrap ensembles: resampling, replicate training and ensemble statistics."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import trainer
from .errors import InsufficientReplicatesError, TrainingAborted
from .seeding import TAG_RESAMPLE, make_rng

log = logging.getLogger(__name__)


def make_resamples(n, b, seed):
    """``b x n`` table of indices drawn uniformly with replacement from ``[0, n)``.

    Row ``r`` comes from its own stream keyed by ``(seed, r)``, so a row
    does not depend on how many rows were requested.
    """
    if n < 1 or b < 1:
        raise ValueError("n and b must be positive")
    return np.stack([make_rng(seed, TAG_RESAMPLE, r).integers(0, n, n) for r in range(b)])


def _train_replicate(args):
    spec, data, test, row, cfg, policy, r = args
    try:
        return trainer.train(spec, data, test, cfg, policy, replicate=r, indices=row)
    except TrainingAborted as exc:
        if exc.replicate is None:
            exc.replicate = r
        raise


def train_ensemble(spec, data, test, idx, cfg, policy, workers=1, on_done=None):
    """Train one network per resample row; returns ``[(params, stats), ...]``.

    Replicate ``r`` trains on ``data[idx[r]]`` from the initialization
    chosen by ``policy`` (shared under SRWI, ``base_seed + r`` under DRWI).
    Each replicate is independent, so ``workers > 1`` yields the same models.
    """
    idx = np.asarray(idx)
    if idx.ndim != 2 or idx.shape[1] != len(data):
        raise ValueError(f"resample table must be B x {len(data)}, got {idx.shape}")
    jobs = [(spec, data, test, idx[r], cfg, policy, r) for r in range(idx.shape[0])]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for r, res in enumerate(pool.map(_train_replicate, jobs)):
                results.append(res)
                if on_done:
                    on_done(r, *res)
    else:
        for r, job in enumerate(jobs):
            res = _train_replicate(job)
            log.info("replicate %d: grad norm %.3g", r, res[1].grad_norm)
            results.append(res)
            if on_done:
                on_done(r, *res)
    return results


def boot_mean(preds):
    """Mean over replicates (axis 0) of stacked probability predictions."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[0] < 1:
        raise InsufficientReplicatesError("need at least one replicate")
    # shifting by the first replicate makes a constant ensemble reproduce its row exactly
    return preds[0] + (preds - preds[0]).mean(axis=0)


def boot_sigma(preds):
    """Sample standard deviation over replicates with the ``B - 1`` divisor."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[0] < 2:
        raise InsufficientReplicatesError(f"insufficient replicates: need B >= 2, got {preds.shape[0]}")
    dev = preds - preds[0]
    dev -= dev.mean(axis=0)
    return np.sqrt(np.sum(dev * dev, axis=0) / (preds.shape[0] - 1))
