"""Delta-method uncertainty from a low-rank eigendecomposition of the OPG matrix.

The OPG matrix of a trained network is

    G = (1/N) sum_n g_n g_n^T + lam * I

where ``g_n`` is the gradient of the n-th per-example regularized cost at the
trained parameters.  Predictive standard deviations are
``sqrt(diag(F G^{-1} F^T) / N)`` for the sensitivity matrix ``F``.  ``G`` is
never formed on the low-rank path: its top ``K`` eigenpairs come from
Lanczos iteration on the matrix-free operator and the remaining spectrum is
replaced by a single floor value.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import netcore
from .errors import DenseCapError, NonConvergenceError, NotPositiveDefiniteError
from .seeding import TAG_LANCZOS, make_rng

log = logging.getLogger(__name__)

DENSE_CAP = 2000


class OpgOperator:
    """Matrix-free ``v -> (1/N) J^T (J v) + lam * v`` for a gradient matrix ``J``.

    ``grads`` may be any ``(N, P)`` array-like, including a memory map of a
    cached gradient file.  Rows are streamed in fixed-size chunks in a fixed
    order, so results are reproducible.
    """

    def __init__(self, grads, reg_rate, chunk=256):
        if grads.ndim != 2:
            raise ValueError("grads must be an (N, P) matrix")
        if reg_rate < 0:
            raise ValueError("reg_rate must be non-negative")
        self.grads = grads
        self.reg_rate = float(reg_rate)
        self.n, self.dim = grads.shape
        self.chunk = chunk

    @classmethod
    def from_network(cls, spec, params, data, batch_size=500):
        grads = netcore.per_example_grads(spec, params, data.inputs, data.labels, batch_size)
        return cls(grads, spec.reg_rate)

    def matvec(self, v):
        v = np.asarray(v, dtype=np.float64)
        acc = np.zeros_like(v)
        for s in range(0, self.n, self.chunk):
            rows = np.asarray(self.grads[s : s + self.chunk])
            acc += rows.T @ (rows @ v)
        return acc / self.n + self.reg_rate * v

    def matmat(self, V):
        """Apply the operator to every column of ``V`` (``P x k``)."""
        return self.matvec(V)

    def dense(self):
        """Explicit ``P x P`` matrix; only for small problems and tests."""
        if self.dim > DENSE_CAP:
            raise DenseCapError(f"P={self.dim} exceeds the dense cap of {DENSE_CAP}; use the low-rank path")
        J = np.asarray(self.grads)
        return J.T @ J / self.n + self.reg_rate * np.eye(self.dim)


@dataclass
class EigenPairs:
    """Eigenpairs sorted by decreasing eigenvalue; ``vectors`` is ``K x P``."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    name: str = "eigenpairs"

    def __len__(self):
        return self.values.size

    def prefix(self, k):
        if k > len(self):
            raise ValueError(f"{self.name}: requested K={k} but only {len(self)} converged pairs are available")
        return EigenPairs(self.values[:k], self.vectors[:k], self.residuals[:k], self.name)


@dataclass
class UncertaintyVector:
    """Per-class epistemic standard deviations and their approximation error."""

    sigma: np.ndarray
    epsilon: np.ndarray


def _reorthogonalize(Q, w):
    # two passes of classical Gram-Schmidt keep the basis orthogonal to fp64 precision
    for _ in range(2):
        w = w - Q.T @ (Q @ w)
    return w


def lanczos_topk(op, K, seed=0, tol=1e-8, max_iters=None, check_every=25):
    """Top ``K`` eigenpairs of a symmetric operator by Lanczos iteration.

    Full reorthogonalization is applied at every step.  When the Krylov
    space becomes invariant (``beta`` vanishes) the iteration restarts from a
    fresh random vector orthogonal to the basis, which is how repeated
    eigenvalues such as the ``lam`` floor are recovered.  A pair is
    converged when ``||G v - theta v|| <= tol * max(theta_1, 1)``; residuals
    are recomputed explicitly before returning.
    """
    P = op.dim
    if not 1 <= K <= P:
        raise ValueError(f"K must be in [1, {P}], got {K}")
    max_iters = P if max_iters is None else min(max_iters, P)
    if max_iters < K:
        raise ValueError(f"max_iters={max_iters} is smaller than K={K}")
    rng = make_rng(seed, TAG_LANCZOS)

    cap = min(max_iters, max(2 * K + 50, 64))
    Q = np.empty((cap, P))
    alpha = []
    beta = []
    q = rng.standard_normal(P)
    q /= np.linalg.norm(q)
    scale = 0.0
    m = 0
    theta = S = None
    while True:
        if m == Q.shape[0]:
            grown = np.empty((min(max_iters, 2 * Q.shape[0]), P))
            grown[:m] = Q[:m]
            Q = grown
        Q[m] = q
        w = op.matvec(q)
        a = float(q @ w)
        w = _reorthogonalize(Q[: m + 1], w)
        b = float(np.linalg.norm(w))
        alpha.append(a)
        m += 1
        scale = max(scale, abs(a) + b)

        done = m == max_iters
        if m >= K and (done or m % check_every == 0):
            theta, S = scipy.linalg.eigh_tridiagonal(np.array(alpha), np.array(beta))
            top = np.argsort(theta)[::-1][:K]
            estimate = b * np.abs(S[-1, top])
            if np.all(estimate <= tol * max(theta[top[0]], 1.0)):
                break
        if done:
            break

        if b <= 1e-10 * scale:
            # invariant subspace reached; restart orthogonally
            beta.append(0.0)
            for _ in range(3):
                q = _reorthogonalize(Q[:m], rng.standard_normal(P))
                nq = np.linalg.norm(q)
                if nq > 1e-8:
                    break
            q /= nq
        else:
            beta.append(b)
            q = w / b

    order = np.argsort(theta)[::-1][:K]
    values = theta[order]
    vectors = S[:, order].T @ Q[:m]
    # renormalize against rounding in the Ritz combination
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    residuals = np.linalg.norm(op.matmat(vectors.T).T - values[:, None] * vectors, axis=1)
    bound = tol * max(values[0], 1.0)
    ok = residuals <= bound
    log.debug("lanczos: %d iterations, max residual %.3g", m, residuals.max())
    if not ok.all():
        first_bad = int(np.argmin(ok))
        converged = EigenPairs(values[:first_bad], vectors[:first_bad], residuals[:first_bad])
        raise NonConvergenceError(
            f"{int((~ok).sum())} of {K} eigenpairs exceed residual bound {bound:.3g} after {m} iterations",
            converged=converged,
            residuals=residuals,
        )
    return EigenPairs(values, vectors, residuals)


def _sigma_from_projections(proj_sq, fnorm_sq, inv_vals, n, floor):
    head = proj_sq @ inv_vals
    complement = np.maximum(fnorm_sq - proj_sq.sum(axis=-1), 0.0)
    return np.sqrt((head + complement / floor) / n)


def sigma_delta(F, pairs, n, lambda_floor):
    """Low-rank delta-method standard deviations.

    ``F`` is a ``T x P`` sensitivity matrix or a stack ``(..., T, P)``.
    The spectrum outside the ``K`` computed eigenvectors is replaced by
    ``lambda_floor``; ``epsilon`` is the spread between the answers for the
    floors ``lambda_floor`` and ``lambda_K``, which bracket the exact value
    whenever ``lambda_floor`` is a lower bound of the spectrum.
    """
    if np.any(pairs.values <= 0):
        raise NotPositiveDefiniteError("eigenvalues must be positive")
    if lambda_floor <= 0:
        raise ValueError("lambda_floor must be positive")
    F = np.asarray(F, dtype=np.float64)
    proj_sq = np.square(F @ pairs.vectors.T)
    fnorm_sq = np.einsum("...j,...j->...", F, F)
    inv_vals = 1.0 / pairs.values
    sigma = _sigma_from_projections(proj_sq, fnorm_sq, inv_vals, n, lambda_floor)
    upper = _sigma_from_projections(proj_sq, fnorm_sq, inv_vals, n, pairs.values[-1])
    return UncertaintyVector(sigma, np.abs(sigma - upper))


def sigma_delta_exact(F, grads, reg_rate, n=None, cap=DENSE_CAP):
    """Delta-method standard deviations from the dense OPG matrix.

    Solves ``G z = f_i`` for each sensitivity row by Cholesky.
    """
    grads = np.asarray(grads, dtype=np.float64)
    P = grads.shape[1]
    if P > cap:
        raise DenseCapError(f"P={P} exceeds the dense cap of {cap}; use the low-rank path (lanczos_topk + sigma_delta)")
    n = grads.shape[0] if n is None else n
    G = grads.T @ grads / grads.shape[0] + reg_rate * np.eye(P)
    F = np.asarray(F, dtype=np.float64)
    rows = F.reshape(-1, P)
    z = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), rows.T).T
    sigma = np.sqrt(np.maximum(np.einsum("ij,ij->i", rows, z), 0.0) / n).reshape(F.shape[:-1])
    return UncertaintyVector(sigma, np.zeros_like(sigma))


class LowRankPredictor:
    """Delta-method sigmas for a fixed set of inputs at many K.

    Squared projections of every sensitivity row onto all available
    eigenvectors are computed once; each ``sigma(K)`` call reuses the first
    ``K`` of them, so a sweep over K costs one decomposition.
    """

    def __init__(self, pairs, n, reg_rate, proj_sq, fnorm_sq, name=None):
        if np.any(pairs.values <= 0):
            raise NotPositiveDefiniteError("eigenvalues must be positive")
        self.pairs = pairs
        self.n = n
        self.reg_rate = reg_rate
        self.proj_sq = proj_sq
        self.fnorm_sq = fnorm_sq
        self.name = name or pairs.name

    @classmethod
    def from_sensitivities(cls, F, pairs, n, reg_rate, name=None):
        F = np.asarray(F, dtype=np.float64)
        proj_sq = np.square(F @ pairs.vectors.T)
        return cls(pairs, n, reg_rate, proj_sq, np.einsum("...j,...j->...", F, F), name)

    @classmethod
    def from_network(cls, spec, params, inputs, pairs, n, name=None, chunk=100):
        """Build from a network without holding every sensitivity matrix at once."""
        m = len(inputs)
        proj_sq = np.empty((m, spec.num_classes, len(pairs)))
        fnorm_sq = np.empty((m, spec.num_classes))
        for s in range(0, m, chunk):
            F = netcore.sensitivities(spec, params, inputs[s : s + chunk])
            proj_sq[s : s + chunk] = np.square(F @ pairs.vectors.T)
            fnorm_sq[s : s + chunk] = np.einsum("...j,...j->...", F, F)
        return cls(pairs, n, spec.reg_rate, proj_sq, fnorm_sq, name)

    @property
    def max_k(self):
        return len(self.pairs)

    def sigma(self, K):
        if not 1 <= K <= self.max_k:
            raise ValueError(f"{self.name}: K={K} exceeds the {self.max_k} converged eigenpairs")
        proj = self.proj_sq[..., :K]
        inv_vals = 1.0 / self.pairs.values[:K]
        sigma = _sigma_from_projections(proj, self.fnorm_sq, inv_vals, self.n, self.reg_rate)
        upper = _sigma_from_projections(proj, self.fnorm_sq, inv_vals, self.n, self.pairs.values[K - 1])
        return UncertaintyVector(sigma, np.abs(sigma - upper))
