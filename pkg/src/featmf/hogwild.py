"""Lock-free parallel SGD (Hogwild!) baseline.

Every observed pair recomputes its latent vectors from the raw features, so an
epoch costs ``d * |O| * (nnz per query + nnz per target)``.  Workers write to the
shared ``P`` and ``Q`` without any synchronisation; with more than one worker
the result is intentionally nondeterministic.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ._chunks import worker_threads
from .cd import EpochReport
from .loss import _grad
from .model import objective

__all__ = ["SgdConfig", "sgd_pair_update", "hogwild_epoch"]


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    alpha: float = 0.0
    lam: float = 0.0
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be finite and > 0, got {self.learning_rate}")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be non-negative")


@njit(cache=True)
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def _sgd_pair(
    kind, P, Q, x_indptr, x_indices, x_data, z_indptr, z_indices, z_data,
    i, j, y, lr, alpha, lam, u, v,
):
    d = P.shape[0]
    for k in range(d):
        u[k] = 0.0
        v[k] = 0.0
    for e in range(x_indptr[i], x_indptr[i + 1]):
        s = x_indices[e]
        xv = x_data[e]
        for k in range(d):
            u[k] += xv * P[k, s]
    for e in range(z_indptr[j], z_indptr[j + 1]):
        t = z_indices[e]
        zv = z_data[e]
        for k in range(d):
            v[k] += zv * Q[k, t]
    yhat = 0.0
    for k in range(d):
        yhat += u[k] * v[k]
    g = _grad(kind, yhat, y)
    # u and v are the pre-update latents for both halves of the step
    for e in range(x_indptr[i], x_indptr[i + 1]):
        s = x_indices[e]
        xv = x_data[e]
        for k in range(d):
            w = P[k, s]
            P[k, s] = w - lr * (g * v[k] * xv + lam * w + alpha * _sign(w))
    for e in range(z_indptr[j], z_indptr[j + 1]):
        t = z_indices[e]
        zv = z_data[e]
        for k in range(d):
            w = Q[k, t]
            Q[k, t] = w - lr * (g * u[k] * zv + lam * w + alpha * _sign(w))
    return yhat


@njit(parallel=True, cache=True)
def _hogwild_pass(
    kind, P, Q, x_indptr, x_indices, x_data, z_indptr, z_indices, z_data,
    queries, targets, values, order, bounds, lr, alpha, lam,
):
    d = P.shape[0]
    n_chunks = bounds.shape[0] - 1
    bad = np.zeros(n_chunks, dtype=np.int64)
    ops = np.zeros(n_chunks, dtype=np.int64)
    for c in prange(n_chunks):
        u = np.empty(d)
        v = np.empty(d)
        for t in range(bounds[c], bounds[c + 1]):
            p = order[t]
            i = queries[p]
            j = targets[p]
            yhat = _sgd_pair(
                kind, P, Q, x_indptr, x_indices, x_data, z_indptr, z_indices, z_data,
                i, j, values[p], lr, alpha, lam, u, v,
            )
            if not np.isfinite(yhat):
                bad[c] += 1
            ops[c] += 2 * d * (x_indptr[i + 1] - x_indptr[i] + z_indptr[j + 1] - z_indptr[j])
    return bad.sum(), ops.sum()


def sgd_pair_update(model, X, Z, pair, cfg: SgdConfig) -> bool:
    """Apply one SGD step for ``pair = (i, j, y)``; returns False if the prediction was not finite."""
    i, j, y = pair
    d = model.dim
    yhat = _sgd_pair(
        model.loss.code, model.P, model.Q, X.indptr, X.indices, X.data, Z.indptr, Z.indices, Z.data,
        int(i), int(j), float(y), cfg.learning_rate, cfg.alpha, cfg.lam, np.empty(d), np.empty(d),
    )
    return bool(np.isfinite(yhat))


def hogwild_epoch(model, X, Z, obs, cfg: SgdConfig, workers: int = 1, epoch: int = 0) -> EpochReport:
    """One pass over the shuffled observations split across ``workers`` racing workers.

    The pair order is a fresh permutation drawn from ``(cfg.seed + epoch)``;
    objectives before and after are recomputed exactly.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    model.check_data(X, Z, obs)
    before = objective(model, X, Z, obs)
    order = np.random.default_rng(cfg.seed + epoch).permutation(len(obs))
    bounds = np.linspace(0, len(obs), workers + 1).astype(np.int64)
    with worker_threads(workers):
        t0 = time.perf_counter()
        bad, ops = _hogwild_pass(
            model.loss.code, model.P, model.Q, X.indptr, X.indices, X.data,
            Z.indptr, Z.indices, Z.data, obs.queries, obs.targets, obs.values,
            order, bounds, cfg.learning_rate, cfg.alpha, cfg.lam,
        )
        seconds = time.perf_counter() - t0
    after = objective(model, X, Z, obs)
    diverged = bool(bad) or not (np.isfinite(after) and np.isfinite(model.P).all() and np.isfinite(model.Q).all())
    return EpochReport(before, after, seconds, 0, int(ops), {"sgd": seconds}, diverged)
