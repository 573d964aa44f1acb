"""Epoch driver shared by the command line and the benchmark harness."""
from __future__ import annotations

import numpy as np

from .cd import efficient_cd_epoch, naive_cd_epoch
from .hogwild import SgdConfig, hogwild_epoch
from .loss import _loss_sum
from .metrics import map_at_k, rank_queries, rmse
from .model import compute_latents, predict_pairs, refresh_state
from .parallel import DEFAULT_BLOCK_SIZE, pl2m_epoch

__all__ = ["ALGORITHMS", "Trainer", "NumericalError", "train_loss", "test_metric"]

ALGORITHMS = ("naive", "efficient", "pl2m", "hogwild")


class NumericalError(ArithmeticError):
    pass


class Trainer:
    """Runs epochs of one algorithm on a fixed dataset, keeping whatever state it needs."""

    def __init__(
        self, algorithm, model, X, Z, obs, threads=1, block_size=DEFAULT_BLOCK_SIZE, lr=0.01, seed=0
    ):
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
        if threads < 1:
            raise ValueError("threads must be >= 1")
        model.check_data(X, Z, obs)
        self.algorithm = algorithm
        self.model, self.X, self.Z, self.obs = model, X, Z, obs
        self.threads = threads
        self.block_size = block_size
        self.seed = seed
        self.sgd = None
        self.state = None
        if algorithm == "hogwild":
            h = model.hyper
            self.sgd = SgdConfig(learning_rate=lr, alpha=h.alpha, lam=h.lam, seed=seed)
        else:
            self.state = refresh_state(model, X, Z, obs, threads)

    def epoch(self, e: int):
        m, X, Z, obs = self.model, self.X, self.Z, self.obs
        if self.algorithm == "naive":
            report = naive_cd_epoch(m, self.state, X, Z, obs)
        elif self.algorithm == "efficient":
            report = efficient_cd_epoch(m, self.state, X, Z, obs)
        elif self.algorithm == "pl2m":
            report = pl2m_epoch(
                m, self.state, X, Z, obs, block_size=self.block_size, workers=self.threads,
                seed=self.seed, epoch=e,
            )
        else:
            report = hogwild_epoch(m, X, Z, obs, self.sgd, workers=self.threads, epoch=e)
        if report.diverged or not np.isfinite(report.objective_after):
            raise NumericalError(f"{self.algorithm} produced a non-finite objective in epoch {e}")
        return report


def train_loss(model, X, Z, obs) -> float:
    """Mean unregularized loss over ``obs``."""
    if len(obs) == 0:
        return 0.0
    yhat = predict_pairs(compute_latents(model.P, X), compute_latents(model.Q, Z), obs.queries, obs.targets)
    return float(_loss_sum(model.loss.code, yhat, obs.values)) / len(obs)


def test_metric(model, X, Z, obs, K: int = 10):
    """RMSE for square loss, MAP@K over each query's test pairs for logistic loss.

    ``None`` when there is nothing to score.
    """
    if obs is None or len(obs) == 0:
        return None
    yhat = predict_pairs(compute_latents(model.P, X), compute_latents(model.Q, Z), obs.queries, obs.targets)
    if model.loss.value == "square":
        return rmse(yhat, obs.values)
    results = rank_queries(obs.queries, obs.targets, yhat, obs.values)
    if not any(r.relevant for r in results):
        return None
    return map_at_k(results, K)

