"""Timing matrix over (algorithm, threads) cells."""
from __future__ import annotations

import numpy as np

from .loss import Hyperparameters
from .model import init_model
from .parallel import DEFAULT_BLOCK_SIZE
from .synthetic import SyntheticSpec, generate
from .train import Trainer

__all__ = ["run_bench", "warm_up"]


def warm_up(algorithms, loss, threads=(1,)):
    """Run every algorithm once on a toy problem so compilation is not timed."""
    data = generate(SyntheticSpec(q=20, p=20, n=30, m=30, nnz=3, n_obs=100, loss=loss, seed=0))
    hyper = Hyperparameters(alpha=0.1, lam=1.0, dim=2)
    for algorithm in algorithms:
        for t in sorted(set(threads)):
            model = init_model((2, 30, 30), hyper, loss, 0)
            Trainer(algorithm, model, data.X, data.Z, data.train, threads=t, block_size=8).epoch(0)


def run_bench(
    X, Z, obs, algorithms, threads, epochs: int, hyper: Hyperparameters, loss,
    block_size: int = DEFAULT_BLOCK_SIZE, lr: float = 0.01, seed: int = 0, warmup: bool = True,
) -> dict:
    """Train a fresh model per cell and collect per-epoch wall time and operation counts.

    ``speedup`` of a cell is the mean epoch time of the same algorithm at one
    thread divided by its own (``None`` when the 1-thread cell was not run).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if warmup:
        warm_up(algorithms, loss, threads)
    cells = []
    for algorithm in algorithms:
        for t in threads:
            model = init_model((hyper.dim, X.n_features, Z.n_features), hyper, loss, seed)
            trainer = Trainer(algorithm, model, X, Z, obs, threads=t, block_size=block_size, lr=lr, seed=seed)
            seconds, ops, objectives, phases = [], [], [], {}
            for e in range(epochs):
                r = trainer.epoch(e)
                seconds.append(r.seconds)
                ops.append(r.ops)
                objectives.append(r.objective_after)
                for name, v in r.phase_seconds.items():
                    phases[name] = phases.get(name, 0.0) + v
            cells.append({
                "algorithm": algorithm,
                "threads": int(t),
                "epoch_seconds": seconds,
                "mean_seconds": float(np.mean(seconds)),
                "ops": ops,
                "objective": objectives,
                "phase_seconds": phases,
            })
    base = {c["algorithm"]: c["mean_seconds"] for c in cells if c["threads"] == 1}
    for c in cells:
        ref = base.get(c["algorithm"])
        c["speedup"] = ref / c["mean_seconds"] if ref is not None and c["mean_seconds"] > 0 else None
    return {
        "dataset": {
            "n_queries": X.n_instances, "n_targets": Z.n_instances,
            "n_query_features": X.n_features, "n_target_features": Z.n_features,
            "n_observations": len(obs),
        },
        "dim": hyper.dim, "alpha": hyper.alpha, "lambda": hyper.lam, "loss": str(getattr(loss, "value", loss)),
        "block_size": block_size, "epochs": epochs,
        "cells": cells,
    }
