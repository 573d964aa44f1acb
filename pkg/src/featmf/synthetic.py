"""Planted-model synthetic datasets for tests and benchmarks."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loss import Hyperparameters, LossKind
from .model import FactorModel, compute_latents, predict_pairs, save_model
from .sparse import FeatureMatrix, ObservationSet, save_feature_file, save_observations

__all__ = ["SyntheticSpec", "SyntheticData", "generate", "write_dataset", "FILES"]

FILES = {
    "query_features": "X.txt",
    "target_features": "Z.txt",
    "train": "train.txt",
    "test": "test.txt",
    "truth_model": "truth_model.txt",
    "truth": "truth.json",
}


@dataclass(frozen=True)
class SyntheticSpec:
    q: int = 200
    p: int = 200
    n: int = 300
    m: int = 300
    nnz: int = 5
    n_obs: int = 5000
    loss: str = "square"
    noise: float = 0.0
    seed: int = 0
    rank: int = 8
    test_fraction: float = 0.0
    target_nnz: int | None = None

    def __post_init__(self):
        LossKind(self.loss)
        if min(self.q, self.p, self.n, self.m, self.rank) < 1:
            raise ValueError("sizes must be >= 1")
        if self.n_obs < 0 or self.n_obs > self.q * self.p:
            raise ValueError(f"cannot observe {self.n_obs} of {self.q * self.p} pairs")
        if not 1 <= self.nnz <= self.n or not 1 <= self.nnz_target <= self.m:
            raise ValueError("nnz per instance must be between 1 and the feature count")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")

    @property
    def nnz_target(self) -> int:
        return self.nnz if self.target_nnz is None else self.target_nnz


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    X: FeatureMatrix
    Z: FeatureMatrix
    train: ObservationSet
    test: ObservationSet
    truth: FactorModel


def _features(rng, n_instances, n_features, nnz):
    rows = np.repeat(np.arange(n_instances), nnz)
    cols = np.concatenate([rng.choice(n_features, nnz, replace=False) for _ in range(n_instances)])
    # uniform on (0, 1] so no sampled entry is dropped as an explicit zero
    vals = 1.0 - rng.random(rows.size)
    return FeatureMatrix.from_arrays(rows, cols, vals, n_instances, n_features)


def generate(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    truth = FactorModel(
        rng.uniform(-0.5, 0.5, size=(spec.rank, spec.n)),
        rng.uniform(-0.5, 0.5, size=(spec.rank, spec.m)),
        Hyperparameters(alpha=0.0, lam=0.0, dim=spec.rank),
        spec.loss,
    )
    X = _features(rng, spec.q, spec.n, spec.nnz)
    Z = _features(rng, spec.p, spec.m, spec.nnz_target)

    flat = rng.choice(spec.q * spec.p, size=spec.n_obs, replace=False)
    qi, tj = np.divmod(flat, spec.p)
    score = predict_pairs(compute_latents(truth.P, X), compute_latents(truth.Q, Z), qi, tj)
    if LossKind(spec.loss) is LossKind.SQUARE:
        y = score + rng.normal(0.0, spec.noise, size=score.size) if spec.noise > 0 else score
    else:
        prob = 0.5 * (1.0 + np.tanh(0.5 * score))
        y = (rng.random(score.size) < prob).astype(np.float64)

    n_test = int(round(spec.test_fraction * spec.n_obs))
    test_mask = np.zeros(spec.n_obs, dtype=bool)
    test_mask[rng.permutation(spec.n_obs)[:n_test]] = True
    train = ObservationSet.from_arrays(qi[~test_mask], tj[~test_mask], y[~test_mask], spec.q, spec.p)
    test = ObservationSet.from_arrays(qi[test_mask], tj[test_mask], y[test_mask], spec.q, spec.p)
    return SyntheticData(spec, X, Z, train, test, truth)


def write_dataset(data: SyntheticData, directory) -> dict:
    """Write features, observations and the planted model; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {key: directory / name for key, name in FILES.items()}
    save_feature_file(data.X, paths["query_features"])
    save_feature_file(data.Z, paths["target_features"])
    save_observations(data.train, paths["train"])
    save_observations(data.test, paths["test"])
    save_model(data.truth, paths["truth_model"])
    sidecar = {
        "spec": dataclasses.asdict(data.spec),
        "n_queries": data.spec.q,
        "n_targets": data.spec.p,
        "truth_model": FILES["truth_model"],
        "n_train": len(data.train),
        "n_test": len(data.test),
    }
    paths["truth"].write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return paths
