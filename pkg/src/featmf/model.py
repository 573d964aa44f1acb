"""Feature-based factorization model: parameters, cached latents and predictions."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange

from ._chunks import indptr_bounds
from .loss import Hyperparameters, LossKind, _loss_sum, elastic_net_penalty
from .sparse import DataError, FeatureMatrix, ObservationSet, ParseError

__all__ = [
    "FactorModel",
    "LatentState",
    "init_model",
    "compute_latents",
    "predict_pair",
    "predict_pairs",
    "refresh_state",
    "apply_row_delta",
    "regularized_objective",
    "objective",
    "save_model",
    "load_model",
]

INIT_SCALE = 0.01


@dataclass(eq=False)
class FactorModel:
    """``P`` is ``d x n`` and ``Q`` is ``d x m``, both C-contiguous so row ``k`` is contiguous."""

    P: np.ndarray
    Q: np.ndarray
    hyper: Hyperparameters
    loss: LossKind

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        self.loss = LossKind(self.loss)
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[0] != self.Q.shape[0]:
            raise DataError(f"inconsistent parameter shapes {self.P.shape} and {self.Q.shape}")

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def copy(self) -> FactorModel:
        return FactorModel(self.P.copy(), self.Q.copy(), self.hyper, self.loss)

    def check_data(self, X: FeatureMatrix, Z: FeatureMatrix, obs: ObservationSet | None = None):
        if self.P.shape[1] != X.n_features:
            raise DataError(f"P has {self.P.shape[1]} columns but X has {X.n_features} features")
        if self.Q.shape[1] != Z.n_features:
            raise DataError(f"Q has {self.Q.shape[1]} columns but Z has {Z.n_features} features")
        if obs is not None:
            if obs.n_queries != X.n_instances or obs.n_targets != Z.n_instances:
                raise DataError(
                    f"observations are {obs.n_queries}x{obs.n_targets} but features describe "
                    f"{X.n_instances} queries and {Z.n_instances} targets"
                )
            obs.check_labels(self.loss)


@dataclass(eq=False)
class LatentState:
    """``U = P X`` (``d x q``), ``V = Q Z`` (``d x p``) and predictions for every observed pair.

    ``yhat`` follows the canonical (query-major) order of the observation set.
    """

    U: np.ndarray
    V: np.ndarray
    yhat: np.ndarray


def init_model(dims, hyper: Hyperparameters, loss, seed) -> FactorModel:
    """Random model with entries i.i.d. uniform in [-0.01, 0.01]."""
    d, n, m = dims
    if min(d, n, m) < 1:
        raise ValueError(f"dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    P = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(d, n))
    Q = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(d, m))
    return FactorModel(P, Q, hyper, LossKind(loss))


@njit(parallel=True, cache=True)
def _latents_t(Pt, indptr, indices, data, bounds, out_t):
    # Pt is n x d and out_t is q x d so every inner loop is contiguous
    d = Pt.shape[1]
    for c in prange(bounds.shape[0] - 1):
        for i in range(bounds[c], bounds[c + 1]):
            for k in range(d):
                out_t[i, k] = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                s = indices[e]
                v = data[e]
                for k in range(d):
                    out_t[i, k] += v * Pt[s, k]


@njit(parallel=True, cache=True)
def _predict_t(Ut, Vt, qi, tj, bounds, out):
    d = Ut.shape[1]
    for c in prange(bounds.shape[0] - 1):
        for p in range(bounds[c], bounds[c + 1]):
            i = qi[p]
            j = tj[p]
            acc = 0.0
            for k in range(d):
                acc += Ut[i, k] * Vt[j, k]
            out[p] = acc


@njit(parallel=True, cache=True)
def _apply_row_delta(indptr, other, pos, own_row, delta, other_row, yhat, bounds):
    for c in prange(bounds.shape[0] - 1):
        for i in range(bounds[c], bounds[c + 1]):
            du = delta[i]
            if du != 0.0:
                own_row[i] += du
                for e in range(indptr[i], indptr[i + 1]):
                    yhat[pos[e]] += du * other_row[other[e]]


def compute_latents(P, X: FeatureMatrix, workers: int = 1, out=None) -> np.ndarray:
    """``U[k, i] = sum_s P[k, s] * X[i, s]`` over the nonzeros of ``X``."""
    P = np.ascontiguousarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != X.n_features:
        raise DataError(f"P of shape {P.shape} does not match {X.n_features} features")
    out_t = np.empty((X.n_instances, P.shape[0]))
    _latents_t(np.ascontiguousarray(P.T), X.indptr, X.indices, X.data, indptr_bounds(X.indptr, workers), out_t)
    if out is None:
        return np.ascontiguousarray(out_t.T)
    out[...] = out_t.T
    return out


def predict_pair(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DataError("latent vectors differ in length")
    return float(u @ v)


def predict_pairs(U, V, queries, targets, workers: int = 1, out=None) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if out is None:
        out = np.empty(queries.size)
    bounds = np.linspace(0, queries.size, workers + 1).astype(np.int64)
    _predict_t(np.ascontiguousarray(U.T), np.ascontiguousarray(V.T), queries, targets, bounds, out)
    return out


def refresh_state(
    model: FactorModel, X, Z, obs, workers: int = 1, out: LatentState | None = None,
    latents=("query", "target"),
):
    """Recompute ``U``, ``V`` and the buffered predictions from scratch.

    With ``out`` the buffers of an existing state are overwritten in place;
    ``latents`` then selects which of ``U``/``V`` are rebuilt before predicting.
    """
    model.check_data(X, Z, obs)
    if out is None:
        out = LatentState(
            np.empty((model.dim, X.n_instances)),
            np.empty((model.dim, Z.n_instances)),
            np.empty(len(obs)),
        )
        latents = ("query", "target")
    if "query" in latents:
        compute_latents(model.P, X, workers, out=out.U)
    if "target" in latents:
        compute_latents(model.Q, Z, workers, out=out.V)
    predict_pairs(out.U, out.V, obs.queries, obs.targets, workers, out=out.yhat)
    return out


def _side(obs: ObservationSet, side: str):
    if side == "query":
        return obs.q_indptr, obs.targets, obs.positions
    if side == "target":
        return obs.t_indptr, obs.t_queries, obs.t_pos
    raise ValueError(f"unknown side {side!r}")


def apply_row_delta(state: LatentState, k: int, delta, obs, side: str = "query", workers: int = 1):
    """Add ``delta`` to row ``k`` of ``U`` (or ``V``) and patch the affected predictions."""
    indptr, other, pos = _side(obs, side)
    own, partner = (state.U, state.V) if side == "query" else (state.V, state.U)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    _apply_row_delta(
        indptr, other, pos, own[k], delta, partner[k], state.yhat, indptr_bounds(indptr, workers)
    )


def regularized_objective(model: FactorModel, state: LatentState, obs: ObservationSet) -> float:
    """Total loss over the observed pairs plus the elastic-net penalty of ``P`` and ``Q``."""
    h = model.hyper
    loss = _loss_sum(model.loss.code, state.yhat, obs.values)
    return float(
        loss + elastic_net_penalty(model.P, h.alpha, h.lam) + elastic_net_penalty(model.Q, h.alpha, h.lam)
    )


def objective(model: FactorModel, X, Z, obs) -> float:
    """Regularized objective evaluated from the parameters alone."""
    return regularized_objective(model, refresh_state(model, X, Z, obs), obs)


def save_model(model: FactorModel, path) -> None:
    d, n = model.P.shape
    m = model.Q.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"FMF {d} {n} {m} {model.loss.value}\n")
        for row in model.P:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for row in model.Q:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_model(path, hyper: Hyperparameters | None = None) -> FactorModel:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty model file", path, 1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != "FMF":
        raise ParseError("bad model header", path, 1)
    try:
        d, n, m = (int(t) for t in head[1:4])
        loss = LossKind(head[4])
    except ValueError:
        raise ParseError("bad model header", path, 1) from None
    if len(lines) < 1 + 2 * d:
        raise ParseError(f"expected {2 * d} parameter rows", path, len(lines))

    def rows(start, count, width):
        out = np.empty((count, width))
        for r in range(count):
            lineno = start + r + 1
            try:
                values = [float(t) for t in lines[start + r].split()]
            except ValueError:
                raise ParseError("malformed parameter", path, lineno) from None
            if len(values) != width:
                raise ParseError(f"expected {width} values", path, lineno)
            out[r] = values
        return out

    P = rows(1, d, n)
    Q = rows(1 + d, d, m)
    if hyper is None:
        hyper = Hyperparameters(dim=d)
    elif hyper.dim != d:
        hyper = dataclasses.replace(hyper, dim=d)
    return FactorModel(P, Q, hyper, loss)
