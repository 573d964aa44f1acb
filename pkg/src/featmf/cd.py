"""Serial coordinate-descent trainers.

``naive_cd_epoch`` sums over observed pairs for every coordinate and keeps the
predictions exact after each step; it is slow and serves as the reference.
``efficient_cd_epoch`` caches per-instance gradient / curvature sums (G, H) for
each latent row and touches every observed pair only a constant number of times
per row.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from ._chunks import indptr_bounds
from .loss import _grad, _threshold, curvature_bound
from .model import _apply_row_delta, _side, compute_latents, refresh_state, regularized_objective

__all__ = [
    "RowStatistics",
    "EpochReport",
    "compute_row_statistics",
    "naive_cd_epoch",
    "efficient_cd_epoch",
]

SIDES = ("query", "target")


@dataclass
class RowStatistics:
    """``G[i]`` is the summed loss gradient and ``H[i]`` the curvature bound for latent row ``k``."""

    k: int
    G: np.ndarray
    H: np.ndarray


@dataclass
class EpochReport:
    objective_before: float
    objective_after: float
    seconds: float
    rows_updated: int
    ops: int = 0
    phase_seconds: dict = field(default_factory=dict)
    diverged: bool = False


@njit(parallel=True, cache=True)
def _row_stats(kind, beta, indptr, other, pos, yhat, y, partner_row, bounds, G, H):
    n_chunks = bounds.shape[0] - 1
    for c in prange(n_chunks):
        for i in range(bounds[c], bounds[c + 1]):
            gsum = 0.0
            hsum = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                p = pos[e]
                v = partner_row[other[e]]
                gsum += _grad(kind, yhat[p], y[p]) * v
                hsum += v * v
            G[i] = gsum
            H[i] = beta * hsum
    return indptr[-1]


@njit(cache=True)
def _efficient_row(w, f_indptr, f_indices, f_data, G, H, alpha, lam, delta_latent):
    ops = 0
    for s in range(w.shape[0]):
        lo = f_indptr[s]
        hi = f_indptr[s + 1]
        x = 0.0
        y = 0.0
        for e in range(lo, hi):
            i = f_indices[e]
            v = f_data[e]
            x += G[i] * v
            y += H[i] * v * v
        d = _threshold(x, y, w[s], alpha, lam)
        ops += hi - lo
        if d != 0.0:
            w[s] += d
            for e in range(lo, hi):
                i = f_indices[e]
                step = f_data[e] * d
                G[i] += step * H[i]
                delta_latent[i] += step
            ops += hi - lo
    return ops


@njit(cache=True)
def _naive_row(
    kind, beta, w, f_indptr, f_indices, f_data, indptr, other, pos, yhat, y, own_row, partner_row, alpha, lam
):
    ops = 0
    for s in range(w.shape[0]):
        x = 0.0
        h = 0.0
        for e in range(f_indptr[s], f_indptr[s + 1]):
            i = f_indices[e]
            xv = f_data[e]
            for o in range(indptr[i], indptr[i + 1]):
                p = pos[o]
                v = partner_row[other[o]]
                x += _grad(kind, yhat[p], y[p]) * v * xv
                h += v * v * xv * xv
            ops += indptr[i + 1] - indptr[i]
        d = _threshold(x, beta * h, w[s], alpha, lam)
        if d != 0.0:
            w[s] += d
            for e in range(f_indptr[s], f_indptr[s + 1]):
                i = f_indices[e]
                step = f_data[e] * d
                own_row[i] += step
                for o in range(indptr[i], indptr[i + 1]):
                    yhat[pos[o]] += step * partner_row[other[o]]
                ops += indptr[i + 1] - indptr[i]
    return ops


class _SideView:
    """The arrays one half of an epoch works on (P with X and U, or Q with Z and V).

    The target half works on a target-major copy of the predictions so that its
    sweeps over observed pairs are sequential; ``sync`` writes it back.
    """

    def __init__(self, model, state, X, Z, obs, side):
        self.side = side
        self._state = state
        self._obs = obs
        self.pos = obs.positions
        if side == "query":
            self.params, self.features, self.own, self.partner = model.P, X, state.U, state.V
            self.indptr, self.other = obs.q_indptr, obs.targets
            self.yhat, self.y = state.yhat, obs.values
        else:
            self.params, self.features, self.own, self.partner = model.Q, Z, state.V, state.U
            self.indptr, self.other = obs.t_indptr, obs.t_queries
            self.yhat, self.y = state.yhat[obs.t_pos], obs.values_by_target
        self.n_instances = self.features.n_instances

    def sync(self):
        if self.side == "target":
            self._state.yhat[self._obs.t_pos] = self.yhat


def compute_row_statistics(k, state, obs, loss, side: str = "query", workers: int = 1):
    """G/H sums for latent row ``k`` from the current buffered predictions."""
    from .loss import LossKind

    loss = LossKind(loss)
    indptr, other, pos = _side(obs, side)
    partner = state.V if side == "query" else state.U
    n = indptr.size - 1
    G = np.empty(n)
    H = np.empty(n)
    _row_stats(
        loss.code, curvature_bound(loss), indptr, other, pos, state.yhat, obs.values,
        partner[k], indptr_bounds(indptr, workers), G, H,
    )
    return RowStatistics(k, G, H)


def run_epoch(model, state, X, Z, obs, row_update, *, workers=1, on_row=None, setup=None):
    """Shared epoch skeleton: every row of ``P``, refresh, every row of ``Q``, refresh.

    ``row_update(view, k, phases)`` performs one latent row and returns its
    operation count.  ``on_row(side, k)`` is called after each row with the
    buffered state current; its cost is excluded from the timings.
    """
    model.check_data(X, Z, obs)
    before = regularized_objective(model, state, obs)
    phases = {}
    ops = 0
    rows = 0
    elapsed = 0.0
    for side in SIDES:
        view = _SideView(model, state, X, Z, obs, side)
        t0 = time.perf_counter()
        if setup is not None:
            setup(view, phases)
        elapsed += time.perf_counter() - t0
        for k in range(model.dim):
            t0 = time.perf_counter()
            ops += row_update(view, k, phases)
            elapsed += time.perf_counter() - t0
            rows += 1
            if on_row is not None:
                view.sync()
                on_row(side, k)
        t0 = time.perf_counter()
        if side == "query":
            # P is final for this epoch: rebuild U exactly, predictions stay patched
            compute_latents(model.P, X, workers, out=state.U)
        else:
            refresh_state(model, X, Z, obs, workers, out=state, latents=("target",))
        dt = time.perf_counter() - t0
        phases["refresh"] = phases.get("refresh", 0.0) + dt
        elapsed += dt
    after = regularized_objective(model, state, obs)
    return EpochReport(before, after, elapsed, rows, int(ops), phases)


def _tick(phases, name, t0):
    t1 = time.perf_counter()
    phases[name] = phases.get(name, 0.0) + (t1 - t0)
    return t1


def naive_cd_epoch(model, state, X, Z, obs, on_row=None) -> EpochReport:
    """One epoch of plain coordinate descent with exact per-coordinate gradients."""
    kind = model.loss.code
    beta = curvature_bound(model.loss)
    h = model.hyper

    def row_update(view, k, phases):
        t0 = time.perf_counter()
        ops = _naive_row(
            kind, beta, view.params[k], view.features.f_indptr, view.features.f_indices,
            view.features.f_data, view.indptr, view.other, view.pos, view.yhat, view.y,
            view.own[k], view.partner[k], h.alpha, h.lam,
        )
        _tick(phases, "updates", t0)
        return ops

    return run_epoch(model, state, X, Z, obs, row_update, on_row=on_row)


def efficient_cd_epoch(model, state, X, Z, obs, on_row=None) -> EpochReport:
    """One epoch of statistic-cached coordinate descent (single-threaded)."""
    kind = model.loss.code
    beta = curvature_bound(model.loss)
    h = model.hyper
    scratch = {}

    def setup(view, phases):
        n = view.n_instances
        scratch["G"] = np.empty(n)
        scratch["H"] = np.empty(n)
        scratch["delta"] = np.empty(n)
        scratch["bounds"] = indptr_bounds(view.indptr, 1)

    def row_update(view, k, phases):
        G, H, delta = scratch["G"], scratch["H"], scratch["delta"]
        t0 = time.perf_counter()
        ops = _row_stats(
            kind, beta, view.indptr, view.other, view.pos, view.yhat, view.y,
            view.partner[k], scratch["bounds"], G, H,
        )
        t0 = _tick(phases, "stats", t0)
        delta[:] = 0.0
        ops += _efficient_row(
            view.params[k], view.features.f_indptr, view.features.f_indices,
            view.features.f_data, G, H, h.alpha, h.lam, delta,
        )
        t0 = _tick(phases, "updates", t0)
        _apply_row_delta(
            view.indptr, view.other, view.pos, view.own[k], delta, view.partner[k],
            view.yhat, scratch["bounds"],
        )
        _tick(phases, "row_delta", t0)
        return ops + view.indptr[-1]

    return run_epoch(model, state, X, Z, obs, row_update, on_row=on_row, setup=setup)
