"""Parallel coordinate descent over blocks of features.

Within one latent row the features are cut into disjoint blocks.  All features
of a block are updated simultaneously against a separable upper bound of the
row objective: the curvature of feature ``s`` is inflated by the per-instance
block mass ``C[i] = sum_{t in S} |X[i, t]|``, which absorbs the cross terms
between features that share an instance.  Each row runs in barrier-separated
phases (statistics, block feature updates, G refresh, prediction update); each
phase writes only worker-disjoint slots, so no locks are needed and results do
not depend on the worker count.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ._chunks import indptr_bounds, worker_threads
from .cd import EpochReport, RowStatistics, _row_stats, _tick, run_epoch
from .loss import _threshold, curvature_bound
from .model import _apply_row_delta
from .sparse import FeatureMatrix

__all__ = [
    "Partition",
    "ConflictWeights",
    "BlockLayout",
    "schedule_partition",
    "conflict_weights",
    "parallel_block_update",
    "shrinkage_eta",
    "pl2m_epoch",
    "DEFAULT_BLOCK_SIZE",
]

DEFAULT_BLOCK_SIZE = 500


@dataclass
class Partition:
    blocks: list
    block_size: int

    @property
    def order(self) -> np.ndarray:
        if not self.blocks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.blocks)


@dataclass
class ConflictWeights:
    """Per-instance mass ``C[i]`` of one feature block."""

    C: np.ndarray


def schedule_partition(n: int, block_size: int, seed=None, shuffle: bool = True) -> Partition:
    """Randomly permute ``range(n)`` and cut it into blocks of ``block_size``.

    ``shuffle=False`` keeps ascending feature order (used to line the parallel
    trainer up with the serial one).
    """
    if n < 1 or block_size < 1:
        raise ValueError("n and block_size must be >= 1")
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    else:
        order = np.arange(n)
    blocks = [order[i : i + block_size] for i in range(0, n, block_size)]
    return Partition(blocks, block_size)


def conflict_weights(S, X: FeatureMatrix) -> ConflictWeights:
    C = np.zeros(X.n_instances)
    for s in np.asarray(S, dtype=np.int64):
        rows, vals = X.col(s)
        C[rows] += np.abs(vals)
    return ConflictWeights(C)


def _segment_bounds(weights, seg_ptr, n_chunks):
    """Balanced chunk boundaries inside each segment ``seg_ptr[b]:seg_ptr[b+1]``."""
    cum = np.zeros(weights.size + 1, dtype=np.float64)
    np.cumsum(weights + 1.0, out=cum[1:])
    lo, hi = seg_ptr[:-1], seg_ptr[1:]
    frac = np.linspace(0.0, 1.0, n_chunks + 1)
    targets = cum[lo][:, None] + frac[None, :] * (cum[hi] - cum[lo])[:, None]
    bounds = np.searchsorted(cum, targets, side="left").astype(np.int64)
    bounds = np.clip(bounds, lo[:, None], hi[:, None])
    bounds[:, 0] = lo
    bounds[:, -1] = hi
    return np.maximum.accumulate(bounds, axis=1)


@dataclass
class BlockLayout:
    """Precomputed per-epoch work lists for a partition of one feature matrix.

    Feature phase: block ``b`` owns ``perm[fchunk[b, 0]:fchunk[b, -1]]`` and
    worker ``c`` the slice ``fchunk[b, c]:fchunk[b, c+1]``; ``entry_C`` holds, for
    every feature-major entry ``(i, s)``, the mass ``C[i]`` of the block of ``s``.

    G-refresh phase: the instances touched by block ``b`` are the groups
    ``gchunk[b, 0]:gchunk[b, -1]``; group ``g`` is instance ``g_inst[g]`` with
    entries ``e_feat/e_val[g_ptr[g]:g_ptr[g+1]]``.

    ``C[i]`` does not depend on the latent row, so it is built once per epoch
    and reused for every row.
    """

    perm: np.ndarray
    fchunk: np.ndarray
    entry_C: np.ndarray
    gchunk: np.ndarray
    g_inst: np.ndarray
    g_ptr: np.ndarray
    e_feat: np.ndarray
    e_val: np.ndarray

    @classmethod
    def build(cls, X: FeatureMatrix, blocks, workers: int) -> BlockLayout:
        n, q = X.n_features, X.n_instances
        sizes = np.array([len(b) for b in blocks], dtype=np.int64)
        perm = np.concatenate(blocks).astype(np.int64) if len(blocks) else np.empty(0, np.int64)
        block_ptr = np.zeros(sizes.size + 1, dtype=np.int64)
        np.cumsum(sizes, out=block_ptr[1:])
        block_of = np.full(n, -1, dtype=np.int64)
        block_of[perm] = np.repeat(np.arange(sizes.size), sizes)
        rank = np.full(n, -1, dtype=np.int64)
        rank[perm] = np.arange(perm.size)

        nnz_per_feature = np.diff(X.f_indptr)[perm].astype(np.float64)
        fchunk = _segment_bounds(nnz_per_feature, block_ptr, workers)

        cols = X.col_ids().astype(np.int64)
        rows = X.f_indices.astype(np.int64)
        entries = np.flatnonzero(block_of[cols] >= 0)
        blk = block_of[cols[entries]]
        order = np.lexsort((rank[cols[entries]], rows[entries], blk))
        sorted_entries = entries[order]
        s_blk = blk[order]
        s_row = rows[sorted_entries]
        key = s_blk * q + s_row
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]]) if key.size else np.empty(0, np.int64)
        g_ptr = np.r_[starts, key.size].astype(np.int64)
        e_val = X.f_data[sorted_entries]
        group_C = np.add.reduceat(np.abs(e_val), starts) if key.size else np.empty(0)
        group_of = np.repeat(np.arange(starts.size), np.diff(g_ptr))
        entry_C = np.zeros(X.f_data.size)
        entry_C[sorted_entries] = group_C[group_of]

        g_block = s_blk[starts] if key.size else np.empty(0, np.int64)
        gb_ptr = np.searchsorted(g_block, np.arange(sizes.size + 1)).astype(np.int64)
        gchunk = _segment_bounds(np.diff(g_ptr).astype(np.float64), gb_ptr, workers)
        return cls(
            perm=perm,
            fchunk=fchunk,
            entry_C=entry_C,
            gchunk=gchunk,
            g_inst=s_row[starts].astype(np.int32) if key.size else np.empty(0, np.int32),
            g_ptr=g_ptr,
            e_feat=cols[sorted_entries].astype(np.int32),
            e_val=np.ascontiguousarray(e_val),
        )


@njit(parallel=True, cache=True)
def _block_pass(
    w, perm, fchunk, f_indptr, f_indices, f_data, entry_C,
    gchunk, g_inst, g_ptr, e_feat, e_val, G, H, alpha, lam, delta, delta_latent,
):
    n_chunks = fchunk.shape[1] - 1
    for b in range(fchunk.shape[0]):
        # feature phase: each worker owns a slice of the block's features
        for c in prange(n_chunks):
            for t in range(fchunk[b, c], fchunk[b, c + 1]):
                s = perm[t]
                x = 0.0
                y = 0.0
                for e in range(f_indptr[s], f_indptr[s + 1]):
                    i = f_indices[e]
                    v = f_data[e]
                    x += G[i] * v
                    y += H[i] * abs(v) * entry_C[e]
                d = _threshold(x, y, w[s], alpha, lam)
                w[s] += d
                delta[s] = d
        # G refresh: each worker owns a slice of the instances the block touches
        for c in prange(n_chunks):
            for g in range(gchunk[b, c], gchunk[b, c + 1]):
                acc = 0.0
                for e in range(g_ptr[g], g_ptr[g + 1]):
                    acc += e_val[e] * delta[e_feat[e]]
                if acc != 0.0:
                    i = g_inst[g]
                    G[i] += acc * H[i]
                    delta_latent[i] += acc
    return 2 * e_val.shape[0]


def parallel_block_update(k, S, stats: RowStatistics, C: ConflictWeights, X, model, side="query", workers=1):
    """Update the features ``S`` of row ``k`` simultaneously; returns their deltas.

    Mutates the parameter row and refreshes ``stats.G`` for the block.
    """
    params = model.P if side == "query" else model.Q
    S = np.asarray(S, dtype=np.int64)
    layout = BlockLayout.build(X, [S], workers)
    # use the caller's block mass rather than the one derived from S
    layout.entry_C[:] = 0.0
    for s in S:
        lo, hi = X.f_indptr[s], X.f_indptr[s + 1]
        layout.entry_C[lo:hi] = C.C[X.f_indices[lo:hi]]
    delta = np.zeros(X.n_features)
    delta_latent = np.zeros(X.n_instances)
    with worker_threads(workers):
        _block_pass(
            params[k], layout.perm, layout.fchunk, X.f_indptr, X.f_indices, X.f_data,
            layout.entry_C, layout.gchunk, layout.g_inst, layout.g_ptr, layout.e_feat,
            layout.e_val, stats.G, stats.H, model.hyper.alpha, model.hyper.lam, delta, delta_latent,
        )
    return delta[S]


def shrinkage_eta(k, s, S, stats: RowStatistics, C: ConflictWeights, X, lam) -> float:
    """Ratio of serial to block-inflated curvature for feature ``s``; 1 means no shrinkage."""
    rows, vals = X.col(s)
    H = stats.H[rows]
    num = float(np.sum(H * vals * vals) + lam)
    den = float(np.sum(H * C.C[rows] * np.abs(vals)) + lam)
    if den == 0.0:
        raise ZeroDivisionError(f"shrinkage undefined for feature {s}: no curvature and lambda = 0")
    return num / den


def pl2m_epoch(
    model, state, X, Z, obs, block_size: int = DEFAULT_BLOCK_SIZE, workers: int = 1,
    seed: int = 0, epoch: int = 0, shuffle: bool = True, on_row=None,
) -> EpochReport:
    """One epoch of block-parallel coordinate descent.

    A fresh random partition of the features of each side is drawn from
    ``(seed + epoch, side)``.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    kind = model.loss.code
    beta = curvature_bound(model.loss)
    h = model.hyper
    scratch = {}

    def setup(view, phases):
        t0 = time.perf_counter()
        side_id = 0 if view.side == "query" else 1
        part = schedule_partition(
            view.features.n_features, block_size, seed=[seed + epoch, side_id], shuffle=shuffle
        )
        scratch["layout"] = BlockLayout.build(view.features, part.blocks, workers)
        n = view.n_instances
        scratch["G"] = np.empty(n)
        scratch["H"] = np.empty(n)
        scratch["delta_latent"] = np.empty(n)
        scratch["delta"] = np.zeros(view.features.n_features)
        scratch["bounds"] = indptr_bounds(view.indptr, workers)
        _tick(phases, "schedule", t0)

    def row_update(view, k, phases):
        lay = scratch["layout"]
        G, H, dl = scratch["G"], scratch["H"], scratch["delta_latent"]
        feats = view.features
        t0 = time.perf_counter()
        ops = _row_stats(
            kind, beta, view.indptr, view.other, view.pos, view.yhat, view.y,
            view.partner[k], scratch["bounds"], G, H,
        )
        t0 = _tick(phases, "stats", t0)
        dl[:] = 0.0
        ops += _block_pass(
            view.params[k], lay.perm, lay.fchunk, feats.f_indptr, feats.f_indices, feats.f_data,
            lay.entry_C, lay.gchunk, lay.g_inst, lay.g_ptr, lay.e_feat, lay.e_val,
            G, H, h.alpha, h.lam, scratch["delta"], dl,
        )
        t0 = _tick(phases, "blocks", t0)
        _apply_row_delta(
            view.indptr, view.other, view.pos, view.own[k], dl, view.partner[k],
            view.yhat, scratch["bounds"],
        )
        _tick(phases, "row_delta", t0)
        return ops + view.indptr[-1]

    with worker_threads(workers):
        return run_epoch(
            model, state, X, Z, obs, row_update, workers=workers, on_row=on_row, setup=setup
        )
