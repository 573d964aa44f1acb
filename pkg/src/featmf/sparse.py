"""Sparse feature matrices and observation sets.

Both containers keep two orientations of the same entries so that trainers can
sweep either by instance (rows) or by feature / target (columns) without
transposing on the fly.  They are immutable once built.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "ParseError",
    "FeatureMatrix",
    "ObservationSet",
    "from_triplets",
    "identity_features",
    "load_feature_file",
    "save_feature_file",
    "load_observations",
    "save_observations",
]

# indices are stored as int32
MAX_ID = 2**31 - 1


class DataError(ValueError):
    """Raised for inconsistent input data (bad ids, duplicates, shapes)."""


class ParseError(DataError):
    """Raised when a text file cannot be parsed; carries the 1-based line number."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where += f"{path}: "
        super().__init__(f"{where}{message}" + (f", line {lineno}" if lineno else ""))


def _compress(major, minor, n_major):
    """Sort entries by (major, minor) and build an indptr over ``major``."""
    order = np.lexsort((minor, major))
    counts = np.bincount(major, minlength=n_major)
    indptr = np.zeros(n_major + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order


def _check_pairs(rows, cols, n_rows, n_cols, what):
    if rows.size == 0:
        return
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"{what} id out of range: ({rows[k]}, {cols[k]}) for shape ({n_rows}, {n_cols})"
        )


def _check_duplicates(rows_sorted, cols_sorted, what):
    if rows_sorted.size < 2:
        return
    dup = (rows_sorted[1:] == rows_sorted[:-1]) & (cols_sorted[1:] == cols_sorted[:-1])
    if dup.any():
        k = int(np.flatnonzero(dup)[0])
        raise DataError(f"duplicate {what} entry ({rows_sorted[k]}, {cols_sorted[k]})")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Sparse ``n_instances x n_features`` matrix with row and column access.

    ``indptr/indices/data`` is the instance-major (CSR) layout and
    ``f_indptr/f_indices/f_data`` the feature-major (CSC) layout.  Within every
    row (column) the minor ids are strictly increasing.
    """

    n_instances: int
    n_features: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    f_indptr: np.ndarray
    f_indices: np.ndarray
    f_data: np.ndarray

    @classmethod
    def from_arrays(cls, rows, cols, values, n_instances, n_features) -> FeatureMatrix:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (rows.size == cols.size == values.size):
            raise DataError("rows, cols and values must have the same length")
        if n_instances < 0 or n_features < 0:
            raise DataError("negative matrix dimension")
        if n_instances > MAX_ID or n_features > MAX_ID:
            raise DataError("matrix dimension exceeds id range")
        _check_pairs(rows, cols, n_instances, n_features, "feature")
        if not np.all(np.isfinite(values)):
            raise DataError("non-finite feature value")

        indptr, order = _compress(rows, cols, n_instances)
        r, c, v = rows[order], cols[order], values[order]
        _check_duplicates(r, c, "feature")
        keep = v != 0.0
        if not keep.all():
            r, c, v = r[keep], c[keep], v[keep]
            indptr = np.zeros(n_instances + 1, dtype=np.int64)
            np.cumsum(np.bincount(r, minlength=n_instances), out=indptr[1:])

        f_indptr, f_order = _compress(c, r, n_features)
        return cls(
            n_instances=int(n_instances),
            n_features=int(n_features),
            indptr=indptr,
            indices=c.astype(np.int32),
            data=np.ascontiguousarray(v),
            f_indptr=f_indptr,
            f_indices=r[f_order].astype(np.int32),
            f_data=np.ascontiguousarray(v[f_order]),
        )

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @property
    def shape(self):
        return (self.n_instances, self.n_features)

    def row(self, i):
        """Feature ids and values of instance ``i``."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def col(self, s):
        """Instance ids and values of feature ``s``."""
        lo, hi = self.f_indptr[s], self.f_indptr[s + 1]
        return self.f_indices[lo:hi], self.f_data[lo:hi]

    @property
    def instance_major(self) -> list[list[tuple[int, float]]]:
        return [
            [(int(s), float(v)) for s, v in zip(*self.row(i))] for i in range(self.n_instances)
        ]

    @property
    def feature_major(self) -> list[list[tuple[int, float]]]:
        return [
            [(int(i), float(v)) for i, v in zip(*self.col(s))] for s in range(self.n_features)
        ]

    def row_ids(self) -> np.ndarray:
        """Instance id of every entry in the instance-major layout."""
        return np.repeat(np.arange(self.n_instances, dtype=np.int32), np.diff(self.indptr))

    def col_ids(self) -> np.ndarray:
        """Feature id of every entry in the feature-major layout."""
        return np.repeat(np.arange(self.n_features, dtype=np.int32), np.diff(self.f_indptr))

    def triplets(self) -> list[tuple[int, int, float]]:
        rows = self.row_ids()
        return [
            (int(i), int(s), float(v)) for i, s, v in zip(rows, self.indices, self.data)
        ]

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out


def from_triplets(entries, n_rows: int, n_cols: int) -> FeatureMatrix:
    """Build a :class:`FeatureMatrix` from ``(row, col, value)`` triples.

    Explicit zeros are dropped; duplicated ``(row, col)`` pairs are rejected.
    """
    entries = list(entries)
    if entries:
        rows, cols, vals = zip(*entries)
    else:
        rows, cols, vals = (), (), ()
    return FeatureMatrix.from_arrays(rows, cols, vals, n_rows, n_cols)


def identity_features(n: int) -> FeatureMatrix:
    """Indicator features: instance ``i`` has the single feature ``i`` with value 1."""
    if n < 1:
        raise DataError("identity_features needs n >= 1")
    ids = np.arange(n)
    return FeatureMatrix.from_arrays(ids, ids, np.ones(n), n, n)


def _parse_id(token, path, lineno, what):
    try:
        value = int(token)
    except ValueError:
        raise ParseError(f"malformed {what} '{token}'", path, lineno) from None
    if value < 0:
        raise ParseError(f"negative {what} {value}", path, lineno)
    if value > MAX_ID:
        raise ParseError(f"{what} overflow {value}", path, lineno)
    return value


def _parse_float(token, path, lineno):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"malformed value '{token}'", path, lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value '{token}'", path, lineno)
    return value


def load_feature_file(path, n_features: int | None = None, n_instances: int | None = None):
    """Read ``<instance_id> <fid>:<value> ...`` lines into a :class:`FeatureMatrix`.

    Without explicit sizes the matrix is just large enough for the ids seen.
    """
    path = Path(path)
    rows, cols, vals = [], [], []
    seen = set()
    max_inst, max_feat = -1, -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            inst = _parse_id(tokens[0], path, lineno, "instance id")
            if inst in seen:
                raise ParseError(f"duplicate instance id {inst}", path, lineno)
            seen.add(inst)
            max_inst = max(max_inst, inst)
            prev = -1
            for tok in tokens[1:]:
                fid_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(f"malformed token '{tok}'", path, lineno)
                fid = _parse_id(fid_s, path, lineno, "feature id")
                if fid <= prev:
                    raise ParseError("non-increasing feature id", path, lineno)
                prev = fid
                rows.append(inst)
                cols.append(fid)
                vals.append(_parse_float(val_s, path, lineno))
            max_feat = max(max_feat, prev)

    if n_instances is None:
        n_instances = max_inst + 1
    elif max_inst >= n_instances:
        raise DataError(f"{path}: instance id {max_inst} >= n_instances {n_instances}")
    if n_features is None:
        n_features = max_feat + 1
    elif max_feat >= n_features:
        raise DataError(f"{path}: feature id {max_feat} >= n_features {n_features}")
    return FeatureMatrix.from_arrays(rows, cols, vals, n_instances, n_features)


def save_feature_file(matrix: FeatureMatrix, path) -> None:
    """Write ``matrix`` in the feature-file format; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(matrix.n_instances):
            ids, values = matrix.row(i)
            parts = [str(i)]
            parts.extend(f"{int(s)}:{float(v)!r}" for s, v in zip(ids, values))
            fh.write(" ".join(parts) + "\n")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed ``(query, target, value)`` triples, grouped both ways.

    The canonical order is query-major: ``queries/targets/values`` sorted by
    ``(query, target)`` with ``q_indptr`` delimiting each query.  The
    target-major view stores, per target, the query ids and the positions
    ``t_pos`` of the same triples in the canonical arrays, so per-pair buffers
    (labels, predictions) are kept once in canonical order.
    """

    n_queries: int
    n_targets: int
    q_indptr: np.ndarray
    queries: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    t_indptr: np.ndarray
    t_queries: np.ndarray
    t_pos: np.ndarray
    positions: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, queries, targets, values, n_queries, n_targets) -> ObservationSet:
        qi = np.asarray(queries, dtype=np.int64).ravel()
        tj = np.asarray(targets, dtype=np.int64).ravel()
        y = np.asarray(values, dtype=np.float64).ravel()
        if not (qi.size == tj.size == y.size):
            raise DataError("queries, targets and values must have the same length")
        if n_queries > MAX_ID or n_targets > MAX_ID:
            raise DataError("observation dimension exceeds id range")
        _check_pairs(qi, tj, n_queries, n_targets, "observation")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite observation value")

        q_indptr, order = _compress(qi, tj, n_queries)
        qi, tj, y = qi[order], tj[order], y[order]
        _check_duplicates(qi, tj, "observation")
        t_indptr, t_order = _compress(tj, qi, n_targets)
        return cls(
            n_queries=int(n_queries),
            n_targets=int(n_targets),
            q_indptr=q_indptr,
            queries=qi.astype(np.int32),
            targets=tj.astype(np.int32),
            values=np.ascontiguousarray(y),
            t_indptr=t_indptr,
            t_queries=qi[t_order].astype(np.int32),
            t_pos=t_order.astype(np.int64),
            positions=np.arange(qi.size, dtype=np.int64),
        )

    @classmethod
    def from_triplets(cls, entries, n_queries: int, n_targets: int) -> ObservationSet:
        entries = list(entries)
        if entries:
            qi, tj, y = zip(*entries)
        else:
            qi, tj, y = (), (), ()
        return cls.from_arrays(qi, tj, y, n_queries, n_targets)

    def __len__(self) -> int:
        return int(self.values.size)

    @functools.cached_property
    def values_by_target(self) -> np.ndarray:
        """Labels in target-major order."""
        return np.ascontiguousarray(self.values[self.t_pos])

    @property
    def by_query(self) -> list[list[tuple[int, float]]]:
        out = []
        for i in range(self.n_queries):
            lo, hi = self.q_indptr[i], self.q_indptr[i + 1]
            out.append([(int(j), float(v)) for j, v in zip(self.targets[lo:hi], self.values[lo:hi])])
        return out

    @property
    def by_target(self) -> list[list[tuple[int, float]]]:
        out = []
        for j in range(self.n_targets):
            lo, hi = self.t_indptr[j], self.t_indptr[j + 1]
            out.append(
                [(int(i), float(self.values[p])) for i, p in zip(self.t_queries[lo:hi], self.t_pos[lo:hi])]
            )
        return out

    def triplets(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.queries, self.targets, self.values)]

    def check_labels(self, loss) -> None:
        """Logistic loss needs labels in [0, 1]."""
        from .loss import LossKind

        if LossKind(loss) is LossKind.LOGISTIC and len(self):
            if self.values.min() < 0.0 or self.values.max() > 1.0:
                raise DataError("logistic loss requires observation values in [0, 1]")


def load_observations(path, n_queries: int, n_targets: int) -> ObservationSet:
    """Read ``<query> <target> <value>`` lines."""
    path = Path(path)
    qi, tj, y = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 3:
                raise ParseError("expected '<query> <target> <value>'", path, lineno)
            i = _parse_id(tokens[0], path, lineno, "query id")
            j = _parse_id(tokens[1], path, lineno, "target id")
            if i >= n_queries or j >= n_targets:
                raise ParseError(
                    f"id out of range ({i}, {j}) for ({n_queries}, {n_targets})", path, lineno
                )
            qi.append(i)
            tj.append(j)
            y.append(_parse_float(tokens[2], path, lineno))
    try:
        return ObservationSet.from_arrays(qi, tj, y, n_queries, n_targets)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_observations(obs: ObservationSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(obs.queries, obs.targets, obs.values):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
