import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featmf import (
    FactorModel,
    Hyperparameters,
    RowStatistics,
    compute_row_statistics,
    conflict_weights,
    efficient_cd_epoch,
    from_triplets,
    init_model,
    parallel_block_update,
    pl2m_epoch,
    refresh_state,
    regularized_objective,
    schedule_partition,
    shrinkage_eta,
    threshold,
)
from featmf.parallel import BlockLayout, ConflictWeights
from featmf.synthetic import SyntheticSpec, generate


@pytest.mark.parametrize("n, size, expected", [(4, 2, [2, 2]), (4, 5, [4]), (4, 1, [1, 1, 1, 1]), (7, 3, [3, 3, 1])])
def test_partition_sizes(n, size, expected):
    part = schedule_partition(n, size, seed=0)
    assert [len(b) for b in part.blocks] == expected
    assert sorted(part.order.tolist()) == list(range(n))


@given(st.integers(1, 200), st.integers(1, 50), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_partition_invariants(n, size, seed):
    part = schedule_partition(n, size, seed=seed)
    sizes = [len(b) for b in part.blocks]
    assert all(s == size for s in sizes[:-1])
    assert 1 <= sizes[-1] <= size
    assert np.array_equal(np.sort(part.order), np.arange(n))
    again = schedule_partition(n, size, seed=seed)
    assert np.array_equal(part.order, again.order)


def test_partition_identity_and_errors():
    assert schedule_partition(5, 2, shuffle=False).order.tolist() == [0, 1, 2, 3, 4]
    a = schedule_partition(50, 5, seed=[3, 0]).order
    b = schedule_partition(50, 5, seed=[4, 0]).order
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        schedule_partition(0, 1)
    with pytest.raises(ValueError):
        schedule_partition(3, 0)


def test_conflict_weights_examples():
    X = from_triplets([(0, 0, 1.0), (0, 1, -0.5), (1, 2, 2.0)], 3, 3)
    assert conflict_weights([0], X).C.tolist() == [1.0, 0.0, 0.0]
    assert conflict_weights([0, 1], X).C.tolist() == [1.5, 0.0, 0.0]
    assert conflict_weights([0, 1], X).C[2] == 0.0


def test_conflict_weights_property(small_square):
    X = small_square.X
    dense = X.toarray()
    rng = np.random.default_rng(0)
    for _ in range(10):
        S = rng.choice(X.n_features, 7, replace=False)
        C = conflict_weights(S, X).C
        np.testing.assert_allclose(C, np.abs(dense[:, S]).sum(axis=1))
        assert np.all(C[:, None] >= np.abs(dense[:, S]) - 1e-15)


def test_block_layout_matches_conflict_weights(small_square):
    X = small_square.X
    part = schedule_partition(X.n_features, 6, seed=1)
    for workers in (1, 3):
        lay = BlockLayout.build(X, part.blocks, workers)
        for S in part.blocks:
            C = conflict_weights(S, X).C
            for s in S:
                lo, hi = X.f_indptr[s], X.f_indptr[s + 1]
                np.testing.assert_allclose(lay.entry_C[lo:hi], C[X.f_indices[lo:hi]], rtol=1e-15)
        assert lay.fchunk.shape == (len(part.blocks), workers + 1)
        assert lay.e_val.size == X.nnz
        assert np.all(np.diff(lay.fchunk, axis=1) >= 0)
        assert np.all(np.diff(lay.gchunk, axis=1) >= 0)


def _one_query(values, G, H, alpha=0.0, lam=0.0, w=None):
    n = len(values)
    X = from_triplets([(0, s, v) for s, v in enumerate(values)], 1, n)
    P = np.zeros((1, n)) if w is None else np.array([w], dtype=float)
    model = FactorModel(P, np.zeros((1, 1)), Hyperparameters(alpha, lam, 1), "square")
    stats = RowStatistics(0, np.array([G], dtype=float), np.array([H], dtype=float))
    return X, model, stats


def test_duplicated_feature_block():
    X, model, stats = _one_query([1.0, 1.0], -6.0, 10.0)
    S = [0, 1]
    C = conflict_weights(S, X)
    assert C.C.tolist() == [2.0]
    eta = shrinkage_eta(0, 0, S, stats, C, X, 0.0)
    delta = parallel_block_update(0, S, stats, C, X, model)
    np.testing.assert_allclose(delta, [0.3, 0.3], rtol=0, atol=1e-15)
    assert delta.sum() == pytest.approx(0.6, abs=1e-15)  # the serial single-feature move
    assert eta == 0.5
    # G refreshed with the combined latent change
    assert stats.G[0] == pytest.approx(-6.0 + 0.6 * 10.0, abs=1e-14)


def test_singleton_block_is_serial_update(small_square):
    d = small_square
    m = init_model((2, d.X.n_features, d.Z.n_features), Hyperparameters(0.05, 0.5, 2), "square", 0)
    st = refresh_state(m, d.X, d.Z, d.train)
    stats = compute_row_statistics(0, st, d.train, "square")
    for s in (0, 5, 17):
        rows, vals = d.X.col(s)
        x = float(np.sum(stats.G[rows] * vals))
        y = float(np.sum(stats.H[rows] * vals * vals))
        expected = threshold(x, y, m.P[0, s], 0.05, 0.5)
        C = conflict_weights([s], d.X)
        assert shrinkage_eta(0, s, [s], stats, C, d.X, 0.5) == pytest.approx(1.0, abs=1e-15)
        got = parallel_block_update(0, [s], stats, C, d.X, m)[0]
        assert got == pytest.approx(expected, rel=1e-13, abs=1e-15)


def _random_block_case(rng, q=12, n=10, density=0.4):
    entries = [(i, s, float(rng.uniform(-1, 1))) for i in range(q) for s in range(n) if rng.random() < density]
    X = from_triplets(entries, q, n)
    G = rng.normal(size=q)
    H = rng.uniform(0, 3, size=q)
    return X, G, H


def test_parallel_steps_are_shorter():
    rng = np.random.default_rng(7)
    for _ in range(100):
        X, G, H = _random_block_case(rng)
        lam = float(rng.choice([0.0, 0.5]))
        w = rng.normal(size=X.n_features)
        S = rng.choice(X.n_features, int(rng.integers(2, X.n_features + 1)), replace=False)
        serial = []
        for s in S:
            rows, vals = X.col(s)
            x, y = float(np.sum(G[rows] * vals)), float(np.sum(H[rows] * vals * vals))
            serial.append(threshold(x, y, w[s], 0.0, lam) if y + lam > 0 else 0.0)
        m = FactorModel(w[None, :].copy(), np.zeros((1, 1)), Hyperparameters(0.0, lam, 1), "square")
        if lam == 0.0 and any(np.sum(H[X.col(s)[0]] * X.col(s)[1] ** 2) == 0 for s in S):
            continue
        par = parallel_block_update(0, S, RowStatistics(0, G.copy(), H), conflict_weights(S, X), X, m)
        assert np.all(np.abs(par) <= np.abs(serial) + 1e-15)


def test_conservativeness_nested_blocks():
    rng = np.random.default_rng(8)
    for _ in range(50):
        X, G, H = _random_block_case(rng)
        w = rng.normal(size=X.n_features)
        S = rng.choice(X.n_features, 6, replace=False)
        sub = S[:3]
        steps = []
        for block in (sub, S):
            m = FactorModel(w[None, :].copy(), np.zeros((1, 1)), Hyperparameters(0.0, 0.3, 1), "square")
            steps.append(parallel_block_update(0, block, RowStatistics(0, G.copy(), H), conflict_weights(block, X), X, m))
        assert np.all(np.abs(steps[1][:3]) <= np.abs(steps[0]) + 1e-15)


def test_eta_examples():
    rng = np.random.default_rng(9)
    for size in (2, 3, 5):
        X, _, stats = _one_query([1.0] * size, -1.0, 4.0)
        C = conflict_weights(range(size), X)
        for s in range(size):
            assert shrinkage_eta(0, s, list(range(size)), stats, C, X, 0.0) == pytest.approx(1 / size, abs=1e-12)
    X, G, H = _random_block_case(rng)
    stats = RowStatistics(0, G, H)
    S = np.arange(X.n_features)
    C = conflict_weights(S, X)
    s = int(np.argmax(np.diff(X.f_indptr)))
    e0 = shrinkage_eta(0, s, S, stats, C, X, 0.0)
    e1 = shrinkage_eta(0, s, S, stats, C, X, 1e6)
    assert 0 < e0 <= 1 and e1 > e0 and e1 <= 1


def test_eta_zero_denominator():
    X, _, stats = _one_query([1.0], 0.0, 0.0)
    with pytest.raises(ZeroDivisionError):
        shrinkage_eta(0, 0, [0], stats, conflict_weights([0], X), X, 0.0)


def test_pl2m_block_one_matches_efficient(small_logistic):
    d = small_logistic
    a = init_model((3, d.X.n_features, d.Z.n_features), Hyperparameters(0.05, 0.5, 3), "logistic", 1)
    b = a.copy()
    sa, sb = refresh_state(a, d.X, d.Z, d.train), refresh_state(b, d.X, d.Z, d.train)
    for e in range(3):
        efficient_cd_epoch(a, sa, d.X, d.Z, d.train)
        pl2m_epoch(b, sb, d.X, d.Z, d.train, block_size=1, workers=1, epoch=e, shuffle=False)
        np.testing.assert_allclose(b.P, a.P, rtol=0, atol=1e-12)
        np.testing.assert_allclose(b.Q, a.Q, rtol=0, atol=1e-12)


def test_pl2m_worker_count_invariance(small_square):
    d = small_square
    models = []
    for workers in (1, 2, 4):
        m = init_model((3, d.X.n_features, d.Z.n_features), Hyperparameters(0.1, 1.0, 3), "square", 2)
        st = refresh_state(m, d.X, d.Z, d.train)
        for e in range(2):
            r = pl2m_epoch(m, st, d.X, d.Z, d.train, block_size=8, workers=workers, seed=5, epoch=e)
        models.append((m, r.objective_after))
    for m, obj in models[1:]:
        assert obj == pytest.approx(models[0][1], rel=1e-6)
        # writes are worker-disjoint and each sum runs in a fixed order
        np.testing.assert_array_equal(m.P, models[0][0].P)


def test_pl2m_seed_changes_partition(small_square):
    d = small_square
    out = []
    for seed in (0, 1):
        m = init_model((2, d.X.n_features, d.Z.n_features), Hyperparameters(0.0, 0.1, 2), "square", 2)
        st = refresh_state(m, d.X, d.Z, d.train)
        pl2m_epoch(m, st, d.X, d.Z, d.train, block_size=8, seed=seed)
        out.append(m.P.copy())
    assert not np.array_equal(out[0], out[1])


@pytest.mark.parametrize("loss", ["square", "logistic"])
@pytest.mark.parametrize("block_size", [1, 8, 64])
def test_pl2m_row_monotone(loss, block_size):
    data = generate(SyntheticSpec(q=40, p=40, n=60, m=60, nnz=5, n_obs=600, loss=loss, seed=3))
    m = init_model((3, 60, 60), Hyperparameters(0.1, 1.0, 3), loss, 3)
    st = refresh_state(m, data.X, data.Z, data.train)
    trace = [regularized_objective(m, st, data.train)]

    def on_row(side, k):
        trace.append(regularized_objective(m, st, data.train))

    for e in range(3):
        pl2m_epoch(m, st, data.X, data.Z, data.train, block_size=block_size, workers=2, epoch=e, on_row=on_row)
        trace.append(regularized_objective(m, st, data.train))
    t = np.array(trace)
    assert np.all(t[1:] <= t[:-1] + 1e-9 * np.abs(t[:-1]))


def test_pl2m_rejects_bad_workers(tiny):
    model, X, Z, obs = tiny
    st = refresh_state(model, X, Z, obs)
    with pytest.raises(ValueError):
        pl2m_epoch(model, st, X, Z, obs, workers=0)


def test_caller_weights_are_used():
    X, model, stats = _one_query([1.0, 1.0], -6.0, 10.0)
    delta = parallel_block_update(0, [0, 1], stats, ConflictWeights(np.array([4.0])), X, model)
    np.testing.assert_allclose(delta, [0.15, 0.15], atol=1e-15)
