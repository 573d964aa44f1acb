import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featmf.sparse import (
    DataError,
    FeatureMatrix,
    ObservationSet,
    ParseError,
    from_triplets,
    identity_features,
    load_feature_file,
    load_observations,
    save_feature_file,
    save_observations,
)


def test_empty_triplets():
    M = from_triplets([], 2, 2)
    assert M.nnz == 0
    assert M.instance_major == [[], []]
    assert M.feature_major == [[], []]


def test_both_orientations():
    M = from_triplets([(0, 1, 0.5), (1, 0, 2.0)], 2, 2)
    assert M.feature_major[1] == [(0, 0.5)]
    assert M.instance_major[1] == [(0, 2.0)]


def test_duplicate_rejected_with_pair():
    with pytest.raises(DataError, match=r"\(0, 0\)"):
        from_triplets([(0, 0, 1.0), (0, 0, 2.0)], 1, 1)


def test_out_of_range_rejected():
    with pytest.raises(DataError):
        from_triplets([(2, 0, 1.0)], 2, 2)
    with pytest.raises(DataError):
        from_triplets([(0, -1, 1.0)], 2, 2)


def test_non_finite_rejected():
    with pytest.raises(DataError):
        from_triplets([(0, 0, np.nan)], 1, 1)


def test_zeros_dropped():
    M = from_triplets([(0, 0, 0.0), (0, 1, 3.0), (1, 1, 0.0)], 2, 2)
    assert M.nnz == 1
    assert M.triplets() == [(0, 1, 3.0)]
    assert M.feature_major == [[], [(0, 3.0)]]


def test_identity_features():
    assert identity_features(1).triplets() == [(0, 0, 1.0)]
    I3 = identity_features(3)
    assert I3.nnz == 3
    assert I3.instance_major == [[(i, 1.0)] for i in range(3)]
    assert I3.feature_major == I3.instance_major
    with pytest.raises(DataError):
        identity_features(0)


entries = st.integers(1, 6).flatmap(
    lambda q: st.integers(1, 6).flatmap(
        lambda n: st.tuples(
            st.just(q),
            st.just(n),
            st.dictionaries(
                st.tuples(st.integers(0, q - 1), st.integers(0, n - 1)),
                st.floats(-5, 5, allow_nan=False),
                max_size=q * n,
            ),
        )
    )
)


@given(entries)
@settings(max_examples=60, deadline=None)
def test_transpose_round_trip(case):
    q, n, d = case
    M = from_triplets([(i, s, v) for (i, s), v in d.items()], q, n)
    expected = sorted((i, s, v) for (i, s), v in d.items() if v != 0.0)
    from_rows = sorted((i, s, v) for i, row in enumerate(M.instance_major) for s, v in row)
    from_cols = sorted((i, s, v) for s, col in enumerate(M.feature_major) for i, v in col)
    assert from_rows == expected
    assert from_cols == expected
    assert M.indptr[-1] == M.f_indptr[-1] == len(expected)
    for row in M.instance_major:
        ids = [s for s, _ in row]
        assert ids == sorted(set(ids))
    dense = np.zeros((q, n))
    for (i, s), v in d.items():
        dense[i, s] = v
    np.testing.assert_array_equal(M.toarray(), dense)


def test_load_feature_line(tmp_path):
    p = tmp_path / "X.txt"
    p.write_text("0 1:0.5 3:2.0\n")
    M = load_feature_file(p)
    assert M.instance_major[0] == [(1, 0.5), (3, 2.0)]


def test_load_empty_feature_file(tmp_path):
    p = tmp_path / "X.txt"
    p.write_text("")
    assert load_feature_file(p).n_instances == 0


def test_non_increasing_feature_id(tmp_path):
    p = tmp_path / "X.txt"
    p.write_text("0 3:1.0 1:2.0\n")
    with pytest.raises(ParseError, match="non-increasing feature id, line 1"):
        load_feature_file(p)


@pytest.mark.parametrize(
    "text, message",
    [
        ("0 1:0.5\n1 2-0.5\n", "malformed token.*line 2"),
        ("0 99999999999:1\n", "overflow.*line 1"),
        ("0 a:1\n", "malformed feature id.*line 1"),
        ("0 1:x\n", "malformed value.*line 1"),
        ("0 1:inf\n", "non-finite.*line 1"),
        ("0 1:1\n0 2:1\n", "duplicate instance id.*line 2"),
        ("0 1:1 1:2\n", "non-increasing.*line 1"),
    ],
)
def test_feature_parse_errors(tmp_path, text, message):
    p = tmp_path / "X.txt"
    p.write_text(text)
    with pytest.raises(ParseError, match=message):
        load_feature_file(p)


def test_feature_file_size_checks(tmp_path):
    p = tmp_path / "X.txt"
    p.write_text("0 4:1\n")
    assert load_feature_file(p, n_features=10).n_features == 10
    with pytest.raises(DataError):
        load_feature_file(p, n_features=4)


def test_feature_file_round_trip_bytes(tmp_path):
    src = tmp_path / "a.txt"
    src.write_text("0 1:0.5 3:2.0\n1\n2 0:0.1 7:-3.25\n")
    M = load_feature_file(src)
    out = tmp_path / "b.txt"
    save_feature_file(M, out)
    assert out.read_text() == src.read_text()


@given(entries)
@settings(max_examples=30, deadline=None)
def test_feature_serialization_round_trip(tmp_path_factory, case):
    q, n, d = case
    M = from_triplets([(i, s, v) for (i, s), v in d.items()], q, n)
    path = tmp_path_factory.mktemp("rt") / "X.txt"
    save_feature_file(M, path)
    M2 = load_feature_file(path, n_features=n, n_instances=q)
    assert M2.triplets() == M.triplets()
    save_feature_file(M2, path.with_suffix(".2"))
    assert path.read_bytes() == path.with_suffix(".2").read_bytes()


def test_load_observations_grouping(tmp_path):
    p = tmp_path / "o.txt"
    p.write_text("0 1 1.0\n0 2 0.0\n1 1 1.0\n")
    obs = load_observations(p, 2, 3)
    assert len(obs) == 3
    assert obs.by_query[0] == [(1, 1.0), (2, 0.0)]
    assert obs.by_target[1] == [(0, 1.0), (1, 1.0)]


def test_load_observations_empty(tmp_path):
    p = tmp_path / "o.txt"
    p.write_text("")
    assert len(load_observations(p, 2, 2)) == 0


def test_observation_range_error(tmp_path):
    p = tmp_path / "o.txt"
    p.write_text("5 0 1.0\n")
    with pytest.raises(ParseError, match="out of range.*line 1"):
        load_observations(p, 2, 2)


def test_observation_duplicates_and_values(tmp_path):
    p = tmp_path / "o.txt"
    p.write_text("0 0 1.0\n0 0 2.0\n")
    with pytest.raises(DataError, match="duplicate"):
        load_observations(p, 1, 1)
    p.write_text("0 0 nan\n")
    with pytest.raises(ParseError):
        load_observations(p, 1, 1)
    p.write_text("0 0\n")
    with pytest.raises(ParseError):
        load_observations(p, 1, 1)


def test_logistic_labels_checked():
    obs = ObservationSet.from_triplets([(0, 0, 2.0)], 1, 1)
    obs.check_labels("square")
    with pytest.raises(DataError):
        obs.check_labels("logistic")
    ObservationSet.from_triplets([(0, 0, 0.3)], 1, 1).check_labels("logistic")


obs_cases = st.integers(1, 5).flatmap(
    lambda q: st.integers(1, 5).flatmap(
        lambda p: st.tuples(
            st.just(q),
            st.just(p),
            st.dictionaries(
                st.tuples(st.integers(0, q - 1), st.integers(0, p - 1)),
                st.floats(-3, 3, allow_nan=False),
                max_size=q * p,
            ),
        )
    )
)


@given(obs_cases)
@settings(max_examples=60, deadline=None)
def test_observation_groupings_agree(case):
    q, p, d = case
    obs = ObservationSet.from_triplets([(i, j, v) for (i, j), v in d.items()], q, p)
    expected = sorted((i, j, v) for (i, j), v in d.items())
    assert sorted((i, j, v) for i, row in enumerate(obs.by_query) for j, v in row) == expected
    assert sorted((i, j, v) for j, col in enumerate(obs.by_target) for i, v in col) == expected
    assert len(obs) == len(d)
    np.testing.assert_array_equal(obs.values_by_target, obs.values[obs.t_pos])


def test_observation_save_load(tmp_path):
    obs = ObservationSet.from_triplets([(1, 0, 0.25), (0, 2, -1.5)], 2, 3)
    p = tmp_path / "o.txt"
    save_observations(obs, p)
    assert load_observations(p, 2, 3).triplets() == obs.triplets()


def test_feature_matrix_is_immutable():
    M = from_triplets([(0, 0, 1.0)], 1, 1)
    with pytest.raises(Exception):
        M.n_features = 3
    assert isinstance(M, FeatureMatrix)
