import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shapclust.core import (
    Dataset,
    NormParams,
    apply_normalizer,
    fit_normalizer,
    invert_normalizer,
    load_csv,
    read_column,
    split,
    write_csv,
)
from shapclust.errors import DataError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_simple_csv(tmp_path):
    d = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
    assert d.feature_names == ("a", "b")
    assert d.n_samples == 3
    np.testing.assert_array_equal(d.rows, [[1, 2], [3, 4], [5, 6]])


def test_empty_label_is_unknown(tmp_path):
    d = load_csv(_write(tmp_path, "a,y\n1,F1\n2,\n3,F2\n"), label_column="y")
    assert d.labels == ("F1", None, "F2")
    assert d.labeled_mask().tolist() == [True, False, True]


def test_non_numeric_cell_names_row_and_column(tmp_path):
    with pytest.raises(DataError, match=r"\(row 1, col b\)"):
        load_csv(_write(tmp_path, "a,b\n1,x\n"))


@pytest.mark.parametrize(
    "text, msg",
    [
        ("a,b\n1,2,3\n", "ragged"),
        ("a,a\n1,2\n", "duplicate"),
        ("", "empty"),
        ("a,b\n1,nan\n", "non-finite"),
    ],
)
def test_malformed_csv(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path, text))


def test_missing_label_column(tmp_path):
    with pytest.raises(DataError, match="not in header"):
        load_csv(_write(tmp_path, "a\n1\n"), label_column="y")


def test_drop_and_read_column(tmp_path):
    p = _write(tmp_path, "id,a,truth\ns1,1,N\ns2,2,F\n")
    d = load_csv(p, id_column="id", drop_columns=["truth"])
    assert d.feature_names == ("a",)
    assert d.sample_ids == ("s1", "s2")
    assert read_column(p, "truth") == ("N", "F")


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(("a", "a"), np.zeros((1, 2)))
    with pytest.raises(DataError):
        Dataset(("a",), np.zeros((2, 2)))
    with pytest.raises(DataError):
        Dataset(("a",), np.zeros((2, 1)), sample_ids=("x", "x"))
    with pytest.raises(DataError):
        Dataset(("a",), [[np.inf]])
    d = Dataset(("a",), [[1.0]])
    with pytest.raises(ValueError):
        d.rows[0, 0] = 2.0


def test_json_round_trip():
    d = Dataset(("a", "b"), [[0.1, 2.0], [3.0, 1e-300]], ("x", None), ("s1", "s2"))
    back = Dataset.from_json(json.loads(json.dumps(d.to_json())))
    assert back.feature_names == d.feature_names
    assert np.array_equal(back.rows, d.rows)
    assert back.labels == d.labels
    assert back.sample_ids == d.sample_ids


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(-1e12, 1e12, allow_nan=False)))
def test_csv_round_trip_is_exact(tmp_path_factory, X):
    d = Dataset(tuple(f"f{j}" for j in range(X.shape[1])), X)
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    write_csv(d, p)
    back = load_csv(p, id_column="sample_id")
    assert np.array_equal(back.rows, d.rows)
    assert back.sample_ids == d.sample_ids


def test_minmax_and_zscore_parameters():
    d = Dataset(("a",), [[0.0], [10.0]])
    p = fit_normalizer(d, "minmax")
    assert p.stats[0] == (0.0, 10.0)
    assert apply_normalizer(Dataset(("a",), [[5.0]]), p).rows[0, 0] == 0.5

    z = fit_normalizer(Dataset(("a",), [[2.0], [4.0]]), "zscore")
    assert z.stats[0] == (3.0, 1.0)  # population stddev
    np.testing.assert_array_equal(
        apply_normalizer(Dataset(("a",), [[2.0], [4.0]]), z).rows.ravel(), [-1.0, 1.0]
    )
    four = apply_normalizer(Dataset(("a",), [[4.0]]), z)
    assert four.rows[0, 0] == 1.0
    assert invert_normalizer(four, z).rows[0, 0] == 4.0


def test_constant_column_maps_to_zero_and_back():
    d = Dataset(("c",), [[1.0], [1.0], [1.0]])
    z = fit_normalizer(d, "zscore")
    assert z.stats[0] == (1.0, 0.0)
    assert apply_normalizer(d, z).rows.ravel().tolist() == [0.0, 0.0, 0.0]
    seven = Dataset(("c",), [[7.0]])
    p = fit_normalizer(seven, "minmax")
    assert apply_normalizer(seven, p).rows[0, 0] == 0.0
    assert invert_normalizer(apply_normalizer(seven, p), p).rows[0, 0] == 7.0


def test_normalizer_errors():
    d = Dataset(("a",), [[1.0]])
    with pytest.raises(DataError):
        fit_normalizer(d, "robust")
    p = fit_normalizer(d, "zscore")
    with pytest.raises(DataError):
        apply_normalizer(Dataset(("b",), [[1.0]]), p)
    back = NormParams.from_json(json.loads(json.dumps(p.to_json())))
    assert back.stats == p.stats


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 5)),
           elements=st.floats(-1e6, 1e6, allow_nan=False)),
    st.sampled_from(["zscore", "minmax"]),
)
def test_normalization_round_trip(X, method):
    d = Dataset(tuple(f"f{j}" for j in range(X.shape[1])), X)
    p = fit_normalizer(d, method)
    back = invert_normalizer(apply_normalizer(d, p), p).rows
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    assert np.max(np.abs(back - X) / scale) <= 1e-9


def test_split_sizes_and_determinism():
    d = Dataset(("a",), np.arange(10.0)[:, None])
    tr, te = split(d, 0.2, seed=7)
    assert (tr.n_samples, te.n_samples) == (8, 2)
    assert not set(tr.sample_ids) & set(te.sample_ids)
    tr2, te2 = split(d, 0.2, seed=7)
    assert tr2.sample_ids == tr.sample_ids and te2.sample_ids == te.sample_ids


def test_split_test_size_matches_published_count():
    d = Dataset(("a",), np.zeros((6825, 1)))
    _, te = split(d, 0.2, seed=0)
    assert te.n_samples == 1365


def test_split_seeds_differ():
    d = Dataset(("a",), np.arange(50.0)[:, None])
    base = split(d, 0.2, seed=0)[1].sample_ids
    same = sum(split(d, 0.2, seed=s)[1].sample_ids == base for s in range(1, 101))
    assert same <= 1


def test_split_errors():
    d = Dataset(("a",), np.zeros((1, 1)))
    with pytest.raises(DataError):
        split(d, 0.2)
    with pytest.raises(DataError):
        split(Dataset(("a",), np.zeros((5, 1))), 1.5)
