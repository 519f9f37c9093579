import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from shapclust.errors import DataError
from shapclust.metrics import fmt, nasa_score, nasa_terms, nmi, prf1, rmse


def test_nmi_examples():
    assert nmi([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0


def test_nmi_noise_is_a_label():
    # the -1 group is scored like any other group
    assert nmi([-1, -1, 0, 0], [5, 5, 7, 7]) == 1.0


def test_nmi_single_cluster_conventions():
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
    assert nmi([0, 0, 0], [0, 1, 2]) == 0.0


def test_nmi_errors():
    with pytest.raises(DataError):
        nmi([0, 1], [0])
    with pytest.raises(DataError):
        nmi([], [])


label_lists = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-1, 4), min_size=n, max_size=n),
        st.lists(st.integers(-1, 4), min_size=n, max_size=n),
    )
)


@settings(max_examples=1000, deadline=None)
@given(label_lists)
def test_nmi_range_and_symmetry(pair):
    a, b = pair
    v = nmi(a, b)
    assert 0.0 <= v <= 1.0
    assert v == nmi(b, a)


@settings(max_examples=200, deadline=None)
@given(label_lists)
def test_nmi_matches_reference_implementation(pair):
    a, b = pair
    if len(set(a)) == 1 or len(set(b)) == 1:
        return  # the reference special-cases single-cluster inputs differently
    ref = normalized_mutual_info_score(a, b, average_method="arithmetic")
    assert nmi(a, b) == pytest.approx(ref, abs=1e-10)


def test_prf1_examples():
    assert prf1([1, 1, 0], [1, 1, 0]) == (1.0, 1.0, 1.0)
    p, r, f = prf1([0, 0, 0], [1, 0, 1])
    assert p is None and r == 0.0 and f is None
    # TP=3, FP=1, FN=1
    pred = [1, 1, 1, 1, 0, 0]
    act = [1, 1, 1, 0, 1, 0]
    assert prf1(pred, act) == (0.75, 0.75, 0.75)


def test_prf1_zero_f1_when_no_overlap():
    assert prf1([1, 0], [0, 1]) == (0.0, 0.0, 0.0)


def test_rmse_and_score():
    assert rmse([1, 2], [1, 2]) == 0.0
    assert nasa_score([1, 2], [1, 2]) == 0.0
    assert rmse([3, -4], [0, 0]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    assert nasa_terms(np.array([10.0]))[0] == pytest.approx(math.e - 1, abs=1e-12)
    assert nasa_terms(np.array([-13.0]))[0] == pytest.approx(math.e - 1, abs=1e-12)


def test_score_asymmetry():
    d = np.arange(1, 51, dtype=float)
    assert np.all(nasa_terms(d) > nasa_terms(-d))


def test_length_mismatch():
    with pytest.raises(DataError):
        rmse([1], [1, 2])
    with pytest.raises(DataError):
        nasa_score([1], [1, 2])
    with pytest.raises(DataError):
        prf1([1], [1, 0])


def test_fmt():
    assert fmt(None) == "n/a"
    assert fmt(0.987) == "0.99"
    assert fmt(float("nan")) == "n/a"
