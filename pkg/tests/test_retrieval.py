import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hashcondense.retrieval import (BinaryCodes, EvalReport, RetrievalError, average_precision, binarize,
                                    hamming_distances, hamming_rank, mean_average_precision)
from oracles import brute_map


def codes_from_strings(rows, labels=None):
    # leftmost character is bit 0
    return binarize(np.array([[1.0 if ch == "1" else -1.0 for ch in r] for r in rows]), labels)


def test_binarize_sign_rule():
    b = binarize(np.array([0.3, -0.7, 0.0]))
    assert b.bits().tolist() == [[1, 0, 1]]
    assert binarize(np.ones((2, 5))).bits().tolist() == [[1] * 5] * 2


def test_binarize_scale_invariant():
    v = np.random.default_rng(0).normal(size=(6, 70))
    assert np.array_equal(binarize(v).words, binarize(2 * v).words)
    assert binarize(v).words.shape == (6, 2)


def test_rank_hand_case():
    db = codes_from_strings(["0010", "1011", "1111"])
    q = codes_from_strings(["1011"])
    assert hamming_distances(q, db).tolist() == [[2, 0, 1]]
    assert hamming_rank(q, db).tolist() == [1, 2, 0]


def test_rank_zero_and_complement():
    rng = np.random.default_rng(1)
    v = rng.choice([-1.0, 1.0], size=(6, 32))
    db = binarize(np.vstack([v, -v[:1]]))
    order = hamming_rank(binarize(v[:1]), db)
    assert order[0] == 0
    assert hamming_distances(binarize(v[:1]), db)[0, 6] == 32
    assert order[-1] == 6


def test_rank_k_mismatch():
    with pytest.raises(RetrievalError):
        hamming_distances(binarize(np.ones((1, 8))), binarize(np.ones((1, 16))))


def test_ap_hand_cases():
    assert average_precision(np.array([1, 1, 1]))[0] == 1.0
    assert average_precision(np.array([1, 0, 1]))[0] == pytest.approx((1 / 1 + 2 / 3) / 2, abs=1e-15)
    assert average_precision(np.array([0, 0]))[0] == 0.0


def test_map_ties_use_index_order():
    # all db rows identical to the query: order is 0,1,2 with relevance 1,0,1
    db = codes_from_strings(["1100"] * 3, labels=[0, 1, 0])
    q = codes_from_strings(["1100"], labels=[0])
    assert mean_average_precision(q, db).map_value == pytest.approx(0.8333333333333333, abs=1e-15)


def test_map_all_same_class():
    rng = np.random.default_rng(2)
    db = binarize(rng.normal(size=(30, 16)), np.zeros(30, dtype=int))
    q = binarize(rng.normal(size=(5, 16)), np.zeros(5, dtype=int))
    assert mean_average_precision(q, db).map_value == 1.0


def test_map_empty_db():
    with pytest.raises(RetrievalError):
        mean_average_precision(binarize(np.ones((1, 8)), [0]), BinaryCodes(np.zeros((0, 1)), 8, np.zeros(0)))


def test_map_matches_bruteforce_random_instance():
    rng = np.random.default_rng(3)
    dbv, qv = rng.normal(size=(20, 12)), rng.normal(size=(4, 12))
    dbl, ql = rng.integers(0, 3, 20), rng.integers(0, 3, 4)
    got = mean_average_precision(binarize(qv, ql), binarize(dbv, dbl)).map_value
    assert abs(got - brute_map(qv >= 0, ql, dbv >= 0, dbl)) < 1e-12


def test_top_k_truncation():
    rng = np.random.default_rng(4)
    dbv, qv = rng.normal(size=(40, 16)), rng.normal(size=(6, 16))
    dbl, ql = rng.integers(0, 4, 40), rng.integers(0, 4, 6)
    rep = mean_average_precision(binarize(qv, ql), binarize(dbv, dbl), top_k=7, precision_ks=[5, 10])
    assert abs(rep.map_value - brute_map(qv >= 0, ql, dbv >= 0, dbl, top_k=7)) < 1e-12
    assert rep.top_k == 7 and set(rep.precision_at_k) == {5, 10}


def test_report_bounds_and_json():
    with pytest.raises(RetrievalError):
        EvalReport(map_value=1.5, code_bits=32, query_count=1, database_count=1)
    r = EvalReport(0.5, 32, 10, 100, None, {100: 0.4}, {"method": "iem"})
    assert EvalReport.from_dict(r.to_dict()) == r


@settings(max_examples=50, deadline=None)
@given(K=st.sampled_from([8, 32, 64, 100]), n=st.integers(1, 30), seed=st.integers(0, 2 ** 32 - 1))
def test_hamming_dot_duality(K, n, seed):
    rng = np.random.default_rng(seed)
    q = rng.choice([-1, 1], size=(1, K))
    db = rng.choice([-1, 1], size=(n, K))
    dist = hamming_distances(binarize(q), binarize(db))[0]
    dot = (db @ q[0])
    assert np.array_equal(dist, (K - dot) // 2)
    assert np.array_equal(hamming_rank(binarize(q), binarize(db)), np.argsort(-dot, kind="stable"))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_map_permutation_invariant_when_distances_distinct(seed):
    rng = np.random.default_rng(seed)
    K = 16
    # distinct distances: db row i differs from the query in exactly i bits
    q = np.ones((1, K))
    db = np.ones((K + 1, K))
    for i in range(K + 1):
        db[i, :i] = -1
    labels = rng.integers(0, 2, K + 1)
    perm = rng.permutation(K + 1)
    a = mean_average_precision(binarize(q, [0]), binarize(db, labels)).map_value
    b = mean_average_precision(binarize(q, [0]), binarize(db[perm], labels[perm])).map_value
    assert a == pytest.approx(b, abs=1e-15)
