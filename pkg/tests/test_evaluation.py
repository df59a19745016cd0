import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccm.evaluation import (
    MatchEvaluation,
    PairScore,
    average_precision,
    evaluate_matches,
    evaluate_retrieval,
    min_metric_distances,
    query_gallery_distance,
)
from ccm.intra_cluster import ClusterSet
from oracles import average_precision_def, quad_form, sq_dist


def toy_network():
    # camera -> clusters and per-sample identities; cluster majorities in comments
    clusters = {
        0: ClusterSet(0, ((0, 1), (2,), (3,))),  # a, b, c
        1: ClusterSet(1, ((0,), (1, 2, 3))),  # a, b (2 of 3)
        2: ClusterSet(2, ((0,), (1,), (2,))),  # c, a, d
    }
    identities = {
        0: ["a", "a", "b", "c"],
        1: ["a", "b", "b", "x"],
        2: ["c", "a", "d"],
    }
    return clusters, identities


def test_perfect_prediction():
    clusters, ids = toy_network()
    truth = {
        (0, 1): np.array([[1, 0], [0, 1], [0, 0]]),
        (0, 2): np.array([[0, 1, 0], [0, 0, 0], [1, 0, 0]]),
        (1, 2): np.array([[0, 1, 0], [0, 0, 0]]),
    }
    ev = evaluate_matches(truth, clusters, ids)
    assert (ev.precision, ev.recall, ev.f1) == (1.0, 1.0, 1.0)
    assert ev.macro() == (1.0, 1.0, 1.0)


def test_empty_prediction_convention():
    clusters, ids = toy_network()
    pred = {(0, 1): np.zeros((3, 2)), (0, 2): np.zeros((3, 3)), (1, 2): np.zeros((2, 3))}
    ev = evaluate_matches(pred, clusters, ids)
    assert (ev.precision, ev.recall, ev.f1) == (0.0, 0.0, 0.0)
    # a-a, b-b | a-a, c-c | a-a
    assert ev.false_negatives == 5


def test_toy_network_hand_counts():
    clusters, ids = toy_network()
    pred = {
        (0, 1): np.array([[1, 0], [1, 0], [0, 1]]),  # a-a ok, b-a wrong, c-b wrong; b-b missed
        (0, 2): np.array([[0, 1, 0], [0, 0, 0], [0, 0, 1]]),  # a-a ok, c-d wrong; c-c missed
        (1, 2): np.array([[0, 1, 0], [0, 0, 0]]),  # a-a ok
    }
    ev = evaluate_matches(pred, clusters, ids)
    assert ev.pairs[(0, 1)] == PairScore(1, 2, 1)
    assert ev.pairs[(0, 2)] == PairScore(1, 1, 1)
    assert ev.pairs[(1, 2)] == PairScore(1, 0, 0)
    assert (ev.true_positives, ev.false_positives, ev.false_negatives) == (3, 3, 2)
    assert ev.precision == pytest.approx(0.5)
    assert ev.recall == pytest.approx(0.6)
    assert ev.f1 == pytest.approx(2 * 0.5 * 0.6 / 1.1)
    macro_p = (1 / 3 + 1 / 2 + 1) / 3
    assert ev.macro()[0] == pytest.approx(macro_p)
    assert ev.predicted() == 6
    assert ev.true_positives == sum(s.tp for s in ev.pairs.values())


def test_missing_identity_errors():
    clusters, ids = toy_network()
    ids[1][0] = None
    with pytest.raises(ValueError, match="missing"):
        evaluate_matches({(0, 1): np.zeros((3, 2))}, clusters, ids)


def test_empty_evaluation_macro():
    assert MatchEvaluation({}).macro() == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------- query-gallery distance


def test_identity_metrics_give_squared_euclidean():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    assert query_gallery_distance(a, b, [np.eye(4)] * 3) == pytest.approx(sq_dist(a, b), rel=1e-14)


def test_zero_metric_dominates():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    assert query_gallery_distance(a, b, [np.eye(3), np.zeros((3, 3))]) == 0.0


def test_three_way_min():
    rng = np.random.default_rng(2)
    Ms = [(lambda A: A @ A.T)(rng.standard_normal((4, 4))) for _ in range(3)]
    for _ in range(10):
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        oracle = min(quad_form(a, b, Ms[0]), quad_form(a, b, Ms[1]), quad_form(a, b, Ms[2]))
        assert query_gallery_distance(a, b, Ms) == pytest.approx(oracle, rel=1e-12)
    Q, G = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    D = min_metric_distances(Q, G, Ms)
    for i in range(3):
        for j in range(5):
            assert D[i, j] == pytest.approx(min(quad_form(Q[i], G[j], M) for M in Ms), rel=1e-12)


def test_needs_a_metric():
    with pytest.raises(ValueError):
        query_gallery_distance([0.0], [1.0], [])


# ---------------------------------------------------------------- retrieval


def test_average_precision_hand():
    assert average_precision([0, 1, 0]) == 0.5
    assert average_precision([1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([0, 0]) == 0.0


@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_average_precision_definition(hits):
    assert average_precision(hits) == pytest.approx(average_precision_def(hits), abs=1e-12)


def test_single_query_ranks_first():
    feats = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]])
    ret = evaluate_retrieval(feats, ["a", "a", "b"], [0, 1, 1], [np.eye(2)], ["q", "g1", "g2"])
    # query q (camera 0): correct item ranks first
    assert ret.rank(1) >= 0.5
    assert ret.excluded_queries == ["g2"]  # identity b never seen in camera 0
    assert ret.num_queries == 2
    assert ret.rank(1) == 1.0 and ret.map == 1.0


def test_correct_ranked_second_of_three():
    feats = np.array([[0.0], [1.0], [2.0], [3.0]])
    ids = ["a", "x", "a", "y"]
    ret = evaluate_retrieval(feats[:4], ids, [0, 1, 1, 1], [np.eye(1)])
    # query 0 ranks x, a, y (AP 1/2); query 2 sees only item 0 (AP 1); x and y are excluded
    assert ret.num_queries == 2
    assert ret.excluded_queries == [1, 3]
    assert ret.map == 0.75
    assert list(ret.cmc) == [0.5, 1.0, 1.0]


def test_ties_broken_by_gallery_index():
    feats = np.array([[0.0], [1.0], [-1.0]])
    ret = evaluate_retrieval(feats, ["a", "b", "a"], [0, 1, 1], [np.eye(1)])
    # both gallery items at distance 1 from query 0; index 1 (wrong) comes first
    assert ret.num_queries == 2
    assert ret.cmc[0] == 0.5
    assert ret.map == 0.75


def test_retrieval_brute_force():
    rng = np.random.default_rng(3)
    n = 24
    feats = rng.standard_normal((n, 3))
    ids = [f"id{k}" for k in rng.integers(0, 5, n)]
    cams = list(rng.integers(0, 3, n))
    Ms = [np.eye(3), np.diag([2.0, 0.5, 1.0])]
    ret = evaluate_retrieval(feats, ids, cams, Ms)
    aps, first = [], []
    for qi in range(n):
        gal = [g for g in range(n) if cams[g] != cams[qi]]
        if not any(ids[g] == ids[qi] for g in gal):
            continue
        dist = [min(quad_form(feats[qi], feats[g], M) for M in Ms) for g in gal]
        order = sorted(range(len(gal)), key=lambda k: (dist[k], k))
        hits = [ids[gal[k]] == ids[qi] for k in order]
        aps.append(average_precision_def(hits))
        first.append(hits.index(True))
    assert ret.num_queries == len(aps)
    assert ret.map == pytest.approx(sum(aps) / len(aps), abs=1e-12)
    assert ret.rank(1) == pytest.approx(sum(f == 0 for f in first) / len(first))
    assert np.all(np.diff(ret.cmc) >= 0)
    assert ret.cmc[-1] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cmc_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 20))
    feats = rng.standard_normal((n, 2))
    ids = list(rng.integers(0, 3, n).astype(str))
    cams = list(rng.integers(0, 3, n))
    ret = evaluate_retrieval(feats, ids, cams, [np.eye(2)])
    assert np.all((ret.cmc >= 0) & (ret.cmc <= 1))
    assert np.all(np.diff(ret.cmc) >= 0)
    if ret.num_queries:
        assert ret.cmc[-1] == 1.0
    assert 0.0 <= ret.map <= 1.0
    assert ret.num_queries + len(ret.excluded_queries) == n
