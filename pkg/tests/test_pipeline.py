import numpy as np
import pytest

from ccm.dataset import CameraDataset, SyntheticConfig, TrackletFeature, generate_synthetic
from ccm.evaluation import evaluate_matches
from ccm.pipeline import (
    ACTIVE,
    CONVERGED,
    NO_MATCHES,
    PipelineConfig,
    convergence_check,
    initial_matching,
    run_pipeline,
)

NOISY = SyntheticConfig(
    num_identities=20, num_cameras=4, dim=8, presence_prob=0.7, tracklets_per_presence=(1, 3),
    camera_distortion_scale=1.0, noise_sigma=0.1, seed=21,
)


@pytest.fixture(scope="module")
def noisy_state():
    ds = generate_synthetic(NOISY)
    return ds, run_pipeline(ds, PipelineConfig(max_iter=4))


def test_convergence_check_examples():
    assert convergence_check(5.0, 5.0) == "stop"
    assert convergence_check(5.0, 4.0) == "continue"
    assert convergence_check(5.0, 5.0 - 1e-10) == "stop"
    assert convergence_check(5.0, 6.0) == "stop"


def test_config_validation():
    with pytest.raises(ValueError, match="max_iter"):
        PipelineConfig(max_iter=0).validate()
    with pytest.raises(ValueError, match="theta"):
        PipelineConfig(theta=-1).validate()


def test_two_cameras_rejected():
    t = [TrackletFeature(f"t{i}", i % 2, np.array([float(i), 1.0])) for i in range(4)]
    with pytest.raises(ValueError, match=">=3 cameras"):
        run_pipeline(CameraDataset(t))


def test_single_update_history():
    ds = generate_synthetic(NOISY)
    st = run_pipeline(ds, PipelineConfig(max_iter=1))
    assert [h.t for h in st.history] == [0, 1]
    assert st.t == 1


def test_zero_noise_converges_immediately():
    ds = generate_synthetic(SyntheticConfig(
        num_identities=20, num_cameras=4, presence_prob=1.0, tracklets_per_presence=(2, 3), seed=1,
    ))
    st = run_pipeline(ds, PipelineConfig(max_iter=10))
    ids = {c: ds.identities(c) for c in ds.camera_ids}
    h0 = st.history[0]
    ev = evaluate_matches(h0.consistent, st.clusters, ids)
    assert ev.precision == 1.0 and ev.recall == 1.0
    assert st.t == 1
    assert all(s == CONVERGED for s in st.final.status.values())
    for pq in st.pairs:
        np.testing.assert_array_equal(st.final.assignments[pq], h0.assignments[pq])
        np.testing.assert_array_equal(st.final.consistent[pq], h0.consistent[pq])


def test_deterministic(noisy_state):
    ds, st = noisy_state
    again = run_pipeline(ds, PipelineConfig(max_iter=4))
    assert len(again.history) == len(st.history)
    for a, b in zip(st.history, again.history):
        assert a.status == b.status
        assert a.objective == b.objective
        for pq in st.pairs:
            assert np.array_equal(a.metrics[pq], b.metrics[pq])
            assert np.array_equal(a.assignments[pq], b.assignments[pq])


def test_jobs_do_not_change_results(noisy_state):
    ds, st = noisy_state
    par = run_pipeline(ds, PipelineConfig(max_iter=4, jobs=3))
    for pq in st.pairs:
        assert np.array_equal(par.final.metrics[pq], st.final.metrics[pq])
        assert np.array_equal(par.final.consistent[pq], st.final.consistent[pq])


def test_history_and_metric_invariants(noisy_state):
    _, st = noisy_state
    assert len(st.history) == st.t + 1
    assert st.t <= 4
    for h in st.history:
        for M in h.metrics.values():
            assert np.max(np.abs(M - M.T)) <= 1e-10
            assert np.linalg.eigvalsh(M).min() >= -1e-8
        for X in h.assignments.values():
            assert (X.sum(0) <= 1).all() and (X.sum(1) <= 1).all()


def test_accepted_steps_never_increase_objective(noisy_state):
    _, st = noisy_state
    for h in st.history[1:]:
        for pq, g_prev in h.previous_objective.items():
            assert h.objective[pq] <= g_prev + 1e-9


def test_stop_index_is_first_non_improving_step(noisy_state):
    _, st = noisy_state
    for pq in st.pairs:
        first_stop = None
        for h in st.history[1:]:
            if pq in h.previous_objective and h.objective[pq] > h.previous_objective[pq] - 1e-9:
                first_stop = h.t
                break
        stopped_at = next(
            (h.t for h in st.history[1:] if h.status[pq] in (CONVERGED, NO_MATCHES)), None
        )
        assert stopped_at == first_stop


def test_stopped_pairs_freeze(noisy_state):
    _, st = noisy_state
    for pq in st.pairs:
        for a, b in zip(st.history[1:], st.history[2:]):
            if a.status[pq] != ACTIVE:
                assert np.array_equal(a.metrics[pq], b.metrics[pq])
                assert np.array_equal(a.assignments[pq], b.assignments[pq])
                assert pq not in b.previous_objective


def _contradictory_dataset():
    # every direct match lacks a corroborating two-hop path
    def t(tid, cam, x, y):
        return TrackletFeature(tid, cam, np.array([x, y]), tid[0])

    return CameraDataset([
        t("a0", 0, 0.0, 0.0),
        t("a1", 1, 0.0, 0.1), t("a2", 1, 0.0, 0.11),
        t("b1", 1, 10.0, 0.0), t("b2", 1, 10.0, 0.01),
        t("b3", 2, 10.0, 0.05),
    ])


def test_pairs_without_consistent_matches_are_flagged():
    st = run_pipeline(_contradictory_dataset(), PipelineConfig(max_iter=3))
    assert st.flagged == [(0, 1), (0, 2), (1, 2)]
    assert st.t == 1
    for pq in st.pairs:
        assert st.final.status[pq] == NO_MATCHES
        np.testing.assert_array_equal(st.final.metrics[pq], np.eye(2))


def test_initial_matching_is_t0_of_full_run(noisy_state):
    ds, st = noisy_state
    init = initial_matching(ds, theta=1)
    assert len(init.history) == 1
    for pq in st.pairs:
        assert np.array_equal(init.final.assignments[pq], st.history[0].assignments[pq])
        assert np.array_equal(init.final.consistent[pq], st.history[0].consistent[pq])
