import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusiongen.alignment import (align_dataset, compute_reference, mean_covariance, sqrt_inv_psd)
from fusiongen.data import Dataset, Trial


def random_spd(C, rng):
    A = rng.standard_normal((C, 3 * C))
    return A @ A.T / (3 * C)


def group_ds(n, C, T, rng, subject="S1", session="0"):
    trials = [Trial(rng.standard_normal((C, T)) * rng.uniform(0.5, 3, (C, 1)), 0, subject, session)
              for _ in range(n)]
    return trials


# ------------------------------------------------------------------ sqrt_inv_psd


def test_sqrt_inv_of_scaled_identity():
    np.testing.assert_allclose(sqrt_inv_psd(4 * np.eye(3)), 0.5 * np.eye(3), atol=1e-15)


def test_sqrt_inv_of_diagonal():
    np.testing.assert_allclose(sqrt_inv_psd(np.diag([1.0, 4.0])), np.diag([1.0, 0.5]), atol=1e-15)


def test_sqrt_inv_rejects_non_positive():
    with pytest.raises(np.linalg.LinAlgError):
        sqrt_inv_psd(np.diag([1.0, 0.0]))
    with pytest.raises(np.linalg.LinAlgError):
        sqrt_inv_psd(np.diag([1.0, -1.0]), epsilon=0.5)


def test_sqrt_inv_rejects_asymmetric():
    with pytest.raises(ValueError):
        sqrt_inv_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(C=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_sqrt_inv_defining_identity_and_commutation(C, seed):
    A = random_spd(C, np.random.default_rng(seed))
    W = sqrt_inv_psd(A)
    np.testing.assert_array_equal(W, W.T)
    assert np.linalg.norm(W @ A @ W - np.eye(C)) < 1e-10
    assert np.linalg.norm(W @ A - A @ W) < 1e-9


# ------------------------------------------------------------------ compute_reference


def test_reference_of_orthonormal_trial():
    X = np.eye(3)
    ref = compute_reference([X], epsilon_rel=0.0)
    np.testing.assert_allclose(ref.mean_cov, np.eye(3))
    np.testing.assert_allclose(ref.whitener, np.eye(3))


def test_reference_two_trials_mean():
    X1 = np.eye(2)
    X2 = 2 * np.eye(2)
    ref = compute_reference([X1, X2], epsilon_rel=0.0)
    np.testing.assert_allclose(ref.mean_cov, 2.5 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(ref.whitener, np.eye(2) / np.sqrt(2.5), atol=1e-15)


def test_reference_epsilon_definition():
    rng = np.random.default_rng(0)
    trials = group_ds(5, 4, 50, rng)
    ref = compute_reference(trials, epsilon_rel=1e-3)
    assert ref.epsilon == pytest.approx(1e-3 * np.trace(ref.mean_cov) / 4)


def test_reference_invariants_fifty_trials():
    rng = np.random.default_rng(1)
    ref = compute_reference(group_ds(50, 8, 100, rng))
    assert np.abs(ref.mean_cov - ref.mean_cov.T).max() < 1e-12
    assert np.linalg.norm(ref.whitener @ ref.mean_cov @ ref.whitener - np.eye(8)) < 1e-8
    assert np.linalg.eigvalsh(ref.mean_cov + ref.epsilon * np.eye(8)).min() > 0


def test_reference_errors():
    with pytest.raises(ValueError):
        compute_reference([])
    with pytest.raises(ValueError):
        compute_reference([np.ones((2, 5)), np.ones((3, 5))])


# ------------------------------------------------------------------ align_dataset


@settings(max_examples=30, deadline=None)
@given(C=st.sampled_from([2, 4, 8]), n=st.integers(1, 12), seed=st.integers(0, 2**31),
       scope=st.sampled_from(["session", "subject", "global"]))
def test_aligned_groups_have_identity_mean_covariance(C, n, seed, scope):
    rng = np.random.default_rng(seed)
    trials = (group_ds(n, C, 4 * C, rng, "S1", "0") + group_ds(n, C, 4 * C, rng, "S1", "1")
              + group_ds(n, C, 4 * C, rng, "S2", "0"))
    ds = Dataset(trials, [f"c{i}" for i in range(C)], ["x"], 250.0)
    out, refs = align_dataset(ds, scope)
    assert len(refs) == {"session": 3, "subject": 2, "global": 1}[scope]
    keys = {"session": lambda t: (t.subject_id, t.session_id), "subject": lambda t: t.subject_id,
            "global": lambda t: None}[scope]
    for key in {keys(t) for t in out.trials}:
        X = np.stack([t.samples for t in out.trials if keys(t) == key])
        assert np.linalg.norm(mean_covariance(X) - np.eye(C)) < 1e-6


def test_single_trial_group_is_orthonormalized():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((4, 40))
    ds = Dataset([Trial(X, 0)], list("abcd"), ["x"], 250.0)
    out, _ = align_dataset(ds)
    Y = out.trials[0].samples
    assert np.linalg.norm(Y @ Y.T - np.eye(4)) < 1e-6


def test_alignment_is_idempotent():
    rng = np.random.default_rng(3)
    ds = Dataset(group_ds(10, 6, 60, rng), [f"c{i}" for i in range(6)], ["x"], 250.0)
    once, _ = align_dataset(ds)
    twice, refs = align_dataset(once)
    assert np.linalg.norm(refs[0].whitener - np.eye(6)) < 1e-6
    assert np.abs(twice.X - once.X).max() < 1e-6


def test_alignment_channel_permutation_equivariance():
    rng = np.random.default_rng(4)
    trials = group_ds(8, 5, 50, rng)
    P = np.eye(5)[rng.permutation(5)]
    ref = compute_reference(trials)
    ref_p = compute_reference([P @ t.samples for t in trials])
    for t in trials:
        np.testing.assert_allclose(ref_p.apply(P @ t.samples), P @ ref.apply(t.samples), atol=1e-10)


def test_degenerate_group_without_regularization_fails():
    ds = Dataset([Trial(np.ones((3, 10)), 0)], list("abc"), ["x"], 250.0)
    with pytest.raises(np.linalg.LinAlgError):
        align_dataset(ds, epsilon_rel=0.0)


def test_unknown_scope_rejected():
    ds = Dataset([Trial(np.eye(2), 0)], list("ab"), ["x"], 250.0)
    with pytest.raises(ValueError):
        align_dataset(ds, "trial")
