"""Euclidean alignment: whiten trial groups so their mean covariance is the identity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .data import Dataset, Trial, group_indices

SCOPES = ("session", "subject", "global")
DEFAULT_EPSILON_REL = 1e-10


@dataclass(frozen=True)
class AlignmentReference:
    mean_cov: np.ndarray
    whitener: np.ndarray
    epsilon: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Whiten one ``C x T`` matrix or a stack ``(n, C, T)``."""
        return np.matmul(self.whitener, x)

    def apply_trial(self, trial: Trial) -> Trial:
        return trial.with_samples(self.whitener @ trial.samples)


def sqrt_inv_psd(A, epsilon: float = 0.0) -> np.ndarray:
    """Symmetric inverse square root of ``A + epsilon * I``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    lam, Q = eigh(A + epsilon * np.eye(A.shape[0]))
    # eigenvalues at round-off level of the largest count as zero
    floor = A.shape[0] * np.finfo(np.float64).eps * max(abs(lam).max(), np.finfo(np.float64).tiny)
    if np.any(lam <= floor):
        raise np.linalg.LinAlgError(f"matrix + eps*I is not positive definite (min eigenvalue {lam.min():.3e})")
    W = (Q / np.sqrt(lam)) @ Q.T
    return 0.5 * (W + W.T)


def mean_covariance(X) -> np.ndarray:
    """``(1/n) sum_i X_i X_i^T`` over a stack ``(n, C, T)``."""
    X = np.asarray(X, dtype=np.float64)
    R = np.einsum("nct,ndt->cd", X, X) / X.shape[0]
    return 0.5 * (R + R.T)


def compute_reference(trials, epsilon_rel: float = DEFAULT_EPSILON_REL) -> AlignmentReference:
    if len(trials) == 0:
        raise ValueError("cannot build an alignment reference from zero trials")
    mats = [t.samples if isinstance(t, Trial) else np.asarray(t, dtype=np.float64) for t in trials]
    C = mats[0].shape[0]
    if any(m.shape[0] != C for m in mats):
        raise ValueError("trials disagree on channel count")
    R = sum(m @ m.T for m in mats) / len(mats)
    R = 0.5 * (R + R.T)
    eps = epsilon_rel * np.trace(R) / C
    return AlignmentReference(R, sqrt_inv_psd(R, eps), float(eps))


def scope_keys(ds: Dataset, scope: str) -> list:
    if scope == "session":
        return [(t.subject_id, t.session_id) for t in ds.trials]
    if scope == "subject":
        return [t.subject_id for t in ds.trials]
    if scope == "global":
        return [None] * len(ds.trials)
    raise ValueError(f"unknown alignment scope {scope!r}; choose from {SCOPES}")


def align_dataset(ds: Dataset, scope: str = "session",
                  epsilon_rel: float = DEFAULT_EPSILON_REL):
    """Whiten every scope group with its own reference.

    Returns the aligned dataset and one reference per group, in group order.
    ``session`` groups by (subject, session).
    """
    groups = group_indices(ds, scope_keys(ds, scope))
    trials = list(ds.trials)
    refs = []
    for idx in groups.values():
        ref = compute_reference([ds.trials[i] for i in idx], epsilon_rel)
        for i in idx:
            trials[i] = ref.apply_trial(ds.trials[i])
        refs.append(ref)
    return ds.with_trials(trials), refs
