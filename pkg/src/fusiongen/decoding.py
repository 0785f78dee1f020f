"""CSP spatial filtering with log-variance features and an LDA classifier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import Dataset, Trial

DEFAULT_N_FILTERS = 10
EPSILON_REL = 1e-10


@dataclass(frozen=True)
class CSPModel:
    """Spatial filters ``W`` of shape ``(n_filters, C)``.

    ``problems`` lists, per row, the ``(class, rest)`` sub-problem it came
    from (``rest = -1`` means one-vs-rest) and ``eigenvalues`` the matching
    generalized eigenvalue.
    """

    filters: np.ndarray
    eigenvalues: np.ndarray
    problems: tuple = ()
    classes: tuple = ()

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]


@dataclass(frozen=True)
class LDAModel:
    weights: np.ndarray  # (K, f)
    biases: np.ndarray  # (K,)
    classes: tuple = ()
    means: np.ndarray = field(default=None, repr=False)
    covariance: np.ndarray = field(default=None, repr=False)


def _stack(X) -> np.ndarray:
    if isinstance(X, Dataset):
        return X.X
    if isinstance(X, Trial):
        return X.samples[None]
    X = np.asarray(X, dtype=np.float64)
    return X[None] if X.ndim == 2 else X


def trial_covariances(X) -> np.ndarray:
    """Trace-normalized ``X X^T`` per trial, shape ``(n, C, C)``."""
    X = _stack(X)
    covs = np.einsum("nct,ndt->ncd", X, X)
    tr = np.trace(covs, axis1=1, axis2=2)
    if np.any(tr <= 0):
        raise ValueError("a trial has zero energy; its covariance cannot be trace-normalized")
    return covs / tr[:, None, None]


def _regularized(S) -> np.ndarray:
    C = S.shape[0]
    return S + EPSILON_REL * np.trace(S) / C * np.eye(C)


def _alternating(order_len: int) -> list:
    """Indices into ascending eigenvalues: largest, smallest, second largest, ..."""
    out = []
    lo, hi = 0, order_len - 1
    while lo <= hi:
        out.append(hi)
        if lo != hi:
            out.append(lo)
        hi -= 1
        lo += 1
    return out


def _csp_pair(S1, S2):
    """Generalized eigenpairs of ``S1 w = lambda (S1 + S2) w`` in alternating-extreme order."""
    vals, vecs = linalg.eigh(S1, _regularized(S1 + S2))
    order = _alternating(len(vals))
    return vals[order], vecs[:, order].T


def csp_fit(ds, n_filters: int = DEFAULT_N_FILTERS, labels=None) -> CSPModel:
    """Fit CSP filters.

    Two classes use one generalized eigenproblem and keep the
    ``n_filters // 2`` largest and smallest eigenvalues (an odd count takes
    one extra from the large end).  More classes use one-vs-rest problems
    whose filters are interleaved rank by rank, in alternating-extreme order,
    until ``n_filters`` rows are collected.

    ``ds`` is a :class:`Dataset` or an array ``(n, C, T)`` with ``labels``.
    """
    X = _stack(ds)
    y = ds.labels if isinstance(ds, Dataset) else np.asarray(labels)
    if y is None or len(y) != len(X):
        raise ValueError("labels must accompany every trial")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError(f"CSP needs at least two classes, got {len(classes)}")
    if n_filters < 1:
        raise ValueError("n_filters must be positive")
    C = X.shape[1]
    covs = trial_covariances(X)
    means = {int(c): covs[y == c].mean(axis=0) for c in classes}
    if len(classes) == 2:
        if n_filters > C:
            raise ValueError(f"n_filters={n_filters} exceeds the {C} filters available")
        c0, c1 = (int(c) for c in classes)
        vals, W = _csp_pair(means[c0], means[c1])
        # alternating order: the first n_filters rows are the extremes
        return CSPModel(W[:n_filters], vals[:n_filters], tuple((c0, c1) for _ in range(n_filters)),
                        tuple(int(c) for c in classes))
    available = C * len(classes)
    if n_filters > available:
        raise ValueError(f"n_filters={n_filters} exceeds the {available} filters available")
    per = []
    for c in classes:
        c = int(c)
        rest = np.mean([means[o] for o in means if o != c], axis=0)
        per.append((c, *_csp_pair(means[c], rest)))
    rows, vals, probs = [], [], []
    for rank in range(C):
        for c, v, W in per:
            if len(rows) == n_filters:
                break
            rows.append(W[rank])
            vals.append(v[rank])
            probs.append((c, -1))
    return CSPModel(np.array(rows), np.array(vals), tuple(probs), tuple(int(c) for c in classes))


def csp_features(model: CSPModel, trial) -> np.ndarray:
    """``log(var(z_j) / sum_i var(z_i))`` with ``z = W X``; one row per trial.

    A single trial (``Trial`` or ``(C, T)`` array) returns a vector.
    """
    single = isinstance(trial, Trial) or np.ndim(trial) == 2
    X = _stack(trial)
    Z = np.einsum("fc,nct->nft", model.filters, X)
    var = Z.var(axis=2)
    if np.any(var <= 0):
        raise ValueError("a spatially filtered signal has zero variance; log-variance is undefined")
    feats = np.log(var / var.sum(axis=1, keepdims=True))
    return feats[0] if single else feats


def lda_fit(features, labels) -> LDAModel:
    """Shared-covariance LDA with class priors from the training counts."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError(f"LDA needs at least two classes, got {len(classes)}")
    if not np.all(np.isfinite(F)):
        raise ValueError("features must be finite")
    n, dim = F.shape
    means = np.stack([F[y == c].mean(axis=0) for c in classes])
    centered = F - means[np.searchsorted(classes, y)]
    dof = n - len(classes) if n > len(classes) else n
    S = centered.T @ centered / dof
    tr = np.trace(S)
    S = S + (EPSILON_REL * tr / dim if tr > 0 else 1.0) * np.eye(dim)
    Sinv_mu = linalg.solve(S, means.T, assume_a="pos").T  # (K, f)
    priors = np.array([np.mean(y == c) for c in classes])
    biases = -0.5 * np.einsum("kf,kf->k", means, Sinv_mu) + np.log(priors)
    return LDAModel(Sinv_mu, biases, tuple(int(c) for c in classes), means, S)


def lda_scores(model: LDAModel, features) -> np.ndarray:
    """Discriminant scores ``(n, K)`` for features ``(n, f)``."""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return F @ model.weights.T + model.biases


def lda_predict(model: LDAModel, features):
    """Class with the highest discriminant score; ties go to the lowest class index.

    A 1-D input is one feature vector (or, for one-feature models, a vector of
    samples); a scalar returns a scalar label.
    """
    scalar = np.ndim(features) == 0
    F = np.atleast_1d(np.asarray(features, dtype=np.float64))
    if F.ndim == 1:
        F = F[:, None] if model.weights.shape[1] == 1 else F[None]
    pred = np.asarray(model.classes)[np.argmax(lda_scores(model, F), axis=1)]
    return int(pred[0]) if scalar else pred


@dataclass(frozen=True)
class CSPLDA:
    csp: CSPModel
    lda: LDAModel

    def predict(self, X) -> np.ndarray:
        return lda_predict(self.lda, csp_features(self.csp, _stack(X)))


def fit_pipeline(train, n_filters: int = DEFAULT_N_FILTERS, labels=None) -> CSPLDA:
    X = _stack(train)
    y = train.labels if isinstance(train, Dataset) else np.asarray(labels)
    csp = csp_fit(X, n_filters, y)
    return CSPLDA(csp, lda_fit(csp_features(csp, X), y))


def evaluate_accuracy(train: Dataset, test: Dataset, n_filters: int = DEFAULT_N_FILTERS) -> float:
    """Fit CSP+LDA on ``train`` and return the fraction of ``test`` predicted correctly.

    Test labels are read only after every prediction has been made.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    model = fit_pipeline(train, n_filters)
    pred = model.predict(test.X)
    return float(np.mean(pred == test.labels))
