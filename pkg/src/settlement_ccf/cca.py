"""Canonical correlation analysis between a feature block and a label block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError

RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class CcaResult:
    """Paired canonical directions, strongest first.

    ``proj_x`` is (D, K), ``proj_y`` is (C, K) and ``correlations`` has length K.
    Canonical variates ``(X - X.mean(0)) @ proj_x`` have unit sample variance.
    """

    proj_x: np.ndarray
    proj_y: np.ndarray
    correlations: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.correlations)


def one_hot(labels, n_class: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= n_class):
        raise InputError(f"labels must lie in [0, {n_class})")
    out = np.zeros((labels.size, n_class))
    out[np.arange(labels.size), labels] = 1.0
    return out


def default_ridge(cov: np.ndarray) -> np.ndarray:
    """Per-column ridge ``1e-8 * var_j``.

    Scaling with each column's own variance keeps the regularized problem
    invariant under per-column affine maps, which an isotropic ``r * I``
    does not once a node's covariance is rank deficient. Zero-variance
    columns borrow the mean variance (or 1 if every column is constant).
    """
    var = np.diag(cov).copy()
    positive = var > 0
    fill = var[positive].mean() if positive.any() else 1.0
    var[~positive] = fill
    return RIDGE_SCALE * var


def _check_inputs(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) != len(Y):
        raise InputError(f"X has {len(X)} rows but Y has {len(Y)}")
    if len(X) < 2:
        raise InputError("CCA needs at least two rows")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise InputError("CCA inputs must be finite")
    return X, Y


def n_components(Yc: np.ndarray, n_features: int) -> int:
    """min(D, rank of the centered label block, N - 1).

    One-hot labels have rank at most C - 1 after centering, so binary labels
    always give a single component.
    """
    rank = np.linalg.matrix_rank(Yc) if Yc.size else 0
    return int(min(n_features, rank, len(Yc) - 1))


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise NumericalError("regularized covariance is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def ridge_pair(Xc: np.ndarray, Yc: np.ndarray, ridge) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal ridge vectors for the X and Y blocks."""
    if ridge is None:
        n = len(Xc) - 1
        return default_ridge(Xc.T @ Xc / n), default_ridge(Yc.T @ Yc / n)
    if np.ndim(ridge) == 0:
        ridge = (float(ridge), float(ridge))
    rx, ry = (float(r) for r in ridge)
    if not (rx > 0 and ry > 0):
        raise InputError("ridge must be positive")
    return np.full(Xc.shape[1], rx), np.full(Yc.shape[1], ry)


def compute_cca(X, Y, ridge=None) -> CcaResult:
    """CCA by whitening both blocks and taking the SVD of the cross-covariance.

    ``ridge`` is added to the diagonal of both within-block covariances. It may
    be a scalar, an ``(rx, ry)`` pair, or None for ``1e-8`` times each
    column's variance (see :func:`default_ridge`). Feature directions are
    signed so their largest-magnitude entry is positive; label directions
    follow so each pair stays positively correlated.
    """
    X, Y = _check_inputs(X, Y)
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    n = len(X) - 1
    rx, ry = ridge_pair(Xc, Yc, ridge)
    Cxx = Xc.T @ Xc / n + np.diag(rx)
    Cyy = Yc.T @ Yc / n + np.diag(ry)
    Cxy = Xc.T @ Yc / n

    Wx = _inv_sqrt(Cxx)
    Wy = _inv_sqrt(Cyy)
    U, s, Vt = np.linalg.svd(Wx @ Cxy @ Wy)
    k = n_components(Yc, X.shape[1])
    proj_x = Wx @ U[:, :k]
    proj_y = Wy @ Vt[:k].T
    corr = s[:k].copy()
    if not (np.isfinite(proj_x).all() and np.isfinite(corr).all()):
        raise NumericalError("CCA produced non-finite output")

    for j in range(k):
        pivot = np.argmax(np.abs(proj_x[:, j]))
        if proj_x[pivot, j] < 0:
            proj_x[:, j] *= -1
            proj_y[:, j] *= -1
    return CcaResult(proj_x, proj_y, corr)
