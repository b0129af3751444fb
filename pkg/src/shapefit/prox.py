"""Exact univariate proximal operators and projections.

These are the building blocks for every model variant: centering (the
projection onto the zero-sum hyperplane), block soft thresholding (the prox
of the Euclidean-norm penalty), total-variation denoising, isotonic
projection, and the one-sided variant of the total-variation prox used for
approximately convex fits.

All functions are pure: they validate, copy, and never mutate their inputs.
The heavy lifting is done by compiled kernels in :mod:`shapefit._kernels`.
"""

import numpy as np

from . import _kernels

__all__ = [
    "center",
    "block_soft_threshold",
    "tv_prox",
    "pav_isotonic",
    "pav_isotonic_nonneg",
    "oneside_tv_prox",
]


def _as_vector(v, name):
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def _check_lambda(lam):
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"penalty weight must be a finite nonnegative real, got {lam}")
    return lam


def center(z):
    """Subtract the mean: the Euclidean projection onto {z : sum(z) = 0}.

    Parameters
    ----------
    z : array-like, shape (n,)
        Input vector, n >= 1.

    Returns
    -------
    np.ndarray
        z - mean(z).
    """
    z = _as_vector(z, "z")
    return z - z.mean()


def block_soft_threshold(r, lambda_s):
    """Shrink a whole vector toward zero: (1 - lambda_s/||r||_2)_+ * r.

    Returns the zero vector whenever ||r||_2 <= lambda_s.  This is the
    proximal map of the Euclidean-norm penalty and the operator that
    produces exact component sparsity.
    """
    r = _as_vector(r, "r")
    lambda_s = _check_lambda(lambda_s)
    nrm = np.linalg.norm(r)
    if nrm <= lambda_s:
        return np.zeros_like(r)
    if lambda_s == 0.0:
        return r.copy()
    return (1.0 - lambda_s / nrm) * r


def tv_prox(v, lam):
    """Exact minimizer of 0.5*||z - v||^2 + lam * sum_i |z_i - z_{i-1}|.

    Computed by a direct (non-iterative) O(n) taut-string algorithm.

    Parameters
    ----------
    v : array-like, shape (n,)
    lam : float
        Nonnegative penalty weight.
    """
    v = _as_vector(v, "v")
    lam = _check_lambda(lam)
    return _kernels.tv1d(v, lam)


def pav_isotonic(v):
    """Exact Euclidean projection onto {z : z_1 <= ... <= z_n}.

    Pool-adjacent-violators: violating runs are pooled and carry their
    block means.  Already-nondecreasing inputs are returned unchanged.
    """
    v = _as_vector(v, "v")
    return _kernels.pav(v)


def pav_isotonic_nonneg(v):
    """Exact Euclidean projection onto {z : 0 <= z_1 <= ... <= z_n}.

    Equal to clipping the isotonic projection at zero, which is exact for
    this cone: the zero clamp only ever truncates a leading run of blocks.
    """
    v = _as_vector(v, "v")
    return np.maximum(_kernels.pav(v), 0.0)


def oneside_tv_prox(v, lam):
    """Exact minimizer of 0.5*||z - v||^2 + lam * sum_i max(z_{i-1} - z_i, 0).

    Penalizes decreases only; nondecreasing inputs are fixed points and the
    solution tends to the isotonic projection as lam grows.  Solved exactly
    by tracing the agglomerative block-merging path in lam.
    """
    v = _as_vector(v, "v")
    lam = _check_lambda(lam)
    return _kernels.nearly_isotonic(v, lam)
