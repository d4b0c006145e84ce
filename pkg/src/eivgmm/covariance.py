"""Replicate-based covariance estimation.

Two estimands: the per-observation measurement-error covariance ``sigma_j``
(from pairwise differences of replicates) and the pooled covariance of the
true error-prone covariates ``sigma_x`` (sample covariance of the replicate
means minus the averaged-error correction). The latter is not guaranteed
positive semi-definite in finite samples; consumers that need eigenvalues or
inverses project it onto the PSD cone first (see ``psd_project``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_data import Dataset, average_replicates

__all__ = [
    "CovarianceSet",
    "estimate_sigma_j",
    "estimate_sigma_all",
    "estimate_sigma_x",
    "estimate_covariances",
    "psd_project",
    "pooled_error_covariance",
    "omega_matrices",
]

#: relative ridge added to inverted covariances, scaled by trace/p
OMEGA_RIDGE = 1e-8


@dataclass(frozen=True)
class CovarianceSet:
    """Per-observation error covariances plus the pooled covariate covariance.

    Attributes
    ----------
    sigma_j : (n, p, p) symmetric PSD matrices.
    sigma_x : (p, p) symmetric matrix; may be indefinite in finite samples.
    """

    sigma_j: np.ndarray
    sigma_x: np.ndarray


def estimate_sigma_j(d: Dataset, j: int) -> np.ndarray:
    """Measurement-error covariance of observation j from replicate differences.

    Returns [n_j (n_j - 1)]^{-1} sum_{k<k'} (w_jk - w_jk')(w_jk - w_jk')^T,
    which is symmetric PSD by construction.
    """
    w = d.w_reps[j]
    r = w.shape[0]
    acc = np.zeros((d.p, d.p))
    for k in range(r - 1):
        diffs = w[k] - w[k + 1:]
        acc += diffs.T @ diffs
    return acc / (r * (r - 1))


def estimate_sigma_all(d: Dataset) -> np.ndarray:
    """All sigma_j estimates stacked as (n, p, p).

    Uses the algebraic identity with the replicate sample covariance:
    sum_{k<k'} (w_k - w_k')(w_k - w_k')^T = n_j sum_k (w_k - w_bar)(w_k - w_bar)^T,
    so each sigma_j equals the sample covariance of its replicate rows.
    """
    stacked = d.replicate_stack()
    if stacked is not None:
        r = stacked.shape[1]
        centered = stacked - stacked.mean(axis=1, keepdims=True)
        return np.einsum("jka,jkb->jab", centered, centered) / (r - 1)
    out = np.empty((d.n, d.p, d.p))
    for j, w in enumerate(d.w_reps):
        centered = w - w.mean(axis=0)
        out[j] = centered.T @ centered / (w.shape[0] - 1)
    return out


def estimate_sigma_x(d: Dataset, cov: CovarianceSet) -> np.ndarray:
    """Pooled covariance of the true error-prone covariates.

    (n-1)^{-1} sum_j (w_bar_j - w_bar)(w_bar_j - w_bar)^T
    - n^{-1} sum_j n_j^{-1} sigma_j. Symmetric but possibly indefinite.
    """
    avg = average_replicates(d)
    return sigma_x_from_parts(avg.w_bar, cov.sigma_j, avg.n_rep)


def sigma_x_from_parts(w_bar: np.ndarray, sigma_j: np.ndarray, n_rep: np.ndarray) -> np.ndarray:
    """estimate_sigma_x for precomputed parts (used on bootstrap resamples)."""
    n = w_bar.shape[0]
    centered = w_bar - w_bar.mean(axis=0)
    sample_cov = centered.T @ centered / (n - 1)
    correction = np.einsum("j,jab->ab", 1.0 / n_rep, sigma_j) / n
    return sample_cov - correction


def estimate_covariances(d: Dataset) -> CovarianceSet:
    """Estimate all sigma_j and sigma_x for a dataset."""
    sigma_j = estimate_sigma_all(d)
    avg = average_replicates(d)
    sigma_x = sigma_x_from_parts(avg.w_bar, sigma_j, avg.n_rep)
    return CovarianceSet(sigma_j=sigma_j, sigma_x=sigma_x)


def psd_project(m: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by zeroing negative eigenvalues."""
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals[0] >= 0.0:
        return sym
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def pooled_error_covariance(sigma_j: np.ndarray, n_rep: np.ndarray) -> np.ndarray:
    """sum_j n_j^{-1} sigma_j, the correction matrix of the moment-corrected solve."""
    return np.einsum("j,jab->ab", 1.0 / np.asarray(n_rep, dtype=float), sigma_j)


def omega_matrices(cov: CovarianceSet, n_rep: np.ndarray) -> np.ndarray:
    """Per-observation omega_j = psd(sigma_x) + n_j^{-1} sigma_j, ridge-stabilized.

    The ridge OMEGA_RIDGE * trace(omega_j)/p keeps the inverses well-posed when
    sigma_x is degenerate; it is negligible for well-conditioned inputs.
    """
    p = cov.sigma_x.shape[0]
    sx = psd_project(cov.sigma_x)
    omega = sx[None, :, :] + cov.sigma_j / np.asarray(n_rep, dtype=float)[:, None, None]
    ridge = OMEGA_RIDGE * np.trace(omega, axis1=1, axis2=2) / p
    omega = omega + ridge[:, None, None] * np.eye(p)
    return omega
