"""Combined estimator: stacked estimating equations, bootstrap covariance, and
the quadratic-form minimization with sandwich standard errors.

The 2(p+q+1) stacked equations concatenate the corrected least-squares
gradient and the phase-discrepancy gradient. Their covariance is estimated by
an estimating-function bootstrap: observations are resampled with replacement
(replicate groups kept intact), all data-dependent ingredients (per-observation
covariances, pooled covariance, phase weights, frequency cutoff) are recomputed
per resample, and the stacked gradient is re-evaluated at a fixed consistent
initial estimate. The final estimate minimizes the quadratic form in the
stacked equations weighted by the inverse bootstrap covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .covariance import (
    CovarianceSet,
    estimate_covariances,
    pooled_error_covariance,
    sigma_x_from_parts,
)
from .errors import BootstrapInstabilityError, EivError, StandardErrorError
from .model_data import Dataset, ParamVector, RegressionDesign, as_theta, build_design
from .moment_correction import McFit, fit_mc, grad_corrected_l2, mc_system
from .phase import EcfOutcome, PhaseConfig, build_ecf, grad_and_hessian, grad_dtilde
from .weights import WeightVector, make_weights

__all__ = [
    "StackedGradient",
    "GmmFit",
    "stacked_gradient",
    "bootstrap_omega",
    "fit_gmm",
    "gmm_standard_errors",
]

#: eigenvalue floor for the bootstrap covariance, relative to trace/dim
OMEGA_FLOOR = 1e-10
MAX_ITER = 2000
STEP_TOL = 1e-9
Q_DECREASE_TOL = 1e-12
MAX_BOOT_FAILURE_FRAC = 0.10


@dataclass(frozen=True)
class StackedGradient:
    """Stacked estimating equations, ordered
    [corrected-LS beta, corrected-LS gamma, phase beta, phase gamma]."""

    s: np.ndarray


@dataclass
class GmmFit:
    """Result of the combined fit.

    theta minimizes q_value = s' omega_hat^{-1} s; p1_hat stacks the transposed
    Jacobian blocks of the estimating equations; se holds sandwich standard
    errors (None until computed or when the fit did not converge).
    """

    theta: ParamVector
    omega_hat: np.ndarray
    p1_hat: np.ndarray | None
    se: np.ndarray | None
    q_value: float
    bootstrap_b: int
    converged: bool
    n_iter: int
    scheme: str
    theta_init: ParamVector
    weights: WeightVector
    ecf: EcfOutcome
    n_boot_failed: int = 0
    used_fallback: bool = False
    diagnostics: dict = field(default_factory=dict)


def _stacked(theta, v, y, sig_w, q, ecf) -> np.ndarray:
    return np.concatenate([
        grad_corrected_l2(theta, v, y, sig_w),
        grad_dtilde(theta, v, q, ecf),
    ])


def stacked_gradient(theta, d: Dataset, cov: CovarianceSet, weights: WeightVector,
                     ecf: EcfOutcome, design: RegressionDesign | None = None) -> StackedGradient:
    """Evaluate the 2(p+q+1) stacked estimating equations at theta."""
    if design is None:
        design = build_design(d)
    sig_w = pooled_error_covariance(cov.sigma_j, d.n_rep)
    s = _stacked(as_theta(theta), design.v, d.y, sig_w, weights.q, ecf)
    return StackedGradient(s=s)


def _floor_eigh(omega: np.ndarray):
    """Symmetrize and floor the spectrum; returns (floored matrix, inverse)."""
    sym = 0.5 * (omega + omega.T)
    vals, vecs = np.linalg.eigh(sym)
    floor = max(OMEGA_FLOOR * np.trace(sym) / sym.shape[0], 1e-30)
    vals = np.maximum(vals, floor)
    floored = (vecs * vals) @ vecs.T
    inv = (vecs / vals) @ vecs.T
    return floored, inv


def _bootstrap_accumulate(d: Dataset, theta, b: int, seed: int, schemes,
                          cfg: PhaseConfig, design: RegressionDesign,
                          cov: CovarianceSet, center: bool = True):
    """Shared bootstrap pass: one set of resamples, one gradient per scheme.

    Resample-invariant work (index draw, pooled covariance, frequency cutoff,
    corrected-LS gradient) is done once per resample and reused for every
    weight scheme, which is what makes fitting several schemes on one dataset
    cheap. Returns {scheme: (omega, failures)}.
    """
    theta = as_theta(theta)
    v, y = design.v, d.y
    n, p = d.n, d.p
    sigma_j = cov.sigma_j
    n_rep = d.n_rep.astype(float)
    dim = 2 * design.k
    acc = {s: np.zeros((dim, dim)) for s in schemes}
    mean_acc = {s: np.zeros(dim) for s in schemes}
    failures = {s: [] for s in schemes}
    for idx_b in range(b):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), idx_b]))
        idx = rng.integers(0, n, size=n)
        vb, yb = v[idx], y[idx]
        sj, nr = sigma_j[idx], n_rep[idx]
        w_bar_b = vb[:, :p]
        try:
            cov_b = CovarianceSet(sigma_j=sj, sigma_x=sigma_x_from_parts(w_bar_b, sj, nr))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                ecf_b = build_ecf(yb, cfg)
            s_mc = grad_corrected_l2(theta, vb, yb, pooled_error_covariance(sj, nr))
        except EivError as exc:
            for s in schemes:
                failures[s].append((idx_b, str(exc)))
            continue
        for scheme in schemes:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    q_b = make_weights(scheme, cov_b, w_bar_b, nr)
                s_vec = np.concatenate([s_mc, grad_dtilde(theta, vb, q_b.q, ecf_b)])
            except EivError as exc:
                failures[scheme].append((idx_b, str(exc)))
                continue
            if not np.all(np.isfinite(s_vec)):
                failures[scheme].append((idx_b, "non-finite stacked gradient"))
                continue
            acc[scheme] += np.outer(s_vec, s_vec)
            mean_acc[scheme] += s_vec
    out = {}
    for scheme in schemes:
        n_bad = len(failures[scheme])
        if n_bad > MAX_BOOT_FAILURE_FRAC * b:
            raise BootstrapInstabilityError(
                f"{n_bad}/{b} bootstrap resamples failed for scheme {scheme!r}; "
                f"first: {failures[scheme][0][1]}"
            )
        n_ok = b - n_bad
        second_moment = acc[scheme] / n_ok
        if center:
            # covariance about the bootstrap mean; without this the phase
            # block is inflated by the squared mean of its gradient at the
            # initial estimate, which buries the phase information whenever
            # the initial estimate is off (exactly the heavy-tail scenarios
            # the combination exists for)
            mean = mean_acc[scheme] / n_ok
            second_moment = second_moment - np.outer(mean, mean)
        omega, _ = _floor_eigh(second_moment)
        out[scheme] = (omega, failures[scheme])
    return out


def bootstrap_omega(d: Dataset, theta_init, b: int, seed: int, scheme: str,
                    cfg: PhaseConfig = PhaseConfig(),
                    design: RegressionDesign | None = None,
                    cov: CovarianceSet | None = None,
                    return_failures: bool = False, center: bool = True):
    """Estimating-function bootstrap covariance of the stacked equations.

    Resamples observations with replacement (never replicates within an
    observation); per resample the covariances, weights, and frequency cutoff
    are recomputed and the stacked gradient is evaluated at theta_init. By
    default the second moment is taken about the bootstrap mean (center=False
    gives the raw uncentered moment). The result is symmetrized and
    eigenvalue-floored. Replicate streams are derived from (seed, resample
    index), so the result is reproducible independent of execution order.
    """
    if b < 25:
        raise ValueError("need at least 25 bootstrap resamples")
    if design is None:
        design = build_design(d)
    if cov is None:
        cov = estimate_covariances(d)
    omega, failures = _bootstrap_accumulate(d, theta_init, b, seed, (scheme,),
                                            cfg, design, cov, center=center)[scheme]
    if return_failures:
        return omega, failures
    return omega


def _minimize_q(fun_grad, x0, max_iter=MAX_ITER):
    """Damped BFGS with Armijo backtracking; falls back to Nelder-Mead after
    three line-search failures. Convergence: step max-norm <= STEP_TOL and
    relative objective decrease <= Q_DECREASE_TOL."""
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    h = np.eye(x.size)
    best_f, best_x = f, x.copy()
    ls_failures = 0
    n_iter = 0
    converged = False
    used_fallback = False
    while n_iter < max_iter:
        n_iter += 1
        if np.max(np.abs(g)) <= 1e-14 * (1.0 + abs(f)):
            converged = True
            break
        direction = -h @ g
        dg = direction @ g
        if dg >= 0.0:
            h = np.eye(x.size)
            direction = -g
            dg = -(g @ g)
        step = 1.0
        accepted = False
        for _ in range(50):
            xn = x + step * direction
            fn, gn = fun_grad(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * step * dg:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            ls_failures += 1
            h = np.eye(x.size)
            if ls_failures >= 3:
                res = scipy.optimize.minimize(
                    lambda z: fun_grad(z)[0], best_x, method="Nelder-Mead",
                    options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000},
                )
                if res.fun < best_f:
                    best_f, best_x = float(res.fun), res.x
                used_fallback = True
                converged = bool(res.success)
                n_iter += int(res.nit)
                break
            continue
        s = xn - x
        yv = gn - g
        sy = s @ yv
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            hy = h @ yv
            h = h - rho * (np.outer(s, hy) + np.outer(hy, s)) \
                + rho * (rho * (yv @ hy) + 1.0) * np.outer(s, s)
        small_step = np.max(np.abs(s)) <= STEP_TOL
        small_decrease = (f - fn) <= Q_DECREASE_TOL * max(1.0, abs(f))
        x, f, g = xn, fn, gn
        if f < best_f:
            best_f, best_x = f, x.copy()
        if small_step and small_decrease:
            converged = True
            break
    return best_x, best_f, n_iter, converged, used_fallback


def _fit_from_omega(d, scheme, omega, n_failures, b, mc, cov, design, ecf, cfg,
                    compute_se) -> GmmFit:
    """Minimize the quadratic form for one scheme given its bootstrap covariance."""
    omega, omega_inv = _floor_eigh(omega)
    weights = make_weights(scheme, cov, design.v[:, :d.p], d.n_rep)
    sig_w = pooled_error_covariance(cov.sigma_j, d.n_rep)
    v, y = design.v, d.y
    jac_mc = _mc_jacobian(v, y, sig_w)

    def fun_grad(theta):
        s_mc = grad_corrected_l2(theta, v, y, sig_w)
        s_ph, hess_ph = grad_and_hessian(theta, v, weights.q, ecf)
        s = np.concatenate([s_mc, s_ph])
        jac = np.vstack([jac_mc, hess_ph])
        q_val = s @ omega_inv @ s
        grad = 2.0 * jac.T @ (omega_inv @ s)
        return q_val, grad

    x, q_val, n_iter, converged, used_fallback = _minimize_q(fun_grad, mc.theta.theta)
    fit = GmmFit(
        theta=ParamVector.from_theta(x, d.p),
        omega_hat=omega,
        p1_hat=None,
        se=None,
        q_value=float(q_val),
        bootstrap_b=b,
        converged=converged,
        n_iter=n_iter,
        scheme=weights.scheme,
        theta_init=mc.theta,
        weights=weights,
        ecf=ecf,
        n_boot_failed=n_failures,
        used_fallback=used_fallback,
        diagnostics={"max_q_times_n": weights.max_q_times_n, "t_star": ecf.t_star},
    )
    if compute_se and converged:
        gmm_standard_errors(fit, d, cov, weights, ecf, design=design)
    return fit


def fit_gmm(d: Dataset, scheme: str = "minimax", b: int = 100, seed: int = 0,
            cfg: PhaseConfig = PhaseConfig(), compute_se: bool = True,
            mc: McFit | None = None, cov: CovarianceSet | None = None,
            design: RegressionDesign | None = None) -> GmmFit:
    """Two-step combined fit.

    Step one computes the moment-corrected estimate and the bootstrap
    covariance of the stacked equations at it; step two minimizes the
    quadratic form from that estimate. Standard errors use the sandwich with
    the analytic least-squares Jacobian block and a central-difference
    Jacobian of the phase gradient.
    """
    fits = fit_gmm_multi(d, (scheme,), b=b, seed=seed, cfg=cfg,
                         compute_se=compute_se, mc=mc, cov=cov, design=design)
    return fits[scheme]


def fit_gmm_multi(d: Dataset, schemes, b: int = 100, seed: int = 0,
                  cfg: PhaseConfig = PhaseConfig(), compute_se: bool = True,
                  mc: McFit | None = None, cov: CovarianceSet | None = None,
                  design: RegressionDesign | None = None,
                  center: bool = True) -> dict:
    """Fit several weight schemes on one dataset, sharing the bootstrap resamples.

    Sharing the resample-level work (covariances, frequency cutoffs, corrected
    least-squares gradients) across schemes changes nothing statistically and
    keeps multi-scheme studies at roughly single-scheme cost. Returns
    {scheme: GmmFit}.
    """
    if b < 25:
        raise ValueError("need at least 25 bootstrap resamples")
    if cov is None:
        cov = estimate_covariances(d)
    if design is None:
        design = build_design(d)
    if mc is None:
        mc = fit_mc(d, cov, design)
    per_scheme = _bootstrap_accumulate(d, mc.theta, b, seed, tuple(schemes),
                                       cfg, design, cov, center=center)
    ecf = build_ecf(d.y, cfg)
    return {
        scheme: _fit_from_omega(d, scheme, omega, len(fails), b, mc, cov, design,
                                ecf, cfg, compute_se)
        for scheme, (omega, fails) in per_scheme.items()
    }


def _mc_jacobian(v, y, sig_w):
    gram, _ = mc_system(v, y, sig_w)
    return 2.0 / y.size * gram


def gmm_standard_errors(fit: GmmFit, d: Dataset, cov: CovarianceSet,
                        weights: WeightVector, ecf: EcfOutcome,
                        design: RegressionDesign | None = None) -> np.ndarray:
    """Sandwich standard errors at the fitted estimate.

    The corrected least-squares block of the Jacobian is analytic (the
    equations are linear); the phase block is a central-difference Jacobian of
    the phase gradient with per-coordinate step 1e-5 (1 + |theta_i|),
    symmetrized. Stores p1_hat and se on the fit and returns the se vector.
    """
    if design is None:
        design = build_design(d)
    sig_w = pooled_error_covariance(cov.sigma_j, d.n_rep)
    theta = fit.theta.theta
    k = theta.size
    jac_mc = _mc_jacobian(design.v, d.y, sig_w)
    jac_ph = np.empty((k, k))
    for i in range(k):
        h = 1e-5 * (1.0 + abs(theta[i]))
        hi = np.zeros(k)
        hi[i] = h
        g_plus = grad_dtilde(theta + hi, design.v, weights.q, ecf)
        g_minus = grad_dtilde(theta - hi, design.v, weights.q, ecf)
        jac_ph[:, i] = (g_plus - g_minus) / (2.0 * h)
    jac_ph = 0.5 * (jac_ph + jac_ph.T)
    p1 = np.hstack([jac_mc.T, jac_ph.T])
    _, omega_inv = _floor_eigh(fit.omega_hat)
    sandwich = p1 @ omega_inv @ p1.T
    cond = np.linalg.cond(sandwich)
    if not np.isfinite(cond) or cond > 1e14:
        raise StandardErrorError(
            f"sandwich matrix is singular (cond={cond:.3g}); standard errors unavailable"
        )
    cov_theta = np.linalg.inv(sandwich)
    diag = np.diag(cov_theta)
    if np.any(diag <= 0.0):
        raise StandardErrorError("sandwich inverse has non-positive diagonal entries")
    fit.p1_hat = p1
    fit.se = np.sqrt(diag)
    return fit.se
