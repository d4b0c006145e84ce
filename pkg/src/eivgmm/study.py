"""Monte Carlo study driver: generate, fit every estimator, summarize.

Used by the `simulate` and `reproduce` CLI commands. Replications run in a
process pool; every random stream is keyed by (seed, replication index), so
results are identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import estimate_covariances
from .errors import EivError
from .gmm import fit_gmm_multi
from .metrics import mc_se_summary, robust_mse
from .model_data import build_design
from .moment_correction import fit_mc, fit_ols
from .phase import PhaseConfig
from .simgen import SimConfig, gen_dataset

__all__ = ["StudyResult", "run_study", "run_replication", "ESTIMATORS", "GMM_SCHEMES"]

ESTIMATORS = ("true", "naive", "mc", "gmm_equal", "gmm_mm", "gmm_ql")
GMM_SCHEMES = {"gmm_equal": "equal", "gmm_mm": "minimax", "gmm_ql": "quasi_likelihood"}
DISPLAY_NAMES = {
    "true": "True", "naive": "Naive", "mc": "MC",
    "gmm_equal": "GMM-Equal", "gmm_mm": "GMM-MM", "gmm_ql": "GMM-QL",
}

_limiter = None


def _limit_worker_threads():
    """Pin BLAS pools to one thread inside pool workers (processes provide the
    parallelism; nested BLAS threads only oversubscribe)."""
    global _limiter
    try:
        from threadpoolctl import threadpool_limits
        _limiter = threadpool_limits(limits=1)
    except ImportError:
        pass


@dataclass
class StudyResult:
    """Stacked per-replication estimates plus trimmed metrics and SE summaries."""

    config: SimConfig
    estimators: tuple
    estimates: dict            # name -> (M, k) array, NaN rows mark failures
    ses: dict                  # name -> (M, k) array of reported SEs (GMM only)
    det_metrics: dict = field(default_factory=dict)
    se_summary: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    n_converged: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return len({(m, name) for m, name, _ in self.failures})

    @property
    def failure_fraction(self) -> float:
        total = self.config.m_reps * len(self.estimators)
        return self.n_failed / total if total else 0.0


def _bootstrap_seed(cfg: SimConfig, m: int, scheme_idx: int) -> int:
    ss = np.random.SeedSequence([int(cfg.seed), 1000003, int(m), int(scheme_idx)])
    return int(ss.generate_state(1)[0])


def run_replication(cfg: SimConfig, m: int, estimators=ESTIMATORS, b: int = 100,
                    compute_se: bool = True, phase_cfg: PhaseConfig = PhaseConfig()):
    """Generate dataset m and fit the requested estimators.

    Returns (estimates, ses, errors): dicts keyed by estimator name, plus a
    list of (estimator, message) for failed fits.
    """
    d, x_true = gen_dataset(cfg, m)
    k = cfg.p + cfg.q + 1
    estimates, ses, errors = {}, {}, []
    nan_row = np.full(k, np.nan)

    gmm_names = [name for name in estimators if name in GMM_SCHEMES]
    gmm_fits = {}
    cov = design = mc = None
    if any(name not in ("true", "naive") for name in estimators):
        try:
            cov = estimate_covariances(d)
            design = build_design(d)
            mc = fit_mc(d, cov, design)
            if gmm_names:
                fits = fit_gmm_multi(
                    d, tuple(GMM_SCHEMES[name] for name in gmm_names), b=b,
                    seed=_bootstrap_seed(cfg, m, 0), cfg=phase_cfg,
                    compute_se=compute_se, mc=mc, cov=cov, design=design,
                )
                gmm_fits = {name: fits[GMM_SCHEMES[name]] for name in gmm_names}
        except (EivError, np.linalg.LinAlgError) as exc:
            errors.extend((name, str(exc)) for name in estimators
                          if name not in ("true", "naive"))
            mc = None

    for name in estimators:
        est, se = nan_row, None
        try:
            if name == "true":
                est = fit_ols(d.y, np.column_stack([x_true, d.z]), cfg.p).theta
            elif name == "naive":
                if design is None:
                    design = build_design(d)
                est = fit_ols(d.y, design.v, cfg.p).theta
            elif name == "mc":
                if mc is not None:
                    est = mc.theta.theta
            elif name in gmm_fits:
                fit = gmm_fits[name]
                est, se = fit.theta.theta, fit.se
                if not fit.converged:
                    errors.append((name, "optimizer did not converge"))
        except (EivError, np.linalg.LinAlgError) as exc:
            errors.append((name, str(exc)))
            est, se = nan_row, None
        estimates[name] = est
        ses[name] = se if se is not None else np.full(k, np.nan)
    return estimates, ses, errors


def _job(args):
    cfg, m, estimators, b, compute_se = args
    return m, run_replication(cfg, m, estimators, b, compute_se)


def run_study(cfg: SimConfig, estimators=ESTIMATORS, b: int = 100, workers: int = 1,
              compute_se: bool = True, metric_seed: int | None = None) -> StudyResult:
    """Run cfg.m_reps replications and summarize.

    Trimmed det metrics need at least 20 successful replications per
    estimator; SE summaries cover the GMM variants when compute_se is set.
    """
    m_reps = cfg.m_reps
    k = cfg.p + cfg.q + 1
    estimates = {name: np.full((m_reps, k), np.nan) for name in estimators}
    ses = {name: np.full((m_reps, k), np.nan) for name in estimators}
    failures = []

    jobs = [(cfg, m, tuple(estimators), b, compute_se) for m in range(m_reps)]
    if workers > 1 and m_reps > 1:
        with ProcessPoolExecutor(max_workers=workers,
                                 initializer=_limit_worker_threads) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, m_reps // (4 * workers))))
    else:
        results = [_job(job) for job in jobs]

    for m, (est_m, se_m, err_m) in sorted(results):
        for name in estimators:
            estimates[name][m] = est_m[name]
            ses[name][m] = se_m[name]
        failures.extend((m, name, msg) for name, msg in err_m)

    result = StudyResult(config=cfg, estimators=tuple(estimators),
                         estimates=estimates, ses=ses, failures=failures)
    theta0 = cfg.theta0
    for name in estimators:
        rows = estimates[name]
        ok = np.all(np.isfinite(rows), axis=1)
        result.n_converged[name] = int(ok.sum())
        if ok.sum() >= 20:
            seed = cfg.seed if metric_seed is None else metric_seed
            result.det_metrics[name] = robust_mse(rows[ok], theta0, seed=seed).det_metric
        if compute_se and name in GMM_SCHEMES:
            se_ok = ok & np.all(np.isfinite(ses[name]), axis=1)
            if se_ok.sum() >= 2:
                result.se_summary[name] = mc_se_summary(rows[se_ok], ses[name][se_ok])
    return result
