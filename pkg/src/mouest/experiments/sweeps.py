"""Accuracy sweeps over network size and sample count, and the
intermediate-quantity diagnosis of the Bayesian estimator."""
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import matfun
from ..errors import MOUError
from ..estimators import LyapunovFitConfig, accuracy, bayesian_estimate, lyapunov_fit
from ..model import jacobian, model_cov, model_lagged_cov, propagator
from ..synth import NetworkConfig, draw_params, empirical_moments, simulate, transition_moments

log = logging.getLogger(__name__)

NAN = float("nan")


@dataclass(frozen=True)
class TrialSettings:
    """Protocol constants shared by every trial of a sweep."""

    density: float = 0.2
    tau_x: float = 1.0
    euler_dt: float = 0.05
    sample_interval: float = 1.0
    lag_steps: int = 1
    record_time: bool = False
    fit: LyapunovFitConfig = field(default_factory=LyapunovFitConfig)


@dataclass
class AccuracyRecord:
    m: int
    n: int
    method: str
    seed: int
    accuracy_c: float
    accuracy_sigma: float
    imag_ratio: float
    wall_time_ms: float


@dataclass
class DiagnosisRecord:
    m: int
    seed: int
    corr_precision: float
    corr_lagged: float
    corr_lambda: float
    corr_logm: float
    corr_c: float
    imag_ratio: float


ACCURACY_FIELDS = [f.name for f in fields(AccuracyRecord)]
DIAGNOSIS_FIELDS = [f.name for f in fields(DiagnosisRecord)]


def trial_rng(seed, m, n):
    """Random stream for one (seed, m, n) cell, independent of run order."""
    return np.random.default_rng([int(seed), int(m), int(n)])


def simulate_trial(m, n, seed, settings):
    """Draw parameters and simulate `n` samples for one sweep cell."""
    rng = trial_rng(seed, m, n)
    params, rejected = draw_params(NetworkConfig(m, settings.density), rng, settings.tau_x)
    if rejected:
        log.info("m=%d seed=%d: %d unstable connectivity draws rejected", m, seed, rejected)
    X = simulate(
        params,
        n * settings.sample_interval,
        rng,
        euler_dt=settings.euler_dt,
        sample_interval=settings.sample_interval,
    )
    return params, X


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, 1e3 * (time.perf_counter() - t0)


def run_trial(m, n, seed, settings):
    """Both estimators on one simulated series; returns two records.

    A failing estimator yields a NaN-sentinel record instead of an exception.
    """
    try:
        params, X = simulate_trial(m, n, seed, settings)
    except MOUError as exc:
        log.warning("simulation failed (m=%d, n=%d, seed=%d): %s", m, n, seed, exc)
        return [AccuracyRecord(m, n, meth, seed, NAN, NAN, NAN, NAN) for meth in ("bayesian", "lyapunov")]

    out = []
    for method in ("bayesian", "lyapunov"):
        try:
            if method == "bayesian":
                est, ms = _timed(bayesian_estimate, X)
            else:
                est, ms = _timed(lyapunov_fit, empirical_moments(X, settings.lag_steps), settings.fit)
            acc_c, acc_s = accuracy(params.C, est, params.sigma_diag)
            rec = AccuracyRecord(m, n, method, seed, acc_c, acc_s, est.imag_ratio, ms if settings.record_time else NAN)
        except MOUError as exc:
            log.warning("%s failed (m=%d, n=%d, seed=%d): %s", method, m, n, seed, exc)
            rec = AccuracyRecord(m, n, method, seed, NAN, NAN, NAN, NAN)
        out.append(rec)
    return out


def _run_cells(func, cells, workers):
    if workers <= 1:
        return [func(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order
        return list(pool.map(func, *zip(*cells)))


def _flatten(groups):
    return [r for g in groups for r in g]


def sweep_nodes(m_values, n_fixed=500, repeats=100, base_seed=0, settings=None, workers=1):
    """Accuracy of both estimators as a function of network size.

    Trial ``r`` uses seed ``base_seed + r``; the random stream is keyed on
    ``(seed, m, n)`` so every cell can be recomputed in isolation.
    """
    settings = settings or TrialSettings()
    if any(m < 2 for m in m_values) or repeats < 1:
        raise ValueError("need m >= 2 and repeats >= 1")
    cells = [(m, n_fixed, base_seed + r, settings) for m in m_values for r in range(repeats)]
    return _flatten(_run_cells(run_trial, cells, workers))


def sweep_samples(n_values, m_fixed=50, repeats=100, base_seed=0, settings=None, workers=1):
    """Accuracy of both estimators as a function of the number of samples."""
    settings = settings or TrialSettings()
    if m_fixed < 2 or repeats < 1 or any(n < 3 for n in n_values):
        raise ValueError("need m >= 2, n >= 3 and repeats >= 1")
    cells = [(m_fixed, n, base_seed + r, settings) for n in n_values for r in range(repeats)]
    return _flatten(_run_cells(run_trial, cells, workers))


def diagnose_trial(m, n, seed, settings):
    """Similarity of each intermediate Bayesian quantity to its theoretical value."""
    try:
        params, X = simulate_trial(m, n, seed, settings)
        dt = X.sample_interval
        J = jacobian(params)
        q0 = model_cov(params)
        qt = model_lagged_cov(q0, J, dt)
        lam = propagator(J, dt)

        mp = transition_moments(X)
        emp_prec = np.linalg.inv(mp.q0)
        emp_lam = np.linalg.solve(mp.q0, mp.qtau).T
        emp_log = matfun.mat_log(emp_lam)
        est = bayesian_estimate(X)
        off = ~np.eye(m, dtype=bool)
        return DiagnosisRecord(
            m=m,
            seed=seed,
            corr_precision=matfun.pearson(np.linalg.inv(q0), emp_prec),
            corr_lagged=matfun.pearson(qt, mp.qtau),
            corr_lambda=matfun.pearson(lam, emp_lam),
            corr_logm=matfun.pearson(J * dt, emp_log.real),
            corr_c=matfun.pearson(params.C[off], est.c_hat[off]),
            imag_ratio=matfun.imag_real_ratio(emp_log / dt),
        )
    except MOUError as exc:
        log.warning("diagnosis failed (m=%d, n=%d, seed=%d): %s", m, n, seed, exc)
        return DiagnosisRecord(m, seed, NAN, NAN, NAN, NAN, NAN, NAN)


def diagnose_bayes(m_values, n_fixed=500, repeats=100, base_seed=0, settings=None, workers=1):
    """Per-stage similarity of the Bayesian pipeline to its theoretical counterpart."""
    settings = settings or TrialSettings()
    cells = [(m, n_fixed, base_seed + r, settings) for m in m_values for r in range(repeats)]
    return _run_cells(diagnose_trial, cells, workers)


def records_to_rows(records):
    return [asdict(r) for r in records]


def mean_by(records, key, value, **where):
    """Mean of `value` grouped by `key` among records matching `where`."""
    groups = {}
    for r in records:
        if all(getattr(r, k) == v for k, v in where.items()):
            groups.setdefault(getattr(r, key), []).append(getattr(r, value))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN groups give NaN
        return {k: float(np.nanmean(v)) for k, v in groups.items()}
