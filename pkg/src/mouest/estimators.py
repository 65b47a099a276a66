"""Connectivity estimators: moments, Bayesian posterior mean, Lyapunov fit."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matfun
from .errors import ConfigError, ConvergenceError, ShapeError, SingularMatrixError, StabilityError
from .model import MomentPair
from .synth import transition_moments, transition_sums

log = logging.getLogger(__name__)

METHODS = ("moments", "bayesian", "lyapunov")


@dataclass(eq=False)
class Estimate:
    """Estimator output.

    `j_hat` keeps the complex Jacobian produced by the matrix logarithm;
    `c_hat` is the real off-diagonal part with a zero diagonal.
    """

    j_hat: np.ndarray
    c_hat: np.ndarray
    sigma_hat: np.ndarray
    tau_x_hat: float
    imag_ratio: float
    method: str
    iterations: int = 0
    fit_value: Optional[float] = None
    sigma_offdiag: float = 0.0
    stop_reason: str = ""
    trace: list = field(default_factory=list, repr=False)

    @property
    def n_nodes(self):
        return self.c_hat.shape[0]

    def to_record(self):
        """Flat dict; matrices flattened row-major with their shape."""
        M = self.n_nodes
        return {
            "method": self.method,
            "m": M,
            "iterations": self.iterations,
            "fit_value": float("nan") if self.fit_value is None else self.fit_value,
            "tau_x_hat": self.tau_x_hat,
            "imag_ratio": self.imag_ratio,
            "sigma_offdiag": self.sigma_offdiag,
            "stop_reason": self.stop_reason,
            "c_hat_shape": f"{M}x{M}",
            "c_hat": ";".join(repr(float(v)) for v in self.c_hat.ravel()),
            "sigma_hat": ";".join(repr(float(v)) for v in self.sigma_hat),
        }


@dataclass(frozen=True)
class LyapunovFitConfig:
    """Settings for :func:`lyapunov_fit`.

    `q0_sign` weighs the zero-lag mismatch in the Jacobian update. The
    default ``-1`` is the sign obtained by differentiating
    ``Q^tau = Q^0 expm(J^T tau)`` with ``Q^0`` free; ``+1`` gives the
    alternative form, which does not converge on exact moments.
    """

    learning_rate_j: float = 0.01
    learning_rate_sigma: float = 1.0
    max_iters: int = 10000
    stop_patience: int = 1000
    tau_x_init: float = 1.0
    mask: Optional[np.ndarray] = None
    clamp_nonneg: bool = True
    min_sigma: float = 1e-6
    q0_sign: float = -1.0
    max_step_halvings: int = 8
    max_restarts: int = 10

    def __post_init__(self):
        if not (self.learning_rate_j > 0 and self.learning_rate_sigma > 0):
            raise ConfigError("learning rates must be positive")
        if self.max_iters < 1 or self.stop_patience < 1:
            raise ConfigError("max_iters and stop_patience must be >= 1")
        if not self.tau_x_init > 0:
            raise ConfigError("tau_x_init must be positive")
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ShapeError(f"mask must be square, got {m.shape}")
            if not np.all((m == 0) | (m == 1)):
                raise ConfigError("mask must be binary")
            if np.any(np.diag(m) != 0):
                raise ConfigError("mask must have a zero diagonal")


def _offdiag(M):
    return ~np.eye(M, dtype=bool)


def _split_jacobian(j_hat):
    """Real off-diagonal part as C, and tau_x from the trace."""
    jr = np.real(j_hat)
    M = jr.shape[0]
    c_hat = np.where(_offdiag(M), jr, 0.0)
    tr = np.trace(jr)
    tau = float(-M / tr) if tr != 0 else float("inf")
    return c_hat, tau


def _sigma_matrix(j_real, q0):
    return -j_real @ q0 - q0 @ j_real.T


def sigma_from_estimate(j_hat_real, q0):
    """Diagonal of ``-J Q^0 - Q^0 J^T``."""
    j = np.asarray(j_hat_real, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    if j.shape != q0.shape or j.ndim != 2:
        raise ShapeError(f"J {j.shape} and q0 {q0.shape} differ in shape")
    return np.diag(_sigma_matrix(j, q0)).copy()


def _offdiag_norm(S):
    return float(np.linalg.norm(S[_offdiag(S.shape[0])]))


def _closed_form(lam, dt, q0, method):
    j_hat = matfun.mat_log(lam) / dt
    c_hat, tau = _split_jacobian(j_hat)
    S = _sigma_matrix(j_hat.real, q0)
    try:
        ratio = matfun.imag_real_ratio(j_hat)
    except ArithmeticError:
        ratio = float("nan")
    return Estimate(
        j_hat=j_hat,
        c_hat=c_hat,
        sigma_hat=np.diag(S).copy(),
        tau_x_hat=tau,
        imag_ratio=ratio,
        method=method,
        sigma_offdiag=_offdiag_norm(S),
        stop_reason="closed-form",
    )


def _solve_checked(A, B, what):
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"{what} is singular") from None


def moments_estimate(moments):
    """Direct inversion ``J = [logm((Q^0)^{-1} Q^tau)]^T / tau``.

    Under the package lag convention ``(Q^0)^{-1} Q^tau = expm(J^T tau)``;
    the propagator ``(Q^tau)^T (Q^0)^{-1}`` is formed and its logarithm taken
    so that the computation is literally shared with
    :func:`bayesian_estimate`.
    """
    if not moments.tau > 0:
        raise ConfigError("moments method needs a positive lag")
    lam = _solve_checked(moments.q0, moments.qtau, "Q0").T
    return _closed_form(lam, moments.tau, moments.q0, "moments")


def bayesian_estimate(X):
    """Posterior mean propagator ``T^1 (T^0)^{-1}`` under a uniform prior.

    Then ``J = logm(Lambda) / dt``. `sigma_hat` uses the one-step zero-lag
    covariance ``T^0 / (N - 1)``, so every field equals
    ``moments_estimate(transition_moments(X))``.
    """
    T0, T1 = transition_sums(X)
    # T0 symmetric: T1 T0^{-1} = (T0^{-1} T1^T)^T
    lam = _solve_checked(T0, T1.T, "T0").T
    q0 = transition_moments(X).q0
    return _closed_form(lam, X.sample_interval, q0, "bayesian")


def _forward(C, sig, tau_x, lag):
    M = C.shape[0]
    J = C - np.eye(M) / tau_x
    Q0 = matfun.solve_lyapunov(J, np.diag(sig))
    E = matfun.mat_exp(J.T * lag)
    return J, Q0, Q0 @ E, E


def lyapunov_fit(moments, cfg=None):
    """Iterative fit of ``(C, Sigma)`` to ``(Q^0, Q^tau)``.

    Minimises ``V = ||Q^0 - Qhat^0||^2 + ||Q^tau - Qhat^tau||^2`` with the
    updates::

        dJ     = [ (Q^0)^{-1} (s dQ^0 + dQ^tau expm(-J^T tau)) ]^T / tau
        dSigma = diag(-J dQ^0 - dQ^0 J^T)

    evaluated at the current iterate (``s = cfg.q0_sign``). The diagonal of
    ``J`` stays at ``-1 / tau_x_init``. Off-diagonal ``C`` is clamped at zero
    (if `clamp_nonneg`) and to the mask. A step that would make ``J``
    unstable is retried at half size, up to `max_step_halvings` times; if
    none is stable the fit returns to its best iterate with both learning
    rates halved, at most `max_restarts` times, and then stops. Returns the
    iterate with the lowest ``V``.

    Raises
    ------
    StabilityError
        If the instability stop happens before any improvement on the start.
    ConvergenceError
        If ``V`` never drops below its initial value within
        ``10 * stop_patience`` iterations.
    """
    cfg = cfg or LyapunovFitConfig()
    q0_obj, qt_obj, lag = moments.q0, moments.qtau, moments.tau
    if not lag > 0:
        raise ConfigError("Lyapunov fit needs a positive lag")
    M = q0_obj.shape[0]
    free = _offdiag(M)
    if cfg.mask is not None:
        mask = np.asarray(cfg.mask)
        if mask.shape != (M, M):
            raise ShapeError(f"mask shape {mask.shape} does not match {M} nodes")
        free &= mask.astype(bool)
    tau_x = cfg.tau_x_init

    C = np.zeros((M, M))
    sig = np.maximum(2.0 / tau_x * np.diag(q0_obj), cfg.min_sigma)
    eta_j, eta_s = cfg.learning_rate_j, cfg.learning_rate_sigma

    best_v, best_it = np.inf, 0
    best_C, best_sig = C, sig
    improved = False
    anchor = 0  # patience is counted from the last improvement or restart
    restarts = 0
    trace = []
    stop = "max_iters"
    J, Q0, Qt, E = _forward(C, sig, tau_x, lag)
    it = 0
    while it < cfg.max_iters:
        dQ0 = q0_obj - Q0
        dQt = qt_obj - Qt
        v = float(np.sum(dQ0 ** 2) + np.sum(dQt ** 2))
        trace.append(v)
        if v < best_v:
            improved = improved or it > 0
            best_v, best_it, best_C, best_sig = v, it, C, sig
            anchor = it
        elif not improved and it >= 10 * cfg.stop_patience:
            raise ConvergenceError(f"V did not decrease below its initial value in {it} iterations", trace)
        elif improved and it - anchor >= cfg.stop_patience:
            stop = "patience"
            break

        inner = cfg.q0_sign * dQ0 + dQt @ np.linalg.inv(E)
        dJ = _solve_checked(Q0, inner, "model Q0").T / lag
        dS = np.diag(-J @ dQ0 - dQ0 @ J.T)

        stepped = None
        for scale in 0.5 ** np.arange(cfg.max_step_halvings + 1):
            C_new = np.where(free, C + scale * eta_j * dJ, 0.0)
            if cfg.clamp_nonneg:
                C_new = np.maximum(C_new, 0.0)
            sig_new = np.maximum(sig + scale * eta_s * dS, cfg.min_sigma)
            try:
                stepped = _forward(C_new, sig_new, tau_x, lag)
            except StabilityError:
                continue
            break
        it += 1
        if stepped is not None:
            C, sig = C_new, sig_new
            J, Q0, Qt, E = stepped
            continue
        if restarts >= cfg.max_restarts:
            if not improved:
                raise StabilityError(f"Lyapunov fit left the stable region at iteration {it} without improving")
            stop = "instability"
            break
        # back to the best iterate with halved learning rates
        restarts += 1
        eta_j, eta_s = eta_j / 2, eta_s / 2
        C, sig = best_C, best_sig
        J, Q0, Qt, E = _forward(C, sig, tau_x, lag)
        trace.pop()  # the best iterate is re-evaluated next
        anchor = it

    if not improved and cfg.max_iters > 1:
        raise ConvergenceError("V never improved on the initial iterate", trace)
    j_best = best_C - np.eye(M) / tau_x
    S = _sigma_matrix(j_best, q0_obj)
    log.debug("lyapunov fit: %s after %d iterations, V=%.3e", stop, it, best_v)
    return Estimate(
        j_hat=j_best.astype(complex),
        c_hat=best_C.copy(),
        sigma_hat=best_sig.copy(),
        tau_x_hat=tau_x,
        imag_ratio=0.0,
        method="lyapunov",
        iterations=it,
        fit_value=best_v,
        sigma_offdiag=_offdiag_norm(S),
        stop_reason=stop,
        trace=trace,
    )


def estimate(X, method, lag_steps=1, fit_config=None):
    """Run `method` on a time series (helper for the harness and CLI)."""
    from .synth import empirical_moments

    if method == "bayesian":
        return bayesian_estimate(X)
    if method == "moments":
        return moments_estimate(empirical_moments(X, lag_steps))
    if method == "lyapunov":
        return lyapunov_fit(empirical_moments(X, lag_steps), fit_config)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def accuracy(c_true, estimate, sigma_true=None):
    """Pearson accuracy of the connectivity and noise estimates.

    Connectivity is compared over off-diagonal entries only. Returns
    ``(accuracy_c, accuracy_sigma)``; the latter is NaN without `sigma_true`.
    """
    c_true = np.asarray(c_true, dtype=float)
    if c_true.shape != estimate.c_hat.shape:
        raise ShapeError(f"c_true {c_true.shape} vs c_hat {estimate.c_hat.shape}")
    off = _offdiag(c_true.shape[0])
    acc_c = matfun.pearson(c_true[off], estimate.c_hat[off])
    acc_s = float("nan")
    if sigma_true is not None:
        acc_s = matfun.pearson(sigma_true, estimate.sigma_hat)
    return acc_c, acc_s
