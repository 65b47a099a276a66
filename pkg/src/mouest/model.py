"""Multivariate Ornstein-Uhlenbeck network model and its forward step.

Dynamics for node ``i``::

    dx_i = (-x_i / tau_x + sum_j C_ij x_j) dt + sigma_i dB_i

with ``C_ij`` the link from node ``j`` to node ``i`` and a diagonal noise
covariance ``Sigma = diag(sigma_i^2)``.

Lag convention (used everywhere in the package)::

    Q^tau_ij = E[x_i(t) x_j(t + tau)]  =>  Q^tau = Q^0 expm(J^T tau)
"""
from dataclasses import dataclass

import numpy as np

from . import matfun
from .errors import ConfigError, ShapeError, SingularMatrixError, StabilityError


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Generative parameters ``{C, Sigma, tau_x}``.

    Validated on construction: zero diagonal in `C`, positive noise
    variances and time constant, Hurwitz-stable Jacobian.
    """

    C: np.ndarray
    sigma_diag: np.ndarray
    tau_x: float = 1.0

    def __post_init__(self):
        C = _frozen(matfun.as_square(self.C, "C"))
        sig = _frozen(np.ravel(self.sigma_diag))
        if sig.shape != (C.shape[0],):
            raise ShapeError(f"sigma_diag has {sig.size} entries for {C.shape[0]} nodes")
        if np.any(np.diag(C) != 0):
            raise ConfigError("diagonal of C must be exactly zero")
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise ConfigError("noise variances must be positive")
        if not (np.isfinite(self.tau_x) and self.tau_x > 0):
            raise ConfigError(f"tau_x must be positive, got {self.tau_x}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "sigma_diag", sig)
        object.__setattr__(self, "tau_x", float(self.tau_x))
        lam = matfun.max_real_eig(jacobian(self))
        if lam >= -matfun.STABILITY_TOL:
            raise StabilityError(f"Jacobian not Hurwitz-stable (max Re eigenvalue {lam:.3e})")

    @property
    def n_nodes(self):
        return self.C.shape[0]

    def permuted(self, perm):
        """Same model with nodes relabelled by index array `perm`."""
        perm = np.asarray(perm)
        return ModelParams(self.C[np.ix_(perm, perm)], self.sigma_diag[perm], self.tau_x)


@dataclass(frozen=True, eq=False)
class MomentPair:
    """Zero-lag and lagged covariance at lag `tau` (seconds)."""

    q0: np.ndarray
    qtau: np.ndarray
    tau: float
    kind: str = "empirical"

    def __post_init__(self):
        q0 = matfun.as_square(self.q0, "q0")
        qtau = matfun.as_square(self.qtau, "qtau")
        if q0.shape != qtau.shape:
            raise ShapeError(f"q0 {q0.shape} and qtau {qtau.shape} differ in shape")
        if not np.allclose(q0, q0.T, rtol=0, atol=1e-10 * max(1.0, np.abs(q0).max(initial=0))):
            raise ConfigError("q0 must be symmetric")
        if self.kind not in ("theoretical", "empirical"):
            raise ConfigError(f"unknown moment kind {self.kind!r}")
        if not self.tau >= 0:
            raise ConfigError(f"lag must be non-negative, got {self.tau}")
        object.__setattr__(self, "q0", _frozen(q0))
        object.__setattr__(self, "qtau", _frozen(qtau))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n_nodes(self):
        return self.q0.shape[0]


def jacobian(params):
    """``J = -I / tau_x + C``."""
    M = params.C.shape[0]
    return -np.eye(M) / params.tau_x + params.C


def model_cov(params):
    """Stationary zero-lag covariance ``Q^0`` from the Lyapunov equation."""
    return matfun.solve_lyapunov(jacobian(params), np.diag(params.sigma_diag))


def model_lagged_cov(q0, J, tau):
    """``Q^tau = Q^0 expm(J^T tau)``."""
    q0 = np.asarray(q0, dtype=float)
    J = np.asarray(J, dtype=float)
    if q0.shape != J.shape:
        raise ShapeError(f"q0 {q0.shape} and J {J.shape} differ in shape")
    if tau < 0:
        raise ConfigError(f"lag must be non-negative, got {tau}")
    if tau == 0:
        return q0.copy()
    return q0 @ matfun.mat_exp(J.T * tau)


def theoretical_moments(params, tau=1.0):
    """Exact :class:`MomentPair` implied by `params` at lag `tau`."""
    q0 = model_cov(params)
    return MomentPair(q0, model_lagged_cov(q0, jacobian(params), tau), tau, "theoretical")


def propagator(J, dt):
    """One-step transition matrix ``Lambda = expm(J dt)``."""
    J = matfun.as_square(J, "J")
    if dt < 0:
        raise ConfigError(f"dt must be non-negative, got {dt}")
    lam = matfun.mat_exp(J * dt)
    if dt > 0 and matfun.is_stable(J):
        rho = np.max(np.abs(np.linalg.eigvals(lam)))
        # rho reaches 1 only by rounding when |J dt| is below machine epsilon
        assert rho < 1.0 or rho - 1.0 <= 1e-14, f"propagator of a stable Jacobian has spectral radius {rho}"
    return lam


def conditional_cov(q0, lam):
    """Transition covariance ``Xi = Q^0 - Lambda Q^0 Lambda^T``."""
    q0 = matfun.as_square(q0, "q0")
    lam = matfun.as_square(lam, "lambda")
    if q0.shape != lam.shape:
        raise ShapeError(f"q0 {q0.shape} and lambda {lam.shape} differ in shape")
    xi = q0 - lam @ q0 @ lam.T
    xi = 0.5 * (xi + xi.T)
    scale = max(1.0, np.abs(q0).max(initial=0))
    if xi.size:
        w = np.linalg.eigvalsh(xi).min()
        assert w >= -1e-10 * scale, f"conditional covariance not PSD (min eigenvalue {w:.3e})"
    return xi


def _logdet_and_solver(A, name):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(A)
        raise SingularMatrixError(f"{name} is singular or indefinite", magnitude=float(np.abs(w).min())) from None
    d = np.diag(L)
    if d.min() <= 1e-150:
        raise SingularMatrixError(f"{name} is singular", magnitude=float(d.min() ** 2))
    return 2.0 * np.sum(np.log(d)), L


def _quad(L, V):
    """Sum over columns of ``v^T A^{-1} v`` given the Cholesky factor of A."""
    Y = np.linalg.solve(L, V)
    return float(np.sum(Y * Y))


def log_posterior(X, params, dt=None):
    """Log posterior of `params` given observations, up to ``-ln p(X)``.

    Uniform prior, Gaussian transitions ``x^{n+1} ~ N(Lambda x^n, Xi)`` and a
    stationary first sample ``x^1 ~ N(0, Q^0)``. The quadratic form uses
    ``Xi^{-1}``.

    Parameters
    ----------
    X : TimeSeries or (M, N) array
    params : ModelParams
    dt : float, optional
        Sampling interval; taken from `X` when it is a TimeSeries.
    """
    data = getattr(X, "data", X)
    if dt is None:
        dt = getattr(X, "sample_interval", None)
        if dt is None:
            raise ConfigError("sampling interval dt is required for a bare array")
    data = np.asarray(data, dtype=float)
    M, N = data.shape
    if M != params.n_nodes:
        raise ShapeError(f"series has {M} nodes, model has {params.n_nodes}")
    if N < 2:
        raise ShapeError("log posterior needs at least two samples")
    q0 = model_cov(params)
    lam = propagator(jacobian(params), dt)
    xi = conditional_cov(q0, lam)
    logdet_xi, L_xi = _logdet_and_solver(xi, "Xi")
    logdet_q0, L_q0 = _logdet_and_solver(q0, "Q0")
    resid = data[:, 1:] - lam @ data[:, :-1]
    c = M * np.log(2 * np.pi)
    return (
        -0.5 * _quad(L_xi, resid)
        - 0.5 * _quad(L_q0, data[:, :1])
        - 0.5 * (N - 1) * (c + logdet_xi)
        - 0.5 * (c + logdet_q0)
    )
