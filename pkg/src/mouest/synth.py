"""Synthetic networks, Euler-Maruyama simulation and empirical moments."""
import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import matfun
from .errors import ConfigError, DegenerateInputError, FormatError, ShapeError, StabilityError
from .model import ModelParams, MomentPair, jacobian, model_cov

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Node-by-sample activity matrix sampled every `sample_interval` seconds."""

    data: np.ndarray
    sample_interval: float = 1.0

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise ShapeError(f"time series must be 2-D (nodes x samples), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FormatError("time series contains non-finite values")
        if not self.sample_interval > 0:
            raise ConfigError(f"sample_interval must be positive, got {self.sample_interval}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sample_interval", float(self.sample_interval))

    @property
    def node_count(self):
        return self.data.shape[0]

    @property
    def sample_count(self):
        return self.data.shape[1]

    def to_csv(self, path):
        """Write one row per sample under a ``node_0..node_{M-1}`` header."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"node_{i}" for i in range(self.node_count)])
            for row in self.data.T:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, sample_interval):
        """Inverse of :meth:`to_csv`; raises FormatError naming the bad cell."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise FormatError(f"{path}: empty file")
        header = rows[0]
        if not header or header != [f"node_{i}" for i in range(len(header))]:
            raise FormatError(f"{path}: header must be node_0..node_{{M-1}}")
        body = rows[1:]
        if len(body) < 1:
            raise FormatError(f"{path}: no samples")
        M = len(header)
        out = np.empty((len(body), M))
        for r, row in enumerate(body, start=2):
            if len(row) != M:
                raise FormatError(f"{path}: row {r} has {len(row)} cells, expected {M}")
            for c, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise FormatError(f"{path}: row {r}, column {header[c]}: not a number ({cell!r})") from None
                if not math.isfinite(v):
                    raise FormatError(f"{path}: row {r}, column {header[c]}: non-finite value ({cell!r})")
                out[r - 2, c] = v
        return cls(out.T, sample_interval)


@dataclass(frozen=True)
class NetworkConfig:
    """Erdős-Rényi topology with log-normal weights."""

    node_count: int
    density: float = 0.2
    weight_log_mean: float = 0.0
    weight_log_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.node_count < 2:
            raise ConfigError(f"node_count must be >= 2, got {self.node_count}")
        if not 0 < self.density <= 1:
            raise ConfigError(f"density must lie in (0, 1], got {self.density}")


def gen_connectivity(cfg, rng, max_redraws=100):
    """Random connectivity with total weight normalised to the node count.

    ``C' = A * W`` with ``A ~ Bernoulli(p)`` off the diagonal and
    ``ln W ~ N(mu, sd)``; then ``C = C' M / sum(C')``.
    """
    M = cfg.node_count
    for _ in range(max_redraws):
        A = rng.random((M, M)) < cfg.density
        np.fill_diagonal(A, False)
        W = np.exp(rng.normal(cfg.weight_log_mean, cfg.weight_log_sd, size=(M, M)))
        C = np.where(A, W, 0.0)
        total = C.sum()
        if total > 0:
            return C * (M / total)
    raise DegenerateInputError(f"{max_redraws} consecutive draws produced no edges (M={M}, p={cfg.density})")


def gen_sigma(M, rng):
    """Noise variances ``0.5 + 0.5 u`` with ``u ~ U(0, 1)``."""
    return 0.5 + 0.5 * rng.random(M)


def draw_params(cfg, rng, tau_x=1.0, max_draws=1000):
    """Draw a stable :class:`ModelParams`, rejecting unstable connectivity.

    The noise variances are drawn once, after an accepted connectivity.
    Returns ``(params, rejected)`` where `rejected` counts discarded draws.
    """
    for rejected in range(max_draws):
        C = gen_connectivity(cfg, rng)
        if matfun.max_real_eig(C - np.eye(cfg.node_count) / tau_x) < -matfun.STABILITY_TOL:
            if rejected:
                log.debug("accepted connectivity after %d unstable draws (M=%d)", rejected, cfg.node_count)
            return ModelParams(C, gen_sigma(cfg.node_count, rng), tau_x), rejected
    raise StabilityError(f"no stable connectivity in {max_draws} draws (M={cfg.node_count})")


def simulate(params, duration_s, rng, euler_dt=0.05, sample_interval=1.0, burn_in=None, init="stationary"):
    """Euler-Maruyama integration of the network, downsampled.

    ``x_{k+1} = x_k + dt J x_k + sqrt(dt) diag(sigma) xi_k``.

    Parameters
    ----------
    params : ModelParams
    duration_s : float
        Recorded duration; ``N = floor(duration_s / sample_interval)``.
    rng : numpy.random.Generator
    euler_dt : float
        Integration step; `sample_interval` must be an integer multiple.
    sample_interval : float
    burn_in : float, optional
        Discarded transient in seconds, default ``10 tau_x``.
    init : {"stationary", "zero"}
        Initial state: a draw from ``N(0, Q^0)`` or the origin.

    Returns
    -------
    TimeSeries
    """
    if not euler_dt > 0 or not sample_interval > 0:
        raise ConfigError("euler_dt and sample_interval must be positive")
    ratio = sample_interval / euler_dt
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * ratio:
        raise ConfigError(f"sample_interval {sample_interval} is not an integer multiple of euler_dt {euler_dt}")
    if duration_s < 2 * sample_interval:
        raise ConfigError(f"duration {duration_s} s shorter than two samples")
    N = int(math.floor(duration_s / sample_interval + 1e-9))
    if burn_in is None:
        burn_in = 10.0 * params.tau_x
    n_burn = int(round(burn_in / euler_dt))

    M = params.n_nodes
    J = jacobian(params)
    A = (np.eye(M) + euler_dt * J).T
    noise_sd = np.sqrt(params.sigma_diag * euler_dt)
    if init == "stationary":
        x = rng.multivariate_normal(np.zeros(M), model_cov(params), method="cholesky")
    elif init == "zero":
        x = np.zeros(M)
    else:
        raise ConfigError(f"unknown init {init!r}")

    # row-vector form: x <- x A + noise; overflow is detected explicitly below
    with np.errstate(over="ignore", invalid="ignore"):
        step = 0
        chunk = 4096
        remaining = n_burn
        while remaining > 0:
            n = min(chunk, remaining)
            xi = rng.standard_normal((n, M)) * noise_sd
            for t in range(n):
                x = x @ A + xi[t]
            step += n
            remaining -= n
            if not np.all(np.isfinite(x)):
                raise StabilityError(f"simulation diverged during burn-in before step {step}")

        out = np.empty((N, M))
        per_chunk = max(1, chunk // k)
        j = 0
        while j < N:
            n = min(per_chunk, N - j)
            xi = rng.standard_normal((n * k, M)) * noise_sd
            for s in range(n):
                for t in range(s * k, (s + 1) * k):
                    x = x @ A + xi[t]
                out[j + s] = x
            step += n * k
            if not np.all(np.isfinite(out[j:j + n])):
                raise StabilityError(f"simulation diverged before step {step}")
            j += n
    return TimeSeries(out.T, sample_interval)


def _centered(X):
    data = np.asarray(getattr(X, "data", X), dtype=float)
    return data - data.mean(axis=1, keepdims=True)


def empirical_moments(X, lag_steps=1):
    """Empirical ``Q^0`` (all samples) and lagged ``Q^tau`` after demeaning.

    ``Q^0 = sum_n x_n x_n^T / (N - 1)`` and
    ``Q^tau_ij = sum_n x_i(n) x_j(n + lag) / (N - lag - 1)``.
    """
    if lag_steps < 0:
        raise ConfigError(f"lag_steps must be non-negative, got {lag_steps}")
    Xc = _centered(X)
    N = Xc.shape[1]
    if N <= lag_steps + 1:
        raise ShapeError(f"{N} samples are not enough for lag {lag_steps}")
    q0 = Xc @ Xc.T
    q0 = 0.5 * (q0 + q0.T) / (N - 1)
    if lag_steps == 0:
        qtau = q0.copy()
    else:
        qtau = Xc[:, : N - lag_steps] @ Xc[:, lag_steps:].T / (N - lag_steps - 1)
    return MomentPair(q0, qtau, lag_steps * X.sample_interval, "empirical")


def transition_sums(X):
    """``T^0 = sum x^n x^n^T`` and ``T^1 = sum x^{n+1} x^n^T`` for n = 1..N-1.

    Computed on demeaned data. Both sums run over the same N-1 transitions.
    """
    Xc = _centered(X)
    if Xc.shape[1] < 3:
        raise ShapeError("at least three samples are required")
    a = Xc[:, :-1]
    T0 = a @ a.T
    T0 = 0.5 * (T0 + T0.T)
    T1 = Xc[:, 1:] @ a.T
    return T0, T1


def transition_moments(X):
    """One-step :class:`MomentPair` over the same transitions as :func:`transition_sums`.

    Both covariances share the normaliser ``N - 1``, so the moments method
    applied to this pair reproduces the posterior-mean propagator exactly.
    """
    T0, T1 = transition_sums(X)
    n = X.sample_count - 1
    return MomentPair(T0 / n, T1.T / n, X.sample_interval, "empirical")
