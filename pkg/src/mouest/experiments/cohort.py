"""Subject identification on synthetic cohorts.

Every subject has its own ground-truth network; each session is an
independent recording of that subject. Connectivity estimates restricted to a
fixed feature mask are classified by multinomial logistic regression.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, ConvergenceError, MOUError
from ..estimators import LyapunovFitConfig, estimate
from ..synth import NetworkConfig, draw_params, simulate

log = logging.getLogger(__name__)

FEATURE_MASKS = ("true-adjacency", "full")


@dataclass(frozen=True)
class CohortConfig:
    subjects: int = 30
    sessions: int = 10
    m: int = 50
    n: int = 300
    density: float = 0.2
    feature_mask: str = "true-adjacency"
    train_fraction: float = 0.8
    repetitions: int = 100
    seed: int = 0
    tau_x: float = 1.0
    euler_dt: float = 0.05
    sample_interval: float = 1.0
    fit: LyapunovFitConfig = field(default_factory=LyapunovFitConfig)

    def __post_init__(self):
        if self.subjects < 2 or self.sessions < 2:
            raise ConfigError("a cohort needs at least two subjects and two sessions")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.feature_mask not in FEATURE_MASKS:
            raise ConfigError(f"feature_mask must be one of {FEATURE_MASKS}, got {self.feature_mask!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")


def subject_params(cfg, subject):
    rng = np.random.default_rng([cfg.seed, subject])
    params, _ = draw_params(NetworkConfig(cfg.m, cfg.density), rng, cfg.tau_x)
    return params


def _session_job(cfg, params, subject, session, method, mask):
    rng = np.random.default_rng([cfg.seed, subject, session, 1])
    X = simulate(params, cfg.n * cfg.sample_interval, rng, euler_dt=cfg.euler_dt, sample_interval=cfg.sample_interval)
    fit = replace(cfg.fit, mask=mask) if cfg.feature_mask == "true-adjacency" else cfg.fit
    try:
        est = estimate(X, method, fit_config=fit)
    except MOUError as exc:
        raise type(exc)(f"subject {subject}, session {session} ({method}): {exc}") from exc
    return est.c_hat[mask]


def gen_cohort(cfg, method, workers=1):
    """Feature matrix, labels and mask for one estimation method.

    Returns
    -------
    features : (subjects * sessions, F) array
        Masked connectivity estimates, rows ordered by subject then session.
    labels : (subjects * sessions,) int array
    mask : (m, m) bool array
        Union of all subjects' adjacencies, or every off-diagonal entry.

    Any failing session aborts generation.
    """
    params = [subject_params(cfg, s) for s in range(cfg.subjects)]
    if cfg.feature_mask == "true-adjacency":
        mask = np.logical_or.reduce([p.C > 0 for p in params])
    else:
        mask = ~np.eye(cfg.m, dtype=bool)
    cells = [(cfg, params[s], s, k, method, mask) for s in range(cfg.subjects) for k in range(cfg.sessions)]
    if workers <= 1:
        rows = [_session_job(*c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_session_job, *zip(*cells)))
    labels = np.repeat(np.arange(cfg.subjects), cfg.sessions)
    return np.vstack(rows), labels, mask


@dataclass
class LogRegModel:
    """Multinomial logistic regression on z-scored features."""

    weights: np.ndarray  # (F, K)
    bias: np.ndarray  # (K,)
    mean: np.ndarray
    scale: np.ndarray
    classes: np.ndarray
    epochs: int = 0
    loss: float = float("nan")

    def decision(self, features):
        Z = (np.asarray(features, dtype=float) - self.mean) / self.scale
        return Z @ self.weights + self.bias

    def predict(self, features):
        return self.classes[np.argmax(self.decision(features), axis=1)]


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_logreg(features, labels, l2_penalty=1e-3, max_epochs=2000, lr=0.1, tol=1e-8):
    """Full-batch gradient descent on the L2-penalised softmax cross-entropy.

    Weights start at zero, so training is deterministic. The bias is not
    penalised. Features with zero training variance get unit scale.

    Raises
    ------
    ConvergenceError
        If the loss becomes non-finite (reduce `lr`).
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ConfigError(f"features {X.shape} and labels {y.shape} do not match")
    classes, yi = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ConfigError("need at least two classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    n, F = Z.shape
    K = classes.size
    Y = np.zeros((n, K))
    Y[np.arange(n), yi] = 1.0
    W = np.zeros((F, K))
    b = np.zeros(K)
    prev = np.inf
    loss = np.nan
    trace = []
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            P = _softmax(Z @ W + b)
            loss = -np.mean(np.log(np.maximum(P[np.arange(n), yi], 1e-300))) + 0.5 * l2_penalty * np.sum(W * W)
        trace.append(loss)
        if not np.isfinite(loss):
            raise ConvergenceError(f"logistic regression diverged at epoch {epoch}; try a smaller lr than {lr}", trace)
        if abs(prev - loss) < tol:
            break
        prev = loss
        G = (P - Y) / n
        W -= lr * (Z.T @ G + l2_penalty * W)
        b -= lr * G.sum(axis=0)
    return LogRegModel(W, b, mean, scale, classes, epoch, float(loss))


def stratified_split(labels, train_fraction, rng):
    """Per-class random split keeping at least one sample on each side."""
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(train_fraction * idx.size))
        k = min(max(k, 1), idx.size - 1)
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def evaluate_cohort(features, labels, cfg, shuffle_labels=False, **train_kw):
    """Test accuracy over `cfg.repetitions` stratified splits.

    With `shuffle_labels` the labels are permuted before each split, which
    gives the chance-level null distribution.
    """
    labels = np.asarray(labels)
    accs = []
    for rep in range(cfg.repetitions):
        rng = np.random.default_rng([cfg.seed, rep, 2])
        y = rng.permutation(labels) if shuffle_labels else labels
        tr, te = stratified_split(y, cfg.train_fraction, rng)
        model = train_logreg(features[tr], y[tr], **train_kw)
        accs.append(float(np.mean(model.predict(features[te]) == y[te])))
    return accs


def classify_experiment(cfg, methods=("lyapunov", "bayesian"), workers=1, **train_kw):
    """Per-method list of test accuracies, one per repetition."""
    out = {}
    for method in methods:
        features, labels, _ = gen_cohort(cfg, method, workers)
        if not np.all(np.isfinite(features)):
            raise ConvergenceError(f"non-finite features for method {method}", [])
        out[method] = evaluate_cohort(features, labels, cfg, **train_kw)
    return out
