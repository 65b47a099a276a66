"""Dense matrix-function kernels and similarity metrics.

The exponential, logarithm and Lyapunov solver are thin, validated wrappers
around LAPACK-backed routines in :mod:`scipy.linalg`:

* ``mat_exp``  -- scaling and squaring with a degree-13 Padé approximant.
* ``mat_log``  -- complex Schur form followed by inverse scaling and squaring;
  the principal branch is returned and the result is always complex.
* ``solve_lyapunov`` -- Bartels-Stewart on the Schur form of ``J``.

Everything here is a pure function of its arguments.
"""
import numpy as np
import scipy.linalg as spl

from .errors import DegenerateInputError, DomainError, ShapeError, SingularMatrixError, StabilityError

#: Eigenvalues with real part above ``-STABILITY_TOL`` count as unstable.
STABILITY_TOL = 1e-12
#: Schur diagonal entries below this magnitude count as zero eigenvalues.
SINGULAR_TOL = 1e-12
#: Relative imaginary part below which a negative eigenvalue counts as real.
AXIS_TOL = 1e-12


def as_square(A, name="A", dtype=float):
    """Return `A` as a finite square 2-D array, raising on violations."""
    A = np.asarray(A, dtype=dtype)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError(f"{name} contains non-finite entries")
    return A


def max_real_eig(J):
    """Largest real part of the eigenvalues of `J`."""
    return float(np.max(np.linalg.eigvals(J).real))


def is_stable(J, tol=STABILITY_TOL):
    """True when every eigenvalue of `J` has real part below ``-tol``."""
    return max_real_eig(J) < -tol


def mat_exp(A):
    """Matrix exponential of a real square matrix."""
    A = as_square(A)
    return spl.expm(A)


def mat_log(A):
    """Principal matrix logarithm, always returned as a complex array.

    Eigenvalues on the negative real axis yield imaginary parts of magnitude
    pi; these are kept so callers can inspect them. A negative eigenvalue
    whose imaginary part is within ``AXIS_TOL`` (relative) of zero is treated
    as real and mapped to ``+i pi``, so the branch does not depend on rounding.

    Raises
    ------
    SingularMatrixError
        If a diagonal entry of the Schur form is within ``SINGULAR_TOL``
        of zero.
    """
    A = as_square(A, dtype=complex)
    if A.shape[0] == 0:
        return A.copy()
    T, Z = spl.schur(A, output="complex")
    # Rounding leaves negative real eigenvalues with an imaginary part of
    # either sign; put them on the axis so they take the principal +i*pi branch.
    ev = np.diag(T)
    on_axis = (ev.real < 0) & (np.abs(ev.imag) <= AXIS_TOL * np.abs(ev))
    if on_axis.any():
        idx = np.flatnonzero(on_axis)
        T[idx, idx] = ev.real[idx]
    d = np.abs(np.diag(T))
    k = int(np.argmin(d))
    if d[k] <= SINGULAR_TOL:
        raise SingularMatrixError(
            f"matrix logarithm of a singular matrix (|eigenvalue| = {d[k]:.3e})",
            magnitude=float(d[k]),
        )
    # The norm estimator inside logm draws from numpy's global legacy RNG;
    # pin it so the result does not depend on unrelated global state.
    state = np.random.get_state()
    np.random.seed(0)
    try:
        # the same estimator divides by zero on some exact inputs
        with np.errstate(divide="ignore", invalid="ignore"):
            L, _ = spl.logm(T, disp=False)
    finally:
        np.random.set_state(state)
    return (Z @ L @ Z.conj().T).astype(complex)


def solve_lyapunov(J, S):
    """Solve ``J Q + Q J^T + S = 0`` for the stationary covariance ``Q``.

    Parameters
    ----------
    J : (M, M) array
        Hurwitz-stable system matrix.
    S : (M, M) array
        Symmetric positive semidefinite forcing (noise covariance).

    Returns
    -------
    Q : (M, M) array
        Symmetric solution, ``(Q + Q.T) / 2`` of the raw solve.
    """
    J = as_square(J, "J")
    S = as_square(S, "S")
    if J.shape != S.shape:
        raise ShapeError(f"J {J.shape} and S {S.shape} differ in shape")
    lam = max_real_eig(J)
    if lam >= -STABILITY_TOL:
        raise StabilityError(f"J is not Hurwitz-stable (max Re eigenvalue {lam:.3e})")
    Q = spl.solve_continuous_lyapunov(J, -S)
    return 0.5 * (Q + Q.T)


def pearson(a, b):
    """Sample Pearson correlation between two equal-length vectors.

    Arrays of any shape are flattened. Returns NaN when exactly one input is
    constant (the coefficient is undefined there).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ShapeError("pearson needs at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    saa = np.dot(da, da)
    sbb = np.dot(db, db)
    if saa == 0 and sbb == 0:
        raise DegenerateInputError("both inputs are constant")
    if saa == 0 or sbb == 0:
        return float("nan")
    r = np.dot(da, db) / np.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, r)))


def imag_real_ratio(A):
    """Frobenius-norm ratio ``||Im A|| / ||Re A||``."""
    A = np.asarray(A, dtype=complex)
    re = np.linalg.norm(A.real)
    if re == 0:
        raise DegenerateInputError("real part has zero norm")
    return float(np.linalg.norm(A.imag) / re)
