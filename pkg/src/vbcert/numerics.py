"""Dense linear-algebra kernel.

Small, deterministic helpers on top of numpy/scipy: guarded linear solves,
extreme eigenvalues of symmetric matrices, the continuous Lyapunov equation
(by vectorisation) and a spectral-radius estimate from norms of matrix powers.
"""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np
import scipy.linalg

from .config import get_tolerances
from .errors import NonConvergence, NonFinite, NotSymmetric, SingularMatrix


@dataclasses.dataclass(frozen=True)
class SymEigReport:
    lambda_min: float
    lambda_max: float
    residual: float


def as_matrix(a, name="matrix", square=False) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return a


def norm_inf(a) -> float:
    """Induced infinity norm for matrices, max-abs for vectors."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    if a.ndim == 1:
        return float(np.max(np.abs(a)))
    return float(np.max(np.sum(np.abs(a), axis=1)))


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a x = b`` by partial-pivot LU.

    ``b`` may be a vector or a matrix of right-hand sides. Raises
    :class:`SingularMatrix` if a pivot falls below ``pivot * ||a||_inf``, or if
    the residual bound cannot be met after two refinement steps.
    """
    tol = get_tolerances()
    a = as_matrix(a, "a", square=True)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: a is {a.shape}, b is {b.shape}")
    if not np.all(np.isfinite(b)):
        raise NonFinite("b contains NaN or Inf")
    scale = norm_inf(a)
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    smallest = float(np.min(np.abs(np.diag(lu))))
    if smallest < tol.pivot * scale:
        raise SingularMatrix(f"pivot {smallest:.3e} below {tol.pivot:.0e} * ||a||_inf")
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    bound = tol.solve_residual * (1.0 + norm_inf(b.reshape(b.shape[0], -1).T))
    for _ in range(2):
        r = b - a @ x
        if np.max(np.abs(r), initial=0.0) <= bound:
            return x
        x = x + scipy.linalg.lu_solve((lu, piv), r, check_finite=False)
    r = b - a @ x
    if np.max(np.abs(r), initial=0.0) > bound:
        raise SingularMatrix("residual bound not met; matrix is too ill-conditioned")
    return x


def symmetrize(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return 0.5 * (s + s.T)


def sym_eig_extremes(s) -> SymEigReport:
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if not np.all(np.isfinite(s)):
        raise NonFinite("symmetric input contains NaN or Inf")
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    tol = get_tolerances()
    asym = norm_inf(s - s.T)
    if asym > tol.symmetry * norm_inf(s):
        raise NotSymmetric(f"||s - s^T||_inf = {asym:.3e}")
    s = symmetrize(s)
    w, v = np.linalg.eigh(s)
    resid = 0.0
    for idx in (0, -1):
        resid = max(resid, norm_inf(s @ v[:, idx] - w[idx] * v[:, idx]))
    return SymEigReport(float(w[0]), float(w[-1]), float(resid))


def lambda_min(s) -> float:
    return sym_eig_extremes(s).lambda_min


def solve_continuous_lyapunov(a) -> np.ndarray:
    """Return the symmetric ``g`` with ``a^T g + g a = -I``.

    Solved through the d^2 x d^2 system ``(I kron a^T + a^T kron I) vec(g) =
    -vec(I)`` (column-major vec), then symmetrised.
    """
    a = as_matrix(a, "a", square=True)
    d = a.shape[0]
    eye = np.eye(d)
    kron_sum = np.kron(eye, a.T) + np.kron(a.T, eye)
    g = solve_linear(kron_sum, -eye.reshape(-1, order="F"))
    g = symmetrize(g.reshape(d, d, order="F"))
    resid = norm_inf(a.T @ g + g @ a + eye)
    if resid > get_tolerances().lyapunov_residual:
        raise SingularMatrix(f"Lyapunov residual {resid:.3e} too large")
    return g


def spectral_radius(a) -> float:
    """Estimate rho(a) as lim ||a^k||^(1/k) using repeated squaring.

    The matrix is renormalised after every squaring and the log-scale is
    accumulated separately, so neither overflow nor underflow occurs. Stops once
    successive estimates agree to ``rho_step`` relative.
    """
    tol = get_tolerances()
    b = as_matrix(a, "a", square=True)
    nb = norm_inf(b)
    if nb == 0.0:
        return 0.0
    log_rate = math.log(nb)  # log of the estimate ||a^(2^m)||^(1/2^m)
    b = b / nb
    weight = 1.0
    settled = 0
    for _ in range(tol.rho_max_squarings):
        b = b @ b
        nb = norm_inf(b)
        if nb == 0.0:
            return 0.0
        weight *= 0.5
        step = weight * math.log(nb)
        log_rate += step
        b = b / nb
        # two quiet steps in a row guard against a coincidental unit norm
        settled = settled + 1 if abs(math.expm1(step)) < tol.rho_step else 0
        if settled == 2:
            return math.exp(log_rate)
    raise NonConvergence(f"no convergence after {tol.rho_max_squarings} squarings")
