"""Centralised numerical tolerances.

Every threshold used by the kernels lives in :class:`Tolerances`. Override them
for a block of code with :func:`override_tolerances`; the active record is held
in a context variable, so concurrent threads each see their own setting.
"""

from __future__ import annotations

import contextlib
import contextvars
import dataclasses


@dataclasses.dataclass(frozen=True)
class Tolerances:
    solve_residual: float = 1e-10  # ||ax - b||_inf <= tol * (1 + ||b||_inf)
    pivot: float = 1e-13  # relative to ||a||_inf
    symmetry: float = 1e-10  # relative to ||s||_inf
    lyapunov_residual: float = 1e-9
    psd_slack: float = 1e-9  # margin >= -psd_slack counts as satisfied
    psd_zero: float = 1e-12  # lambda_min >= -psd_zero counts as PSD
    strict_margin: float = 1e-12  # SDP feasibility needs margin > this
    row_sum: float = 1e-12
    edge: float = 1e-14  # p[i][j] > edge is a support edge
    stationary_residual: float = 1e-10
    bellman_residual: float = 1e-9
    rho_step: float = 1e-8  # successive spectral-radius estimates
    rho_max_squarings: int = 200
    rate_slack: float = 1e-9
    rate_floor: float = 1e-13
    feature_rank: float = 1e-20  # lambda_min(phi^T phi) threshold (sigma_min^2)
    oracle_max_dim: int = 4000


_ACTIVE: contextvars.ContextVar[Tolerances] = contextvars.ContextVar(
    "vbcert_tolerances", default=Tolerances()
)


def get_tolerances() -> Tolerances:
    return _ACTIVE.get()


@contextlib.contextmanager
def override_tolerances(**changes):
    """Temporarily replace selected tolerance fields.

    >>> with override_tolerances(psd_slack=1e-6):
    ...     get_tolerances().psd_slack
    1e-06
    """
    token = _ACTIVE.set(dataclasses.replace(_ACTIVE.get(), **changes))
    try:
        yield _ACTIVE.get()
    finally:
        _ACTIVE.reset(token)
