"""LP/SDP certificates for VC and VI viewed as positive (switched) systems.

VC is the positive LTI system zeta <- gamma P_pi zeta; VI is a switched
positive affine system whose modes pick one action row per state. The
certificates here are closed-form; verifiers report worst-case slacks.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
from typing import Optional

import numpy as np

from .config import get_tolerances
from .errors import KindUnavailable, NonPositiveNu, NonPositiveXi, NotPositiveDefinite, TooLarge
from .mdp import Mdp, PolicyInduced
from .numerics import as_matrix, sym_eig_extremes, symmetrize


class ConditionKind(str, enum.Enum):
    LP_RIGHT = "LP_RIGHT"  # A xi <= rate xi
    LP_LEFT = "LP_LEFT"  # nu^T A <= rate nu^T
    SDP = "SDP"  # A^T G A <= rate^2 G
    SWITCHED_LP = "SWITCHED_LP"  # A_m xi <= gamma xi for every mode
    SWITCHED_LP_LEFT = "SWITCHED_LP_LEFT"  # common nu over all modes
    SWITCHED_SDP = "SWITCHED_SDP"  # common G over all modes


class LyapunovKind(str, enum.Enum):
    V1 = "V1"  # max_i |zeta_i|
    V2 = "V2"  # |nu^T zeta|
    V3 = "V3"  # zeta^T G zeta


@dataclasses.dataclass(frozen=True, eq=False)
class VcCertificate:
    xi: np.ndarray
    nu: Optional[np.ndarray]
    g: Optional[np.ndarray]
    gamma: float

    def to_json_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(),
            "nu": None if self.nu is None else self.nu.tolist(),
            "g_diag": None if self.g is None else np.diag(self.g).tolist(),
            "gamma": self.gamma,
        }


@dataclasses.dataclass(frozen=True)
class ConditionReport:
    kind: ConditionKind
    satisfied: bool
    margin: float
    strict: bool  # margin > 0, i.e. the strict (necessary and sufficient) variant

    @classmethod
    def from_margin(cls, kind, margin):
        margin = float(margin)
        return cls(kind, margin >= -get_tolerances().psd_slack, margin, margin > 0.0)

    def to_json_dict(self) -> dict:
        return {"kind": self.kind.value, "satisfied": self.satisfied, "margin": self.margin, "strict": self.strict}


@dataclasses.dataclass(frozen=True, eq=False)
class LyapunovTrace:
    kind: LyapunovKind
    values: np.ndarray
    rate_ok: bool
    worst_ratio: float
    target: float

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target": self.target,
            "rate_ok": self.rate_ok,
            "worst_ratio": self.worst_ratio,
            "values": self.values.tolist(),
        }


def construct_vc_certificate(pi_ind: PolicyInduced) -> VcCertificate:
    """xi = 1, nu = omega, G = diag(nu / xi).

    For a reducible chain there is no stationary distribution; the returned
    certificate then carries xi only, which still backs V1.
    """
    xi = np.ones(pi_ind.n)
    if pi_ind.omega is None:
        return VcCertificate(xi, None, None, pi_ind.gamma)
    nu = np.array(pi_ind.omega)
    return VcCertificate(xi, nu, np.diag(nu / xi), pi_ind.gamma)


def verify_lp_right(a, xi, rate) -> ConditionReport:
    a = as_matrix(a, "a", square=True)
    xi = np.asarray(xi, dtype=float)
    if not np.all(xi > 0):
        raise NonPositiveXi("xi must be entrywise positive")
    return ConditionReport.from_margin(ConditionKind.LP_RIGHT, np.min(rate * xi - a @ xi))


def verify_lp_left(a, nu, rate) -> ConditionReport:
    a = as_matrix(a, "a", square=True)
    nu = np.asarray(nu, dtype=float)
    if not np.all(nu > 0):
        raise NonPositiveNu("nu must be entrywise positive")
    return ConditionReport.from_margin(ConditionKind.LP_LEFT, np.min(rate * nu - nu @ a))


def _require_pd(g):
    g = as_matrix(g, "g", square=True)
    if sym_eig_extremes(g).lambda_min <= get_tolerances().psd_zero:
        raise NotPositiveDefinite("G must be positive definite")
    return symmetrize(g)


def verify_sdp(a, g, rate) -> ConditionReport:
    """Margin lambda_min(rate^2 G - A^T G A)."""
    a = as_matrix(a, "a", square=True)
    g = _require_pd(g)
    gap = symmetrize(rate**2 * g - a.T @ g @ a)
    return ConditionReport.from_margin(ConditionKind.SDP, sym_eig_extremes(gap).lambda_min)


def verify_switched_linf(mdp: Mdp) -> ConditionReport:
    """Common xi = 1 for every VI mode, checked on the n*l action rows.

    Mode m stacks one action row per state, so A_m 1 <= gamma 1 for all m holds
    exactly when every action row does.
    """
    rows = mdp.p.sum(axis=2)
    return ConditionReport.from_margin(ConditionKind.SWITCHED_LP, np.min(mdp.gamma * (1.0 - rows)))


def verify_switched_lp_left(mdp: Mdp, nu) -> ConditionReport:
    """Common copositive nu: nu^T A_m <= gamma nu^T for every mode m.

    Column j of nu^T A_m is gamma sum_i nu_i P((i, a_i), j); the worst mode
    picks, column by column, the action maximising P((i, a), j) in each state.
    """
    nu = np.asarray(nu, dtype=float)
    if not np.all(nu > 0):
        raise NonPositiveNu("nu must be entrywise positive")
    worst = nu @ mdp.p.max(axis=1)
    return ConditionReport.from_margin(ConditionKind.SWITCHED_LP_LEFT, np.min(mdp.gamma * (nu - worst)))


def verify_switched_sdp(mdp: Mdp, g, max_modes: int = 100_000) -> ConditionReport:
    """Common quadratic G for every mode; needs all l^n modes enumerated."""
    g = _require_pd(g)
    if mdp.l**mdp.n > max_modes:
        raise TooLarge(f"{mdp.l}^{mdp.n} modes exceed max_modes={max_modes}")
    idx = np.arange(mdp.n)
    margin = np.inf
    for sel in itertools.product(range(mdp.l), repeat=mdp.n):
        a = mdp.gamma * mdp.p[idx, list(sel)]
        gap = symmetrize(mdp.gamma**2 * g - a.T @ g @ a)
        margin = min(margin, sym_eig_extremes(gap).lambda_min)
    return ConditionReport.from_margin(ConditionKind.SWITCHED_SDP, margin)


def lyapunov_values(zetas, cert: VcCertificate, kind) -> np.ndarray:
    kind = LyapunovKind(kind)
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    if kind is LyapunovKind.V1:
        return np.max(np.abs(zetas), axis=1)
    if kind is LyapunovKind.V2:
        if cert.nu is None:
            raise KindUnavailable("V2 needs nu (stationary distribution); chain is reducible")
        return np.abs(zetas @ cert.nu)
    if cert.g is None:
        raise KindUnavailable("V3 needs G (stationary distribution); chain is reducible")
    return np.einsum("ki,ij,kj->k", zetas, cert.g, zetas)


def lyapunov_trace(trace, j_ref, cert: VcCertificate, kind, floor: Optional[float] = None) -> LyapunovTrace:
    """Evaluate V(J_k - j_ref) along a trace and check its per-step decay.

    The target factor is gamma for V1/V2 and gamma^2 for V3. ``worst_ratio``
    is the largest V_{k+1} / (target V_k) over steps with V_k above ``floor``.
    """
    kind = LyapunovKind(kind)
    tol = get_tolerances()
    floor = tol.rate_floor if floor is None else floor
    iterates = trace.iterates if hasattr(trace, "iterates") else np.asarray(trace)
    values = lyapunov_values(iterates - np.asarray(j_ref, dtype=float), cert, kind)
    target = cert.gamma**2 if kind is LyapunovKind.V3 else cert.gamma
    live = values[:-1] > floor
    if np.any(live):
        worst = float(np.max(values[1:][live] / (target * values[:-1][live])))
    else:
        worst = 0.0
    return LyapunovTrace(kind, values, worst <= 1.0 + tol.rate_slack, worst, float(target))
