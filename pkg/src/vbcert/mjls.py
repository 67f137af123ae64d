"""TD(0) as a Markov jump linear system and its mean-square stability certificate.

With z_k = (s_k, s_{k+1}) and zeta_k = theta_k - theta_pi, TD(0) reads

    zeta_{k+1} = (I + alpha A_{z_k}) zeta_k + alpha b_{z_k}

The explicit candidate G_i = Gbar + alpha Gtilde_i reduces the MSS SDP to the
scalar conditions used by :func:`compute_alpha_bound`; the Kronecker
second-moment operator in :func:`mss_spectral_oracle` is an independent check.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from .algorithms import FeatureMap, td0_mse_curve
from .config import get_tolerances
from .errors import NotErgodic, NotHurwitz, SingularAbar, SingularMatrix, TooLarge
from .mdp import PolicyInduced, chain_structure
from .numerics import norm_inf, solve_continuous_lyapunov, solve_linear, spectral_radius, sym_eig_extremes, symmetrize


@dataclasses.dataclass(frozen=True, eq=False)
class AugmentedChain:
    states: list  # [(s, s_next)], lexicographic, 0-based
    trans: np.ndarray  # (N, N)
    p_inf: np.ndarray  # (N,)

    @property
    def size(self) -> int:
        return len(self.states)


@dataclasses.dataclass(frozen=True, eq=False)
class MjlsModel:
    a_mats: np.ndarray  # (N, d, d)
    b_vecs: np.ndarray  # (N, d)
    theta_pi: np.ndarray
    a_bar: np.ndarray

    @property
    def d(self) -> int:
        return self.a_bar.shape[0]

    def h_mats(self, alpha: float) -> np.ndarray:
        return np.eye(self.d)[None] + alpha * self.a_mats


@dataclasses.dataclass(frozen=True, eq=False)
class MssCertificate:
    g_bar: np.ndarray
    g_tilde: np.ndarray  # (N, d, d), last entry is zero
    x_mats: np.ndarray
    m_mats: np.ndarray
    m_tilde_mats: np.ndarray
    g_tilde_residual: float
    alpha_bars: Optional[np.ndarray] = None  # per pair, inf when unbounded
    g_bounds: Optional[np.ndarray] = None  # lambda_min(Gbar) / |lambda_min(Gtilde_i)|
    alpha_max: Optional[float] = None


@dataclasses.dataclass(frozen=True, eq=False)
class MssReport:
    alpha: float
    sdp_margins: np.ndarray
    g_margins: np.ndarray
    feasible: bool
    oracle_rho: Optional[float]
    mse_curve: Optional[np.ndarray] = None


def build_augmented_chain(pi_ind: PolicyInduced) -> AugmentedChain:
    """Chain of consecutive state pairs, restricted to pairs with positive mass.

    The pair (s, s') carries stationary mass omega(s) P(s, s') and moves to
    (s', s'') with probability P(s', s'').
    """
    p = pi_ind.p_pi
    cs = chain_structure(p)
    if not cs.aperiodic:
        raise NotErgodic(f"P_pi must be irreducible and aperiodic (irreducible={cs.irreducible}, period={cs.period})")
    omega = pi_ind.omega
    edge = get_tolerances().edge
    states = [(s, t) for s in range(pi_ind.n) for t in range(pi_ind.n) if p[s, t] > edge]
    index = {pair: i for i, pair in enumerate(states)}
    trans = np.zeros((len(states), len(states)))
    for i, (_, mid) in enumerate(states):
        for nxt in range(pi_ind.n):
            j = index.get((mid, nxt))
            if j is not None:
                trans[i, j] = p[mid, nxt]
    p_inf = np.array([omega[s] * p[s, t] for s, t in states])
    pair_cs = chain_structure(trans)
    if not pair_cs.aperiodic:
        raise NotErgodic("pair chain is not irreducible and aperiodic on its support")
    resid = norm_inf(p_inf @ trans - p_inf)
    if resid > get_tolerances().stationary_residual:
        raise NotErgodic(f"pair distribution is not stationary (residual {resid:.3e})")
    return AugmentedChain(states, trans, p_inf)


def build_mjls(chain: AugmentedChain, pi_ind: PolicyInduced, features: FeatureMap) -> MjlsModel:
    """A_i = phi(s)(gamma phi(s') - phi(s))^T, theta_pi from Abar theta + c = 0,
    b_i = phi(s)(R(s) - (phi(s) - gamma phi(s'))^T theta_pi)."""
    phi, gamma, r = features.phi, pi_ind.gamma, pi_ind.r_pi
    if phi.shape[0] != pi_ind.n:
        raise ValueError(f"features have {phi.shape[0]} rows, expected {pi_ind.n}")
    cur = np.array([phi[s] for s, _ in chain.states])
    nxt = np.array([phi[t] for _, t in chain.states])
    rew = np.array([r[s] for s, _ in chain.states])
    a_mats = np.einsum("ni,nj->nij", cur, gamma * nxt - cur)
    a_bar = np.einsum("n,nij->ij", chain.p_inf, a_mats)
    c = np.einsum("n,ni->i", chain.p_inf, cur * rew[:, None])
    try:
        theta_pi = solve_linear(a_bar, -c)
    except SingularMatrix as exc:
        raise SingularAbar(f"Abar is singular; no unique TD fixed point ({exc})") from None
    b_vecs = cur * (rew - (cur - gamma * nxt) @ theta_pi)[:, None]
    drift = norm_inf(chain.p_inf @ b_vecs)
    if drift > 1e-9 * (1.0 + norm_inf(c)):
        raise SingularAbar(f"sum p_i b_i = {drift:.3e}; fixed point solve is unreliable")
    return MjlsModel(a_mats, b_vecs, theta_pi, a_bar)


def _sym_products(a_mats, mid):
    """A_i^T mid_i A_i symmetrised, for per-pair or shared ``mid``."""
    if mid.ndim == 2:
        mid = np.broadcast_to(mid, a_mats.shape)
    out = np.einsum("nki,nkl,nlj->nij", a_mats, mid, a_mats)
    return 0.5 * (out + out.transpose(0, 2, 1))


def build_mss_certificate(model: MjlsModel, chain: AugmentedChain) -> MssCertificate:
    """Gbar from the Lyapunov equation, Gtilde from the pair-chain linear system.

    Gtilde_N = 0 for the last pair N; for i < N every matrix entry solves
    (I - Phat) x = X(entry), Phat the leading (N-1)x(N-1) block of the pair
    transition matrix.
    """
    size, d = chain.size, model.d
    try:
        g_bar = solve_continuous_lyapunov(model.a_bar)
    except SingularMatrix as exc:
        raise NotHurwitz(f"Lyapunov equation for Abar has no unique solution ({exc})") from None
    lam = sym_eig_extremes(g_bar).lambda_min
    if lam <= 0:
        raise NotHurwitz(f"Abar is not Hurwitz (lambda_min(Gbar) = {lam:.3e})")
    y = np.einsum("nki,kj->nij", model.a_mats, g_bar)  # A_i^T Gbar
    x_mats = y + y.transpose(0, 2, 1) + np.eye(d)[None] / (chain.p_inf * size)[:, None, None]

    g_tilde = np.zeros((size, d, d))
    resid = 0.0
    if size > 1:
        p_hat = chain.trans[:-1, :-1]
        rhs = x_mats[:-1].reshape(size - 1, d * d)
        sol = solve_linear(np.eye(size - 1) - p_hat, rhs).reshape(size - 1, d, d)
        g_tilde[:-1] = 0.5 * (sol + sol.transpose(0, 2, 1))
        lhs = g_tilde[:-1] - np.einsum("ij,jkl->ikl", p_hat, g_tilde[:-1])
        resid = float(np.max(np.abs(lhs - x_mats[:-1])))

    s_mats = np.einsum("ij,jkl->ikl", chain.trans, g_tilde)  # sum_j p_ij Gtilde_j
    z = np.einsum("nki,nkj->nij", model.a_mats, s_mats)  # A_i^T S_i
    m_mats = -_sym_products(model.a_mats, g_bar) - (z + z.transpose(0, 2, 1))
    m_tilde = -_sym_products(model.a_mats, s_mats)
    return MssCertificate(g_bar, g_tilde, x_mats, m_mats, m_tilde, resid)


def last_pair_identity_residual(model: MjlsModel, cert: MssCertificate, chain: AugmentedChain) -> float:
    """Check p_N (A_N^T Gbar + Gbar A_N) = -I - sum_{i<N} p_i (A_i^T Gbar + Gbar A_i)."""
    y = np.einsum("nki,kj->nij", model.a_mats, cert.g_bar)
    sym = y + y.transpose(0, 2, 1)
    lhs = chain.p_inf[-1] * sym[-1]
    rhs = -np.eye(model.d) - np.einsum("n,nij->ij", chain.p_inf[:-1], sym[:-1])
    return float(np.max(np.abs(lhs - rhs)))


def _quadratic_bound(c, m, t):
    """Positive root of c + m a + t a^2 = 0 for t < 0, written without cancellation."""
    root = math.sqrt(m * m - 4.0 * t * c)
    if m <= 0:
        return 2.0 * c / (root - m)
    return (-m - root) / (2.0 * t)


def compute_alpha_bound(cert: MssCertificate, chain: AugmentedChain):
    """Per-pair stepsize bounds and their minimum.

    Returns ``(alpha_bars, g_bounds, alpha_max)``. For each pair with
    c = 1/(p_i N), m = lambda_min(M_i), t = lambda_min(Mtilde_i), the bound is
    c/|m| (or inf) when Mtilde_i is PSD and the positive root of c + m a + t a^2
    otherwise; near-zero negative t evaluates both and keeps the smaller.
    ``g_bounds`` keeps Gbar + alpha Gtilde_i positive definite.
    """
    tol = get_tolerances()
    size = chain.size
    g_min = sym_eig_extremes(cert.g_bar).lambda_min
    alpha_bars = np.empty(size)
    g_bounds = np.empty(size)
    for i in range(size):
        c = 1.0 / (chain.p_inf[i] * size)
        m = sym_eig_extremes(cert.m_mats[i]).lambda_min
        t = sym_eig_extremes(cert.m_tilde_mats[i]).lambda_min
        linear = c / abs(m) if m < 0 else math.inf
        if t >= 0:
            alpha_bars[i] = linear
        elif t >= -tol.psd_zero:
            alpha_bars[i] = min(linear, _quadratic_bound(c, m, t))
        else:
            alpha_bars[i] = _quadratic_bound(c, m, t)
        gt = sym_eig_extremes(cert.g_tilde[i]).lambda_min
        g_bounds[i] = g_min / abs(gt) if gt < 0 else math.inf
    alpha_max = float(min(np.min(alpha_bars), np.min(g_bounds)))
    return alpha_bars, g_bounds, alpha_max


def certify(pi_ind: PolicyInduced, features: FeatureMap):
    """Convenience pipeline: chain, model and certificate with bounds filled in."""
    chain = build_augmented_chain(pi_ind)
    model = build_mjls(chain, pi_ind, features)
    cert = build_mss_certificate(model, chain)
    alpha_bars, g_bounds, alpha_max = compute_alpha_bound(cert, chain)
    cert = dataclasses.replace(cert, alpha_bars=alpha_bars, g_bounds=g_bounds, alpha_max=alpha_max)
    return chain, model, cert


def verify_mss_sdp(model: MjlsModel, cert: MssCertificate, chain: AugmentedChain, alpha: float, oracle: bool = True) -> MssReport:
    """Check G_i = Gbar + alpha Gtilde_i against G_i - H_i^T (sum_j p_ij G_j) H_i > 0 directly."""
    if not alpha > 0:
        raise ValueError(f"stepsize must be positive, got {alpha!r}")
    tol = get_tolerances()
    g = cert.g_bar[None] + alpha * cert.g_tilde
    h = model.h_mats(alpha)
    mixed = np.einsum("ij,jkl->ikl", chain.trans, g)
    sdp = np.empty(chain.size)
    gm = np.empty(chain.size)
    for i in range(chain.size):
        gap = symmetrize(g[i] - h[i].T @ mixed[i] @ h[i])
        sdp[i] = sym_eig_extremes(gap).lambda_min
        gm[i] = sym_eig_extremes(g[i]).lambda_min
    feasible = bool(np.all(gm > tol.strict_margin) and np.all(sdp > tol.strict_margin))
    rho = None
    if oracle:
        try:
            rho = mss_spectral_oracle(model, chain, alpha)
        except TooLarge:
            rho = None
    return MssReport(float(alpha), sdp, gm, feasible, rho)


def second_moment_operator(model: MjlsModel, chain: AugmentedChain, alpha: float) -> np.ndarray:
    """Linear map on stacked vec(Q_i): Q_i <- sum_j p_ji H_j Q_j H_j^T."""
    h = model.h_mats(alpha)
    size, d = chain.size, model.d
    if size * d * d > get_tolerances().oracle_max_dim:
        raise TooLarge(f"operator dimension {size * d * d} exceeds {get_tolerances().oracle_max_dim}")
    kron = np.einsum("nab,ncd->nacbd", h, h).reshape(size, d * d, d * d)
    op = np.einsum("ji,jab->iajb", chain.trans, kron)
    return op.reshape(size * d * d, size * d * d)


def mss_spectral_oracle(model: MjlsModel, chain: AugmentedChain, alpha: float) -> float:
    """Spectral radius of the second-moment operator; MSS iff below 1."""
    return spectral_radius(second_moment_operator(model, chain, alpha))


def estimate_mse_curve(model: MjlsModel, pi_ind: PolicyInduced, features: FeatureMap, alpha: float,
                       runs: int, k: int, seed: int, theta0=None) -> np.ndarray:
    """Monte Carlo estimate of E||theta_k - theta_pi||^2, k = 0..k."""
    theta0 = model.theta_pi if theta0 is None else theta0
    return td0_mse_curve(pi_ind, features, alpha, theta0, model.theta_pi, runs, k, seed)
