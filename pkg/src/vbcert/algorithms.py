"""Value computation, value iteration, the VI sandwich envelopes and TD(0).

Sampling convention for TD(0) (stable, part of the public contract): run ``i``
of a batch with base seed ``seed`` uses ``numpy.random.default_rng(seed + i)``
(PCG64) and draws ``k + 1`` uniforms in one call to ``Generator.random``. The
first uniform picks ``s_0`` from the stationary distribution and uniform
``t + 1`` picks ``s_{t+1}`` from row ``s_t`` of ``P_pi``, both by inverse CDF:
the next state is the first index whose cumulative probability exceeds the
uniform.
"""

from __future__ import annotations

import csv
import dataclasses
from typing import Optional

import numpy as np

from .config import get_tolerances
from .errors import NotErgodic, RankDeficientFeatures, ShapeMismatch
from .mdp import Mdp, PolicyInduced, bellman_optimality, chain_structure, optimal_value, selector_matrices
from .numerics import as_matrix, sym_eig_extremes


@dataclasses.dataclass(frozen=True, eq=False)
class Trace:
    iterates: np.ndarray  # (K + 1, dim)
    switching: Optional[np.ndarray] = None  # (K, n), 0-based greedy actions
    visited: Optional[np.ndarray] = None  # (K + 1,)

    def __post_init__(self):
        if not np.all(np.isfinite(self.iterates)):
            raise FloatingPointError("trace contains non-finite iterates")
        if self.switching is not None and len(self.switching) != len(self.iterates) - 1:
            raise ValueError("switching length must equal iterate count - 1")

    @property
    def steps(self) -> int:
        return len(self.iterates) - 1


@dataclasses.dataclass(frozen=True, eq=False)
class SandwichTrace:
    j: Trace
    j_upper: np.ndarray
    j_lower: np.ndarray
    p_star_selector: np.ndarray
    j_star: np.ndarray

    def violation(self) -> float:
        """Largest breach of J^o_k - J* <= J_k - J* <= J^u_k - J* (<= 0 when it holds)."""
        j = self.j.iterates
        return float(max(np.max(self.j_lower - j), np.max(j - self.j_upper)))


@dataclasses.dataclass(frozen=True, eq=False)
class FeatureMap:
    phi: np.ndarray  # (n, d)

    def __post_init__(self):
        phi = as_matrix(self.phi, "phi")
        n, d = phi.shape
        if d > n:
            raise RankDeficientFeatures(f"feature dimension d={d} exceeds state count n={n}")
        smallest = sym_eig_extremes(phi.T @ phi).lambda_min
        if smallest <= get_tolerances().feature_rank:
            raise RankDeficientFeatures(
                f"features are not full column rank (lambda_min(phi^T phi) = {smallest:.3e})"
            )
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def d(self) -> int:
        return self.phi.shape[1]


def _vector(x, size, name) -> np.ndarray:
    x = np.array(x, dtype=float).reshape(-1)
    if x.shape != (size,):
        raise ShapeMismatch([f"{name} has length {x.size}, expected {size}"])
    return x


def run_vc(pi_ind: PolicyInduced, j0, k: int) -> Trace:
    """Iterate J <- gamma P_pi J + R_pi for ``k`` steps.

    Evaluated as R + gamma (P J), the same operation order as the Bellman
    operator, so a single-action VI run reproduces it bit for bit.
    """
    out = np.empty((k + 1, pi_ind.n))
    out[0] = _vector(j0, pi_ind.n, "j0")
    for t in range(k):
        out[t + 1] = pi_ind.r_pi + pi_ind.gamma * (pi_ind.p_pi @ out[t])
    return Trace(out)


def run_vc_error(pi_ind: PolicyInduced, zeta0, k: int) -> Trace:
    """Iterate the error system zeta <- gamma P_pi zeta directly.

    This is VC in the coordinates zeta = J - J_pi. Running it directly keeps
    full relative precision once J_k has converged to rounding level, which the
    Lyapunov rate checks need.
    """
    a = pi_ind.gamma * pi_ind.p_pi
    out = np.empty((k + 1, pi_ind.n))
    out[0] = _vector(zeta0, pi_ind.n, "zeta0")
    for t in range(k):
        out[t + 1] = a @ out[t]
    return Trace(out)


def run_vi(mdp: Mdp, j0, k: int, tol: Optional[float] = None, max_steps: int = 100_000) -> Trace:
    """Value iteration, recording the greedy selector of every step.

    Runs exactly ``k`` steps, or with ``k=None`` until the sup-norm change
    drops to ``tol`` (at most ``max_steps``).
    """
    if k is None and tol is None:
        raise ValueError("give k or tol")
    limit = k if k is not None else max_steps
    js = [_vector(j0, mdp.n, "j0")]
    sels = []
    for _ in range(limit):
        nxt, sel = bellman_optimality(mdp, js[-1])
        sels.append(sel)
        js.append(nxt)
        if k is None and np.max(np.abs(nxt - js[-2])) <= tol:
            break
    return Trace(np.array(js), np.array(sels, dtype=int).reshape(len(sels), mdp.n))


def run_sandwich(mdp: Mdp, j0, k: int, j_star=None) -> SandwichTrace:
    """Run VI together with its two linear positive-system envelopes.

    Upper: J^u_{t+1} - J* = gamma P_{sigma_t} (J^u_t - J*) reusing the VI
    switching sequence. Lower: J^o_{t+1} - J* = gamma P* (J^o_t - J*) with P*
    the greedy mode at J*.
    """
    if j_star is None:
        j_star, _ = optimal_value(mdp)
    j_star = np.asarray(j_star, dtype=float)
    vi = run_vi(mdp, j0, k)
    _, star_sel = bellman_optimality(mdp, j_star)
    p_star, _ = selector_matrices(mdp, star_sel)
    up = np.empty_like(vi.iterates)
    lo = np.empty_like(vi.iterates)
    up[0] = lo[0] = vi.iterates[0]
    for t in range(vi.steps):
        p_sig, _ = selector_matrices(mdp, vi.switching[t])
        up[t + 1] = j_star + mdp.gamma * (p_sig @ (up[t] - j_star))
        lo[t + 1] = j_star + mdp.gamma * (p_star @ (lo[t] - j_star))
    return SandwichTrace(vi, up, lo, star_sel, j_star)


def _cumulative_rows(p) -> np.ndarray:
    """Row-wise CDFs with every entry from the last positive one on set to 1."""
    p = np.asarray(p, dtype=float)
    cum = np.cumsum(p, axis=-1)
    last = p.shape[-1] - 1 - np.argmax((p > 0)[..., ::-1], axis=-1)
    cols = np.arange(p.shape[-1])
    cum[cols >= last[..., None]] = 1.0
    return cum


def sample_paths(pi_ind: PolicyInduced, k: int, seeds) -> np.ndarray:
    """State paths ``(len(seeds), k + 1)`` following the module's sampling rule."""
    if pi_ind.omega is None:
        raise NotErgodic("chain is not irreducible; no stationary start")
    u = np.array([np.random.default_rng(int(s)).random(k + 1) for s in seeds])
    start_cdf = _cumulative_rows(pi_ind.omega[None, :])[0]
    cdf = _cumulative_rows(pi_ind.p_pi)
    states = np.empty(u.shape, dtype=np.int64)
    states[:, 0] = np.sum(start_cdf[None, :] <= u[:, :1], axis=1)
    for t in range(k):
        states[:, t + 1] = np.sum(cdf[states[:, t]] <= u[:, t + 1 : t + 2], axis=1)
    return states


def _check_td_inputs(pi_ind: PolicyInduced, features: FeatureMap, alpha: float):
    if not alpha > 0:
        raise ValueError(f"stepsize must be positive, got {alpha!r}")
    if features.phi.shape[0] != pi_ind.n:
        raise ShapeMismatch([f"features have {features.phi.shape[0]} rows, expected {pi_ind.n}"])
    cs = chain_structure(pi_ind.p_pi)
    if not cs.aperiodic:
        raise NotErgodic(f"P_pi must be irreducible and aperiodic (irreducible={cs.irreducible}, period={cs.period})")


def _td0_batch(pi_ind, phi, alpha, theta0, states, theta_ref=None):
    """Run TD(0) on every row of ``states`` at once.

    Returns the full weight history ``(M, k + 1, d)``, or the per-step mean of
    ``||theta_t - theta_ref||^2`` over runs when ``theta_ref`` is given.
    """
    m, steps = states.shape
    gamma, r = pi_ind.gamma, pi_ind.r_pi
    theta = np.tile(np.asarray(theta0, dtype=float), (m, 1))
    if theta_ref is None:
        hist = np.empty((m, steps, theta.shape[1]))
        hist[:, 0] = theta
    else:
        mse = np.empty(steps)
        mse[0] = np.mean(np.sum((theta - theta_ref) ** 2, axis=1))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps - 1):
            f_now = phi[states[:, t]]
            f_next = phi[states[:, t + 1]]
            td = np.sum((f_now - gamma * f_next) * theta, axis=1) - r[states[:, t]]
            theta = theta - alpha * f_now * td[:, None]
            if theta_ref is None:
                hist[:, t + 1] = theta
            else:
                mse[t + 1] = np.mean(np.sum((theta - theta_ref) ** 2, axis=1))
    return hist if theta_ref is None else mse


def run_td0(pi_ind: PolicyInduced, features: FeatureMap, alpha: float, theta0, k: int, seed: int) -> Trace:
    """TD(0) with linear features along one sampled trajectory.

    theta <- theta - alpha phi(s_t) ((phi(s_t) - gamma phi(s_{t+1}))^T theta - R_pi(s_t))
    """
    _check_td_inputs(pi_ind, features, alpha)
    theta0 = _vector(theta0, features.d, "theta0")
    states = sample_paths(pi_ind, k, [seed])
    hist = _td0_batch(pi_ind, features.phi, alpha, theta0, states)
    return Trace(hist[0], visited=states[0])


def td0_mse_curve(pi_ind, features, alpha, theta0, theta_ref, runs: int, k: int, seed: int) -> np.ndarray:
    """Monte Carlo mean of ||theta_t - theta_ref||^2 over runs seeded seed..seed+runs-1."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    _check_td_inputs(pi_ind, features, alpha)
    theta0 = _vector(theta0, features.d, "theta0")
    states = sample_paths(pi_ind, k, range(seed, seed + runs))
    return _td0_batch(pi_ind, features.phi, alpha, theta0, states, theta_ref=np.asarray(theta_ref, dtype=float))


def write_trace_csv(trace: Trace, path, value_label="J") -> None:
    """One row per iteration: k, values, optional sigma (1-based), optional s_k."""
    k1, dim = trace.iterates.shape
    header = ["k"] + [f"{value_label}{i + 1}" for i in range(dim)]
    if trace.switching is not None:
        header += [f"sigma{i + 1}" for i in range(trace.switching.shape[1])]
    if trace.visited is not None:
        header.append("s_k")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for t in range(k1):
            row = [t] + [repr(float(v)) for v in trace.iterates[t]]
            if trace.switching is not None:
                row += [int(a) + 1 for a in trace.switching[t]] if t < k1 - 1 else [""] * trace.switching.shape[1]
            if trace.visited is not None:
                row.append(int(trace.visited[t]) + 1)
            out.writerow(row)
