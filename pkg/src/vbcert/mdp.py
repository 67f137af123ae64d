"""Finite MDPs, policies and the Markov chains they induce.

Actions and states are 0-based internally. The JSON formats use 1-based action
indices for deterministic policies, and reports print greedy selectors 1-based.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from collections import deque
from typing import Mapping, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .config import get_tolerances
from .errors import (
    InvalidGamma,
    InvalidKernel,
    InvalidPolicy,
    NonConvergence,
    Reducible,
    ShapeMismatch,
    SingularMatrix,
)
from .numerics import solve_linear

MDP_FIELDS = ("num_states", "num_actions", "gamma", "transitions", "rewards")


@dataclasses.dataclass(frozen=True, eq=False)
class Mdp:
    """A finite discounted MDP.

    ``p[s, a]`` is the next-state distribution for taking action ``a`` in
    state ``s``; ``r[s, a]`` the immediate reward.
    """

    p: np.ndarray  # (n, l, n)
    r: np.ndarray  # (n, l)
    gamma: float

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def l(self) -> int:
        return self.p.shape[1]

    @classmethod
    def from_arrays(cls, p, r, gamma) -> "Mdp":
        return validate_mdp(
            {
                "num_states": np.shape(p)[0],
                "num_actions": np.shape(p)[1],
                "gamma": gamma,
                "transitions": p,
                "rewards": r,
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "num_states": self.n,
            "num_actions": self.l,
            "gamma": self.gamma,
            "transitions": self.p.tolist(),
            "rewards": self.r.tolist(),
        }


@dataclasses.dataclass(frozen=True, eq=False)
class Policy:
    pi: np.ndarray  # (n, l), rows are action distributions

    @classmethod
    def deterministic(cls, actions, num_actions) -> "Policy":
        """Build a one-hot policy from 0-based action indices."""
        actions = np.asarray(actions, dtype=int)
        pi = np.zeros((actions.size, num_actions))
        pi[np.arange(actions.size), actions] = 1.0
        return cls(pi)


@dataclasses.dataclass(frozen=True, eq=False)
class PolicyInduced:
    p_pi: np.ndarray
    r_pi: np.ndarray
    omega: Optional[np.ndarray]
    j_pi: np.ndarray
    gamma: float

    @property
    def n(self) -> int:
        return self.p_pi.shape[0]


@dataclasses.dataclass(frozen=True)
class ChainStructure:
    irreducible: bool
    aperiodic: bool
    period: int


def _check_fields(raw: Mapping, allowed, required, what):
    if not isinstance(raw, Mapping):
        raise ShapeMismatch([f"{what} must be a JSON object"])
    unknown = sorted(set(raw) - set(allowed))
    missing = [f for f in required if f not in raw]
    problems = [f"unknown field {f!r}" for f in unknown]
    problems += [f"missing field {f!r}" for f in missing]
    if problems:
        raise ShapeMismatch(problems)


def validate_mdp(raw: Mapping) -> Mdp:
    """Validate raw MDP data in the JSON layout and return an :class:`Mdp`.

    All problems are collected before raising. Shape problems raise
    :class:`ShapeMismatch`; kernel problems :class:`InvalidKernel` (which also
    lists any discount problem); a bad discount alone :class:`InvalidGamma`.
    """
    _check_fields(raw, MDP_FIELDS, MDP_FIELDS, "MDP")
    tol = get_tolerances()
    problems = []
    try:
        n, l = int(raw["num_states"]), int(raw["num_actions"])
        p = np.array(raw["transitions"], dtype=float)
        r = np.array(raw["rewards"], dtype=float)
        gamma = float(raw["gamma"])
    except (TypeError, ValueError) as exc:
        raise ShapeMismatch([f"non-numeric or ragged data: {exc}"]) from None
    if n < 1 or l < 1:
        problems.append(f"num_states={n} and num_actions={l} must be positive")
    if p.shape != (n, l, n):
        problems.append(f"transitions has shape {p.shape}, expected {(n, l, n)}")
    if r.shape != (n, l):
        problems.append(f"rewards has shape {r.shape}, expected {(n, l)}")
    if problems:
        raise ShapeMismatch(problems)

    kernel = []
    if not np.all(np.isfinite(p)):
        kernel.append("transitions contain NaN or Inf")
    else:
        for s, a in itertools.product(range(n), range(l)):
            row = p[s, a]
            neg = np.flatnonzero(row < 0)
            if neg.size:
                j = int(neg[0])
                kernel.append(f"row (state {s + 1}, action {a + 1}) has negative entry {row[j]!r} at {j + 1}")
            total = float(row.sum())
            if abs(total - 1.0) > tol.row_sum:
                kernel.append(f"row (state {s + 1}, action {a + 1}) sums to {total!r}")
    if not np.all(np.isfinite(r)):
        kernel.append("rewards contain NaN or Inf")
    gamma_problems = []
    if not (math.isfinite(gamma) and 0.0 < gamma < 1.0):
        gamma_problems.append(f"gamma={gamma!r} outside (0, 1)")
    if kernel:
        raise InvalidKernel(kernel + gamma_problems)
    if gamma_problems:
        raise InvalidGamma(gamma_problems)
    p.setflags(write=False)
    r.setflags(write=False)
    return Mdp(p, r, gamma)


def validate_policy(pi, mdp: Mdp) -> Policy:
    pi = np.array(pi, dtype=float)
    if pi.shape != (mdp.n, mdp.l):
        raise ShapeMismatch([f"policy has shape {pi.shape}, expected {(mdp.n, mdp.l)}"])
    tol = get_tolerances()
    problems = []
    for s in range(mdp.n):
        if not np.all(np.isfinite(pi[s])) or np.any(pi[s] < 0):
            problems.append(f"policy row {s + 1} has a negative or non-finite entry")
        elif abs(pi[s].sum() - 1.0) > tol.row_sum:
            problems.append(f"policy row {s + 1} sums to {float(pi[s].sum())!r}")
    if problems:
        raise InvalidPolicy(problems)
    pi.setflags(write=False)
    return Policy(pi)


def parse_policy(raw: Mapping, mdp: Mdp) -> Policy:
    """Parse ``{"pi": ...}`` or ``{"deterministic": [1-based actions]}``."""
    _check_fields(raw, ("pi", "deterministic"), (), "policy")
    if ("pi" in raw) == ("deterministic" in raw):
        raise ShapeMismatch(["policy needs exactly one of 'pi' or 'deterministic'"])
    if "pi" in raw:
        return validate_policy(raw["pi"], mdp)
    acts = raw["deterministic"]
    if not isinstance(acts, list) or len(acts) != mdp.n:
        raise ShapeMismatch([f"'deterministic' must list {mdp.n} actions"])
    bad = [i + 1 for i, a in enumerate(acts) if isinstance(a, bool) or not (isinstance(a, int) and 1 <= a <= mdp.l)]
    if bad:
        raise InvalidPolicy([f"state {s}: action must be an integer in 1..{mdp.l}" for s in bad])
    return validate_policy(Policy.deterministic(np.array(acts) - 1, mdp.l).pi, mdp)


def load_mdp(path) -> Mdp:
    with open(path, encoding="utf-8") as fh:
        return validate_mdp(json.load(fh))


def load_policy(path, mdp: Mdp) -> Policy:
    with open(path, encoding="utf-8") as fh:
        return parse_policy(json.load(fh), mdp)


def _support(p) -> np.ndarray:
    return np.asarray(p) > get_tolerances().edge


def chain_structure(p) -> ChainStructure:
    """Irreducibility and period of the support graph of ``p``.

    The period is the gcd over edges (u, v) of depth(u) + 1 - depth(v), with
    depths from a BFS rooted at state 0 inside its communicating class.
    """
    adj = _support(p)
    n = adj.shape[0]
    ncomp, labels = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    root_class = labels == labels[0]
    depth = np.full(n, -1)
    depth[0] = 0
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u] & root_class):
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                queue.append(v)
    period = 0
    for u in np.flatnonzero(root_class):
        for v in np.flatnonzero(adj[u] & root_class):
            period = math.gcd(period, int(depth[u] + 1 - depth[v]))
    # a class without internal edges (transient singleton) has no cycles
    period = max(period, 1) if period else 1
    irreducible = ncomp == 1
    return ChainStructure(irreducible, irreducible and period == 1, period)


def stationary_distribution(p) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix.

    Solves (P^T - I) w = 0 with the last equation replaced by sum(w) = 1, so
    periodic chains are handled as well.
    """
    p = np.asarray(p, dtype=float)
    if not chain_structure(p).irreducible:
        raise Reducible("transition matrix is not irreducible")
    n = p.shape[0]
    system = p.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    omega = solve_linear(system, rhs)
    # clip rounding-level negatives; irreducibility guarantees omega > 0
    omega = np.maximum(omega, 0.0)
    return omega / omega.sum()


def induce_policy(mdp: Mdp, policy: Policy) -> PolicyInduced:
    pi = policy.pi
    if pi.shape != (mdp.n, mdp.l):
        raise ShapeMismatch([f"policy has shape {pi.shape}, expected {(mdp.n, mdp.l)}"])
    p_pi = np.einsum("sa,sat->st", pi, mdp.p)
    r_pi = np.einsum("sa,sa->s", pi, mdp.r)
    return policy_induced_from(p_pi, r_pi, mdp.gamma)


def policy_induced_from(p_pi, r_pi, gamma) -> PolicyInduced:
    """Induced-chain quantities from an explicit (P_pi, R_pi) pair."""
    p_pi = np.array(p_pi, dtype=float)
    r_pi = np.array(r_pi, dtype=float)
    n = p_pi.shape[0]
    try:
        j_pi = solve_linear(np.eye(n) - gamma * p_pi, r_pi)
    except SingularMatrix as exc:  # impossible for gamma < 1 and stochastic p_pi
        raise RuntimeError(f"I - gamma P_pi reported singular: {exc}") from exc
    omega = stationary_distribution(p_pi) if chain_structure(p_pi).irreducible else None
    for arr in (p_pi, r_pi, j_pi, omega):
        if arr is not None:
            arr.setflags(write=False)
    return PolicyInduced(p_pi, r_pi, omega, j_pi, float(gamma))


def q_values(mdp: Mdp, j) -> np.ndarray:
    # 2-D product over the stacked action rows, the same kernel VC uses
    expect = (mdp.p.reshape(mdp.n * mdp.l, mdp.n) @ np.asarray(j, dtype=float)).reshape(mdp.n, mdp.l)
    return mdp.r + mdp.gamma * expect


def bellman_optimality(mdp: Mdp, j):
    """Apply the Bellman optimality operator.

    Returns ``(T(j), selector)``; ``selector[s]`` is the 0-based greedy action,
    ties going to the smallest index.
    """
    q = q_values(mdp, j)
    sel = np.argmax(q, axis=1)
    return q[np.arange(mdp.n), sel], sel


def selector_matrices(mdp: Mdp, selector):
    """(P_m, R_m) for the mode picking ``selector[s]`` in every state."""
    idx = np.arange(mdp.n)
    return mdp.p[idx, selector], mdp.r[idx, selector]


def policy_value(mdp: Mdp, selector) -> np.ndarray:
    p_m, r_m = selector_matrices(mdp, selector)
    return solve_linear(np.eye(mdp.n) - mdp.gamma * p_m, r_m)


def optimal_value(mdp: Mdp):
    """Solve the optimal Bellman equation by policy iteration.

    Returns ``(j_star, policy)``. The incumbent action is kept unless another
    action improves its Q-value by more than rounding level, which rules out
    cycling between numerically tied actions.
    """
    tol = get_tolerances()
    idx = np.arange(mdp.n)
    selector = np.zeros(mdp.n, dtype=int)
    limit = mdp.l**mdp.n
    for _ in range(limit + 1):
        j = policy_value(mdp, selector)
        q = q_values(mdp, j)
        greedy = np.argmax(q, axis=1)
        slack = 1e-12 * (1.0 + np.max(np.abs(j)))
        improved = q[idx, greedy] > q[idx, selector] + slack
        new = np.where(improved, greedy, selector)
        if np.array_equal(new, selector):
            break
        selector = new
    else:
        raise NonConvergence(f"policy iteration exceeded {limit} iterations")
    tj, _ = bellman_optimality(mdp, j)
    resid = float(np.max(np.abs(tj - j)))
    if resid > tol.bellman_residual * (1.0 + float(np.max(np.abs(j)))):
        raise NonConvergence(f"Bellman residual {resid:.3e} after policy iteration")
    return j, Policy.deterministic(selector, mdp.l)


def enumerate_optimal_value(mdp: Mdp) -> np.ndarray:
    """Elementwise max of J_pi over all l^n deterministic policies (brute force)."""
    best = np.full(mdp.n, -np.inf)
    for sel in itertools.product(range(mdp.l), repeat=mdp.n):
        best = np.maximum(best, policy_value(mdp, np.array(sel)))
    return best
