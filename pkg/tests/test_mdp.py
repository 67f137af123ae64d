import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbcert.errors import InvalidGamma, InvalidKernel, InvalidPolicy, Reducible, ShapeMismatch
from vbcert.mdp import (
    Mdp,
    Policy,
    bellman_optimality,
    chain_structure,
    enumerate_optimal_value,
    induce_policy,
    optimal_value,
    parse_policy,
    policy_induced_from,
    stationary_distribution,
    validate_mdp,
)

from conftest import random_mdp, random_stochastic


def raw_mdp(p, r, gamma):
    p = np.asarray(p, dtype=float)
    return {"num_states": p.shape[0], "num_actions": p.shape[1], "gamma": gamma,
            "transitions": p.tolist(), "rewards": np.asarray(r, dtype=float).tolist()}


class TestValidate:
    def test_trivial(self):
        mdp = validate_mdp(raw_mdp([[[1.0]]], [[0.0]], 0.9))
        assert (mdp.n, mdp.l, mdp.gamma) == (1, 1, 0.9)

    def test_bad_row_reports_sum(self):
        with pytest.raises(InvalidKernel) as err:
            validate_mdp(raw_mdp([[[0.5, 0.6]], [[0.5, 0.5]]], [[0], [0]], 0.9))
        assert "1.1" in str(err.value)
        assert len(err.value.problems) == 1

    def test_gamma_one(self):
        with pytest.raises(InvalidGamma):
            validate_mdp(raw_mdp([[[1.0]]], [[0.0]], 1.0))

    def test_collects_every_problem(self):
        p = [[[0.5, 0.6], [-0.1, 1.1]], [[0.2, 0.2], [0.5, 0.5]]]
        with pytest.raises(InvalidKernel) as err:
            validate_mdp(raw_mdp(p, [[0, 0], [0, 0]], 1.5))
        probs = err.value.problems
        assert sum("sums to" in s for s in probs) == 2
        assert any("negative" in s for s in probs)
        assert any("gamma" in s for s in probs)

    def test_shape_mismatch(self):
        raw = raw_mdp([[[1.0]]], [[0.0]], 0.9)
        raw["num_states"] = 2
        with pytest.raises(ShapeMismatch):
            validate_mdp(raw)

    def test_unknown_field(self):
        raw = raw_mdp([[[1.0]]], [[0.0]], 0.9)
        raw["extra"] = 1
        with pytest.raises(ShapeMismatch, match="unknown field"):
            validate_mdp(raw)

    def test_json_round_trip(self, rng):
        mdp = random_mdp(rng, 4, 2, 0.8)
        again = validate_mdp(json.loads(json.dumps(mdp.to_json_dict())))
        np.testing.assert_array_equal(again.p, mdp.p)


class TestPolicyParsing:
    def test_deterministic_one_based(self, rng):
        mdp = random_mdp(rng, 3, 2, 0.9)
        pol = parse_policy({"deterministic": [1, 2, 2]}, mdp)
        np.testing.assert_array_equal(pol.pi, [[1, 0], [0, 1], [0, 1]])

    def test_stochastic(self, rng):
        mdp = random_mdp(rng, 2, 2, 0.9)
        assert parse_policy({"pi": [[0.5, 0.5], [1, 0]]}, mdp).pi.shape == (2, 2)

    @pytest.mark.parametrize("raw, exc", [
        ({"deterministic": [0, 1]}, InvalidPolicy),
        ({"deterministic": [1]}, ShapeMismatch),
        ({"pi": [[0.5, 0.6], [1, 0]]}, InvalidPolicy),
        ({"pi": [[1, 0], [1, 0]], "extra": 1}, ShapeMismatch),
        ({}, ShapeMismatch),
    ])
    def test_rejects(self, rng, raw, exc):
        mdp = random_mdp(rng, 2, 2, 0.9)
        with pytest.raises(exc):
            parse_policy(raw, mdp)


class TestChain:
    def test_two_cycle(self):
        cs = chain_structure([[0, 1], [1, 0]])
        assert cs.irreducible and cs.period == 2 and not cs.aperiodic

    def test_self_loop(self):
        cs = chain_structure([[0.5, 0.5], [0.5, 0.5]])
        assert cs.irreducible and cs.aperiodic and cs.period == 1

    def test_identity(self):
        assert not chain_structure(np.eye(2)).irreducible

    def test_three_cycle_with_chord(self):
        # cycles of length 3 and 2 -> gcd 1
        p = [[0, 1, 0], [0.5, 0, 0.5], [1, 0, 0]]
        assert chain_structure(p).period == 1
        assert chain_structure([[0, 1, 0], [0, 0, 1], [1, 0, 0]]).period == 3

    def test_period_matches_power_oracle(self, rng):
        # period = gcd of return times k with (P^k)_00 > 0
        import math
        for _ in range(30):
            n = rng.integers(2, 6)
            p = random_stochastic(rng, (n, n))
            p[rng.random((n, n)) < 0.6] = 0
            p[np.arange(n), (np.arange(n) + 1) % n] += 0.2  # keep a Hamiltonian cycle
            p /= p.sum(1, keepdims=True)
            cs = chain_structure(p)
            assert cs.irreducible
            q, g = np.eye(n), 0
            for k in range(1, 3 * n * n):
                q = q @ (p > 0)
                if q[0, 0] > 0:
                    g = math.gcd(g, k)
            assert cs.period == g

    def test_stationary_cases(self):
        with pytest.raises(Reducible):
            stationary_distribution(np.eye(2))
        np.testing.assert_allclose(stationary_distribution([[0, 1], [1, 0]]), [0.5, 0.5], atol=1e-14)
        np.testing.assert_allclose(stationary_distribution([[0.9, 0.1], [0.2, 0.8]]), [2 / 3, 1 / 3], atol=1e-14)

    def test_stationary_residual(self, rng):
        for _ in range(20):
            p = random_stochastic(rng, (8, 8), sparsity=0.6)
            w = stationary_distribution(p)
            assert np.all(w > 0) and abs(w.sum() - 1) < 1e-14
            assert np.max(np.abs(w @ p - w)) <= 1e-10


class TestInduce:
    def test_two_state(self, uniform_pair):
        np.testing.assert_allclose(uniform_pair.j_pi, [5.5, 4.5], atol=1e-12)
        np.testing.assert_allclose(uniform_pair.omega, [0.5, 0.5], atol=1e-14)

    def test_zero_reward(self, rng):
        mdp = Mdp.from_arrays(random_stochastic(rng, (4, 2, 4)), np.zeros((4, 2)), 0.9)
        ind = induce_policy(mdp, Policy(np.full((4, 2), 0.5)))
        assert np.all(ind.j_pi == 0)

    def test_reducible_has_no_omega(self):
        assert policy_induced_from(np.eye(2), [1, 0], 0.9).omega is None

    def test_mixing_formula(self, rng):
        mdp = random_mdp(rng, 3, 2, 0.9)
        pi = np.array([[0.3, 0.7], [1, 0], [0.5, 0.5]])
        ind = induce_policy(mdp, Policy(pi))
        for i in range(3):
            np.testing.assert_allclose(ind.p_pi[i], pi[i, 0] * mdp.p[i, 0] + pi[i, 1] * mdp.p[i, 1])

    def test_bellman_residual_many(self, rng):
        for _ in range(100):
            n, l = rng.integers(1, 11), rng.integers(1, 5)
            mdp = random_mdp(rng, n, l, rng.uniform(0.05, 0.99))
            pi = random_stochastic(rng, (n, l))
            ind = induce_policy(mdp, Policy(pi))
            resid = ind.j_pi - ind.r_pi - mdp.gamma * ind.p_pi @ ind.j_pi
            assert np.max(np.abs(resid)) <= 1e-9
            assert np.allclose(ind.p_pi.sum(1), 1, atol=1e-12)


class TestOptimal:
    def test_zero_reward(self, rng):
        mdp = Mdp.from_arrays(random_stochastic(rng, (3, 2, 3)), np.zeros((3, 2)), 0.9)
        j, _ = optimal_value(mdp)
        assert np.all(j == 0)

    def test_one_state(self):
        mdp = Mdp.from_arrays([[[1.0], [1.0]]], [[1.0, 2.0]], 0.5)
        j, pol = optimal_value(mdp)
        assert j[0] == pytest.approx(4.0)
        np.testing.assert_array_equal(pol.pi, [[0, 1]])

    def test_two_by_two_enumeration(self):
        mdp = random_mdp(np.random.default_rng(7), 2, 2, 0.9)
        j, _ = optimal_value(mdp)
        np.testing.assert_allclose(j, enumerate_optimal_value(mdp), atol=1e-12)

    def test_fixed_point(self, rng):
        mdp = random_mdp(rng, 6, 3, 0.95)
        j, _ = optimal_value(mdp)
        tj, _ = bellman_optimality(mdp, j)
        assert np.max(np.abs(tj - j)) <= 1e-9

    def test_dominates_every_policy(self, rng):
        for _ in range(40):
            n, l = rng.integers(1, 5), rng.integers(1, 4)
            mdp = random_mdp(rng, n, l, rng.uniform(0.1, 0.99))
            j, _ = optimal_value(mdp)
            np.testing.assert_allclose(j, enumerate_optimal_value(mdp), atol=1e-9)

    def test_tie_break(self):
        p = np.array([[[0.5, 0.5], [0.5, 0.5]], [[1, 0], [1, 0]]])
        mdp = Mdp.from_arrays(p, np.zeros((2, 2)), 0.9)
        _, sel = bellman_optimality(mdp, [1.0, 2.0])
        np.testing.assert_array_equal(sel, [0, 0])

    def test_single_action_reduces(self, rng):
        mdp = random_mdp(rng, 4, 1, 0.9)
        j = rng.normal(size=4)
        tj, _ = bellman_optimality(mdp, j)
        np.testing.assert_allclose(tj, mdp.r[:, 0] + 0.9 * mdp.p[:, 0] @ j)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.99))
def test_bellman_monotone_and_contractive(seed, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3, gamma)
    j1 = rng.normal(size=5) * 10
    j2 = j1 + np.abs(rng.normal(size=5))
    t1, _ = bellman_optimality(mdp, j1)
    t2, _ = bellman_optimality(mdp, j2)
    assert np.all(t1 <= t2 + 1e-12)
    j3 = rng.normal(size=5) * 10
    t3, _ = bellman_optimality(mdp, j3)
    assert np.max(np.abs(t1 - t3)) <= gamma * np.max(np.abs(j1 - j3)) * (1 + 1e-12) + 1e-12
