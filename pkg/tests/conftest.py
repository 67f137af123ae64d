import numpy as np
import pytest

from vbcert.mdp import Mdp, policy_induced_from


def random_stochastic(rng, shape, sparsity=0.0):
    """Row-stochastic array.

    With sparsity > 0 some entries are zeroed; the diagonal and the cycle
    i -> i+1 are kept so every slice stays irreducible and aperiodic.
    """
    p = rng.random(shape)
    if sparsity:
        mask = rng.random(shape) < sparsity
        p[mask] = 0.0
        n = shape[-1]
        idx, nxt = np.arange(n), (np.arange(n) + 1) % n
        if p.ndim == 2:
            p[idx, idx] += 0.1
            p[idx, nxt] += 0.1
        else:
            p[idx, :, idx] += 0.1
            p[idx, :, nxt] += 0.1
    return p / p.sum(axis=-1, keepdims=True)


def random_mdp(rng, n, l, gamma, sparsity=0.0):
    return Mdp.from_arrays(random_stochastic(rng, (n, l, n), sparsity), rng.random((n, l)), gamma)


def random_chain(rng, n, gamma, sparsity=0.0):
    return policy_induced_from(random_stochastic(rng, (n, n), sparsity), rng.random(n), gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def uniform_pair():
    """P = [[.5,.5],[.5,.5]], R = (1,0), gamma = 0.9."""
    return policy_induced_from([[0.5, 0.5], [0.5, 0.5]], [1.0, 0.0], 0.9)


ACCEPTANCE_LINES = []


def verdict(number, ok, detail):
    """Record and print one acceptance line; the test still asserts ``ok`` itself."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
