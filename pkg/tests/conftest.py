import numpy as np
import pytest

from multitask_diffusion.costs import QuadraticCost
from multitask_diffusion.graph import build_network, network_from_adjacency

ACCEPTANCE_RESULTS: dict = {}


def random_connected_adjacency(n, rng, p=0.5, low=0.2, high=2.0):
    """Random weighted graph made connected by a random spanning path."""
    A = np.zeros((n, n))
    perm = rng.permutation(n)
    for a, b in zip(perm[:-1], perm[1:]):
        A[a, b] = A[b, a] = rng.uniform(low, high)
    for i in range(n):
        for j in range(i + 1, n):
            if A[i, j] == 0 and rng.random() < p:
                A[i, j] = A[j, i] = rng.uniform(low, high)
    return A


def random_network(n, rng, **kw):
    return network_from_adjacency(random_connected_adjacency(n, rng, **kw))


def random_spd(m, rng, lo=1.0, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return Q @ np.diag(rng.uniform(lo, hi, m)) @ Q.T


def random_quadratic_costs(n, m, rng, lo=1.0, hi=3.0, beta_sq=0.0, sigma_sq=0.0, scale=1.0):
    return [
        QuadraticCost(random_spd(m, rng, lo, hi), scale * rng.standard_normal(m), beta_sq, sigma_sq)
        for _ in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def p2():
    return build_network(2, [(0, 1, 1.0)])


@pytest.fixture
def k3():
    return build_network(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


@pytest.fixture
def two_agent_costs():
    """Scalar agents, H = 1, minimizers +1 and -1."""
    return [QuadraticCost([[1.0]], [1.0]), QuadraticCost([[1.0]], [-1.0])]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {line}")
