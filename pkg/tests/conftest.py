import numpy as np
import pytest

from wmg import make_graph


def two_state_graph():
    """Alternating two-node chain with asymmetric deterministic weights."""
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    W = np.array([[0.0, 2.0], [3.0, 0.0]])
    return make_graph(P, W)


def cycle_graph(n, weight=1.0):
    """Deterministic directed cycle 0 -> 1 -> ... -> n-1 -> 0."""
    P = np.zeros((n, n))
    W = np.zeros((n, n))
    for i in range(n):
        P[i, (i + 1) % n] = 1.0
        W[i, (i + 1) % n] = weight
    return make_graph(P, W)


def random_graph(n, seed, cv_mix=False, extra_density=0.5, weight_range=(0.5, 3.0)):
    """Random strongly connected graph: a permutation cycle plus random edges.

    With ``cv_mix`` about half the edges get a stochastic weight tag with a
    cv in [0.3, 1.0], split between the lognormal and gamma families.
    """
    rng = np.random.default_rng(seed)
    P = np.zeros((n, n))
    perm = rng.permutation(n)
    for a, b in zip(perm, np.roll(perm, -1)):
        P[a, b] = 1.0
    extra = rng.random((n, n)) < extra_density
    P = np.where(extra | (P > 0), rng.random((n, n)) + 0.05, 0.0)
    np.fill_diagonal(P, 0.0)
    for a, b in zip(perm, np.roll(perm, -1)):
        if P[a, b] == 0:
            P[a, b] = 0.5
    P /= P.sum(axis=1, keepdims=True)
    W = np.where(P > 0, rng.uniform(*weight_range, (n, n)), 0.0)
    if cv_mix:
        cv = np.where((P > 0) & (rng.random((n, n)) < 0.5),
                      rng.uniform(0.3, 1.0, (n, n)), 0.0)
        dist = np.where(rng.random((n, n)) < 0.5, "lognormal", "gamma")
        return make_graph(P, W, cv=cv, dist=dist)
    return make_graph(P, W)


@pytest.fixture
def two_state():
    return two_state_graph()


@pytest.fixture
def three_cycle():
    return cycle_graph(3)
