import numpy as np
import pytest

from wmg import ReducibleChainError, analyze_chain, make_graph, stationary_of
from wmg.graph import uniform_mixing_matrix

from conftest import cycle_graph, random_graph, two_state_graph


def test_stationary_two_state():
    pi = stationary_of(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(pi, [0.5, 0.5], atol=1e-14)


def test_stationary_three_cycle():
    P = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    assert np.allclose(stationary_of(P), [1 / 3] * 3, atol=1e-14)


def test_stationary_hand_solved():
    # balance pi_0 * 0.5 = pi_1 * 0.25 gives pi = (1/3, 2/3)
    P = np.array([[0.5, 0.5], [0.25, 0.75]])
    pi = stationary_of(P)
    assert np.allclose(pi, [1 / 3, 2 / 3], atol=1e-14)
    assert np.max(np.abs(pi @ P - pi)) <= 1e-12


def test_reducible_names_pair():
    P = np.array([[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises(ReducibleChainError, match="unreachable"):
        stationary_of(P)


def test_two_state_analysis(two_state):
    a = analyze_chain(two_state)
    assert np.allclose(a.stationary, [0.5, 0.5], atol=1e-14)
    assert np.allclose(a.fundamental, [[0.75, 0.25], [0.25, 0.75]], atol=1e-12)
    assert np.trace(a.fundamental) == pytest.approx(1.5, abs=1e-12)
    assert np.allclose(a.step_weight, [2.0, 3.0])
    assert a.weight_rate == pytest.approx(2.5, abs=1e-14)
    assert np.allclose(a.weighted_stationary, [0.4, 0.6], atol=1e-14)


def test_uniform_mixing_analysis():
    P = uniform_mixing_matrix(5)
    g = make_graph(P, np.where(P > 0, 1.0, 0.0))
    a = analyze_chain(g)
    assert np.allclose(a.stationary, np.full(5, 0.2), atol=1e-13)
    assert np.allclose(a.fundamental @ np.ones(5), np.ones(5), atol=1e-12)
    assert np.allclose(a.stationary @ a.fundamental, a.stationary, atol=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_fundamental_identities_random(seed):
    n = 3 + seed % 8
    g = random_graph(n, seed)
    a = analyze_chain(g)
    P, Z, Pi = g.P, a.fundamental, a.projector
    assert np.max(np.abs(a.stationary @ P - a.stationary)) <= 1e-12
    assert np.max(np.abs((np.eye(n) - P) @ Z - (np.eye(n) - Pi))) <= 1e-9
    assert np.max(np.abs(Z @ np.ones(n) - np.ones(n))) <= 1e-9
    assert np.max(np.abs(a.stationary @ Z - a.stationary)) <= 1e-9
    assert np.all(a.stationary > 0)
    assert np.abs(a.weighted_stationary.sum() - 1.0) <= 1e-12


def test_occupancy_reduces_to_stationary_for_constant_weights():
    g = random_graph(6, seed=3)
    W = np.where(g.P > 0, 1.7, 0.0)
    a = analyze_chain(g.with_weights(W))
    assert np.allclose(a.weighted_stationary, a.stationary, atol=1e-12)


def test_occupancy_hits_arbitrary_target():
    # choosing per-row weights proportional to target/stationary reproduces
    # any positive occupancy distribution
    g = random_graph(5, seed=11)
    a0 = analyze_chain(g)
    rng = np.random.default_rng(0)
    target = rng.random(5) + 0.2
    target /= target.sum()
    rows = target / a0.stationary
    W = np.where(g.P > 0, rows[:, None], 0.0)
    a = analyze_chain(g.with_weights(W))
    assert np.allclose(a.weighted_stationary, target, atol=1e-12)


def test_periodic_chain_supported(three_cycle):
    # period-3 chain: the direct solves do not require aperiodicity
    a = analyze_chain(three_cycle)
    assert np.allclose(a.stationary, [1 / 3] * 3, atol=1e-14)
    assert np.isfinite(a.cond)
