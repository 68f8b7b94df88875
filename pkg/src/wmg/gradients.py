"""Analytic derivative calculus for weighted Markovian graphs.

Partial derivatives of the occupancy distribution, the passage-moment
matrices, and the scalar summaries are available with respect to single mean
weights and, as directional derivatives along row-sum-preserving feasible
directions, with respect to the transition matrix.  A central finite
difference harness verifies every formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainAnalysis, analyze_chain, stationary_of
from .graph import WeightedMarkovGraph
from .kemeny import quadratic_form
from .passage import (
    _bcast_diag,
    deviation_form,
    mean_passage_lengths,
    passage_variance,
    step_weight_of,
    weighted_mean_passage,
    weighted_second_moment,
)

def _occupancy_of(analysis, graph):
    """Occupancy distribution from the graph's current weights."""
    pi = analysis.stationary
    ubar = step_weight_of(graph)
    return pi * ubar / float(pi @ ubar)

FD_STEP = 1e-6

WEIGHT_QUANTITIES = (
    "weighted_stationary",
    "means",
    "second_moments",
    "variances",
    "kemeny",
    "kemeny_weighted",
    "kemeny_var",
    "kemeny_var_weighted",
)
TRANSITION_QUANTITIES = ("stationary", "fundamental", "means_wrt_transitions")


@dataclass(frozen=True)
class GradientReport:
    """One verified derivative: analytic value, finite difference, residual."""

    quantity: str
    wrt: str
    analytic: np.ndarray | float
    fd: np.ndarray | float
    rel_err: float
    step: float


def _require_edge(graph: WeightedMarkovGraph, l: int, k: int) -> None:
    if graph.P[l, k] <= 0.0:
        raise ValueError(f"({l},{k}) is not an edge of the graph")


def _off_diag(A: np.ndarray) -> np.ndarray:
    return A - np.diag(np.diag(A))


# ---------------------------------------------------------------------------
# derivatives with respect to a single mean weight

def d_weighted_stationary_d_weight(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                                   l: int, k: int) -> np.ndarray:
    """Derivative of the occupancy distribution in the mean weight (l, k).

    Quotient rule on stationary(i) * step_weight(i) / weight_rate; the
    components sum to zero.
    """
    _require_edge(graph, l, k)
    pi = analysis.stationary
    ubar = step_weight_of(graph)
    y = float(pi @ ubar)
    nvec = pi * ubar
    direction = -nvec.copy()
    direction[l] += y
    return pi[l] * graph.P[l, k] / y**2 * direction


def d_mean_passage_d_weight(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                            l: int, k: int) -> np.ndarray:
    """Derivative of the mean passage matrix in the mean weight (l, k).

    Depends on the weights only through the routing chain: the result is
    identical for any weight matrix on the same support.
    """
    _require_edge(graph, l, k)
    zl = analysis.fundamental[:, l]
    lengths = mean_passage_lengths(analysis)
    return graph.P[l, k] * (zl[:, None] - zl[None, :] + analysis.stationary[l] * lengths)


def second_moment_chain_factor(graph: WeightedMarkovGraph, l: int, k: int) -> float:
    """d(second moment of the edge weight)/d(mean weight) on edge (l, k).

    2 W(l,k) for deterministic weights; 2 W(l,k) (1 + cv^2) when the weight
    follows a fixed-cv distribution (the second moment then tracks the mean
    as W^2 (1 + cv^2)).
    """
    _require_edge(graph, l, k)
    tag = graph.tags[graph.edge_index()[(l, k)]]
    return 2.0 * graph.W[l, k] * tag.second_moment_factor


def d_second_moment_d_weight(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                             means: np.ndarray, l: int, k: int,
                             d_means: np.ndarray | None = None,
                             chain_factor: float | None = None) -> np.ndarray:
    """Derivative of the second-moment passage matrix in the mean weight (l, k).

    ``chain_factor`` defaults to the edge's tag-driven value from
    :func:`second_moment_chain_factor`; pass an explicit value to model a
    different mean/second-moment coupling.
    """
    _require_edge(graph, l, k)
    if d_means is None:
        d_means = d_mean_passage_d_weight(analysis, graph, l, k)
    if chain_factor is None:
        chain_factor = second_moment_chain_factor(graph, l, k)
    pi = analysis.stationary
    Z = analysis.fundamental
    P, W = graph.P, graph.W
    plk = P[l, k]
    zl = Z[:, l]
    off_means = _off_diag(means)
    off_d_means = _off_diag(d_means)
    PW = P * W

    s = plk * chain_factor
    t1 = s * (zl[:, None] - zl[None, :])

    A = np.outer(zl, off_means[k, :])
    t2 = 2.0 * plk * (A - _bcast_diag(A))

    B = Z @ (PW @ off_d_means)
    t3 = 2.0 * (B - _bcast_diag(B))

    row = (pi @ PW) @ off_d_means
    d_diag = (pi[l] * s + 2.0 * pi[l] * plk * off_means[k, :] + 2.0 * row) / pi
    t4 = deviation_form(analysis) * d_diag[None, :]
    return t1 + t2 + t3 + t4


def d_variance_d_weight(means: np.ndarray, d_means: np.ndarray,
                        d_second: np.ndarray) -> np.ndarray:
    """Derivative of the variance matrix from its two ingredients."""
    return d_second - 2.0 * means * d_means


def kemeny_weight_gradient(analysis: ChainAnalysis, graph: WeightedMarkovGraph) -> np.ndarray:
    """Full gradient matrix of the stationary-weighted first-order constant.

    Entry (l, k) is trace(fundamental) * stationary(l) * P(l, k); zero off
    the edge support and independent of the weights.
    """
    tr = float(np.trace(analysis.fundamental))
    return tr * analysis.stationary[:, None] * graph.P


def d_kemeny_weighted_d_weight(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                               means: np.ndarray, l: int, k: int,
                               d_means: np.ndarray | None = None) -> float:
    """Derivative of the occupancy-weighted first-order constant in W(l, k).

    Product rule over the occupancy-shift terms plus the passage-matrix term;
    unlike the stationary-weighted constant this retains full weight
    dependence.
    """
    if d_means is None:
        d_means = d_mean_passage_d_weight(analysis, graph, l, k)
    pi_w = _occupancy_of(analysis, graph)
    d_pi_w = d_weighted_stationary_d_weight(analysis, graph, l, k)
    return float(d_pi_w @ means @ pi_w + pi_w @ means @ d_pi_w
                 + pi_w @ d_means @ pi_w)


def d_kemeny_var_d_weight(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                          means: np.ndarray, variances: np.ndarray,
                          l: int, k: int, weighted: bool = False) -> float:
    """Assembled derivative of a second-order constant in the mean weight (l, k).

    ``weighted=False`` differentiates the stationary-weighted form (the
    stationary distribution does not depend on the weights); ``weighted=True``
    adds the occupancy-shift terms.
    """
    d_means = d_mean_passage_d_weight(analysis, graph, l, k)
    d_second = d_second_moment_d_weight(analysis, graph, means, l, k, d_means=d_means)
    d_var = d_variance_d_weight(means, d_means, d_second)
    if not weighted:
        pi = analysis.stationary
        return float(pi @ d_var @ pi)
    pi_w = _occupancy_of(analysis, graph)
    d_pi_w = d_weighted_stationary_d_weight(analysis, graph, l, k)
    return float(d_pi_w @ variances @ pi_w + pi_w @ variances @ d_pi_w
                 + pi_w @ d_var @ pi_w)


def variance_scalar_weight_gradient(graph: WeightedMarkovGraph,
                                    analysis: ChainAnalysis | None = None,
                                    weighted: bool = False) -> np.ndarray:
    """Gradient matrix of a second-order constant over every edge weight."""
    if analysis is None:
        analysis = analyze_chain(graph)
    means = weighted_mean_passage(analysis, graph)
    second = weighted_second_moment(analysis, graph, means)
    variances = passage_variance(means, second)
    grad = np.zeros_like(graph.W)
    for (l, k) in graph.edges:
        grad[l, k] = d_kemeny_var_d_weight(analysis, graph, means, variances,
                                           l, k, weighted=weighted)
    return grad


# ---------------------------------------------------------------------------
# directional derivatives with respect to the transition matrix

def check_feasible_direction(graph: WeightedMarkovGraph, dP: np.ndarray,
                             tol: float = 1e-12) -> None:
    """A feasible routing perturbation has zero row sums and lives on the edges."""
    if np.abs(dP.sum(axis=1)).max() > tol:
        raise ValueError("transition direction must have zero row sums")
    if np.abs(np.where(graph.P > 0, 0.0, dP)).max() > tol:
        raise ValueError("transition direction must vanish off the edge support")


def d_stationary_d_transitions(analysis: ChainAnalysis, dP: np.ndarray) -> np.ndarray:
    """Directional derivative of the stationary distribution along dP."""
    return analysis.stationary @ dP @ analysis.fundamental


def d_fundamental_d_transitions(analysis: ChainAnalysis, dP: np.ndarray,
                                d_pi: np.ndarray | None = None) -> np.ndarray:
    """Directional derivative of the fundamental matrix along dP."""
    if d_pi is None:
        d_pi = d_stationary_d_transitions(analysis, dP)
    Z = analysis.fundamental
    ones = np.ones(analysis.n)
    return Z @ (dP - np.outer(ones, d_pi)) @ Z


def d_mean_passage_d_transitions(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                                 dP: np.ndarray) -> np.ndarray:
    """Directional derivative of the mean passage matrix along dP.

    Full product rule through the stationary distribution, the fundamental
    matrix, the one-step weight vector, and the diagonal normalization.
    """
    check_feasible_direction(graph, dP)
    pi = analysis.stationary
    Z = analysis.fundamental
    W = graph.W
    n = analysis.n
    eye = np.eye(n)
    ubar = analysis.step_weight
    c = analysis.weight_rate

    d_pi = d_stationary_d_transitions(analysis, dP)
    dZ = d_fundamental_d_transitions(analysis, dP, d_pi)
    d_ubar = (dP * W).sum(axis=1)
    d_c = float(d_pi @ ubar + pi @ d_ubar)

    G = np.outer(Z @ ubar, pi)
    dG = dZ @ np.outer(ubar, pi) + Z @ (np.outer(d_ubar, pi) + np.outer(ubar, d_pi))

    dev = eye - Z + _bcast_diag(Z)
    F = G - _bcast_diag(G) + c * dev
    dF = (dG - _bcast_diag(dG)
          + d_c * dev
          + c * (-dZ + _bcast_diag(dZ)))

    return dF / pi[None, :] - F * (d_pi / pi**2)[None, :]


# ---------------------------------------------------------------------------
# finite-difference verification

def _relative_error(analytic, fd) -> float:
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    denom = 1.0 + float(np.max(np.abs(fd))) if fd.size else 1.0
    return float(np.max(np.abs(analytic - fd))) / denom


def _weight_quantity(graph: WeightedMarkovGraph, quantity: str):
    analysis = analyze_chain(graph)
    if quantity == "weighted_stationary":
        return analysis.weighted_stationary
    means = weighted_mean_passage(analysis, graph)
    if quantity == "means":
        return means
    if quantity == "kemeny":
        return quadratic_form(analysis.stationary, means)
    if quantity == "kemeny_weighted":
        return quadratic_form(analysis.weighted_stationary, means)
    second = weighted_second_moment(analysis, graph, means)
    if quantity == "second_moments":
        return second
    variances = passage_variance(means, second)
    if quantity == "variances":
        return variances
    if quantity == "kemeny_var":
        return quadratic_form(analysis.stationary, variances)
    if quantity == "kemeny_var_weighted":
        return quadratic_form(analysis.weighted_stationary, variances)
    raise ValueError(f"unknown weight quantity {quantity!r}")


def _weight_analytic(graph: WeightedMarkovGraph, quantity: str, l: int, k: int):
    analysis = analyze_chain(graph)
    if quantity == "weighted_stationary":
        return d_weighted_stationary_d_weight(analysis, graph, l, k)
    if quantity == "means":
        return d_mean_passage_d_weight(analysis, graph, l, k)
    if quantity == "kemeny":
        return float(kemeny_weight_gradient(analysis, graph)[l, k])
    means = weighted_mean_passage(analysis, graph)
    if quantity == "kemeny_weighted":
        return d_kemeny_weighted_d_weight(analysis, graph, means, l, k)
    if quantity == "second_moments":
        return d_second_moment_d_weight(analysis, graph, means, l, k)
    if quantity in ("variances", "kemeny_var", "kemeny_var_weighted"):
        d_means = d_mean_passage_d_weight(analysis, graph, l, k)
        d_second = d_second_moment_d_weight(analysis, graph, means, l, k, d_means=d_means)
        d_var = d_variance_d_weight(means, d_means, d_second)
        if quantity == "variances":
            return d_var
        second = weighted_second_moment(analysis, graph, means)
        variances = passage_variance(means, second)
        if quantity == "kemeny_var":
            pi = analysis.stationary
            return float(pi @ d_var @ pi)
        return d_kemeny_var_d_weight(analysis, graph, means, variances, l, k, weighted=True)
    raise ValueError(f"unknown weight quantity {quantity!r}")


def fd_check_weight(graph: WeightedMarkovGraph, quantity: str, l: int, k: int,
                    step: float = FD_STEP) -> GradientReport:
    """Central finite difference of a quantity in one mean weight vs analytic.

    The perturbed graphs refill the edge's second moment from its tag, so the
    differenced map matches the tag-driven chain factor of the analytic
    derivative.  The step is scaled relative to the weight magnitude.
    """
    _require_edge(graph, l, k)
    h = step * (1.0 + abs(float(graph.W[l, k])))
    analytic = _weight_analytic(graph, quantity, l, k)

    W_plus = graph.W.copy()
    W_plus[l, k] += h
    W_minus = graph.W.copy()
    W_minus[l, k] -= h
    f_plus = _weight_quantity(graph.with_weights(W_plus), quantity)
    f_minus = _weight_quantity(graph.with_weights(W_minus), quantity)
    fd = (np.asarray(f_plus) - np.asarray(f_minus)) / (2.0 * h)
    if np.isscalar(analytic) or np.asarray(analytic).ndim == 0:
        fd = float(fd)
    return GradientReport(quantity, f"W({l},{k})", analytic, fd,
                          _relative_error(analytic, fd), h)


def _transition_quantity(P: np.ndarray, graph: WeightedMarkovGraph, quantity: str):
    if quantity == "stationary":
        return stationary_of(P)
    shifted = WeightedMarkovGraph(
        n=graph.n, edges=graph.edges, P=P, W=graph.W, W2=graph.W2,
        tags=graph.tags, mu=graph.mu, destinations=graph.destinations)
    analysis = analyze_chain(shifted)
    if quantity == "fundamental":
        return analysis.fundamental
    if quantity == "means_wrt_transitions":
        return weighted_mean_passage(analysis, shifted)
    raise ValueError(f"unknown transition quantity {quantity!r}")


def fd_check_transitions(graph: WeightedMarkovGraph, quantity: str, dP: np.ndarray,
                         step: float = FD_STEP) -> GradientReport:
    """Central finite difference along a feasible routing direction vs analytic."""
    check_feasible_direction(graph, dP)
    analysis = analyze_chain(graph)
    if quantity == "stationary":
        analytic = d_stationary_d_transitions(analysis, dP)
    elif quantity == "fundamental":
        analytic = d_fundamental_d_transitions(analysis, dP)
    elif quantity == "means_wrt_transitions":
        analytic = d_mean_passage_d_transitions(analysis, graph, dP)
    else:
        raise ValueError(f"unknown transition quantity {quantity!r}")

    scale = float(np.max(np.abs(dP)))
    h = step if scale == 0 else step / scale
    # keep both perturbed matrices inside the probability box
    min_pos = float(graph.P[graph.P > 0].min())
    h = min(h, 0.25 * min_pos / max(scale, 1e-300))
    f_plus = _transition_quantity(graph.P + h * dP, graph, quantity)
    f_minus = _transition_quantity(graph.P - h * dP, graph, quantity)
    fd = (np.asarray(f_plus) - np.asarray(f_minus)) / (2.0 * h)
    return GradientReport(quantity, "dP-direction", analytic, fd,
                          _relative_error(analytic, fd), h)


def random_feasible_direction(graph: WeightedMarkovGraph, seed: int) -> np.ndarray:
    """Random zero-row-sum direction on the edge support (rows with a single
    out-edge get a zero row)."""
    rng = np.random.default_rng(seed)
    dP = np.where(graph.P > 0, rng.standard_normal(graph.P.shape), 0.0)
    support = graph.P > 0
    counts = support.sum(axis=1)
    for i in range(graph.n):
        if counts[i] < 2:
            dP[i, :] = 0.0
        else:
            dP[i, support[i]] -= dP[i, support[i]].mean()
    norm = np.max(np.abs(dP))
    return dP / norm if norm > 0 else dP


def verify_all_gradients(graph: WeightedMarkovGraph, step: float = FD_STEP,
                         direction_seed: int = 0):
    """Worst finite-difference report per quantity over every edge.

    Weight derivatives sweep all edges; transition derivatives use one random
    feasible direction.  Returns a list of GradientReport, one per quantity.
    """
    worst: list[GradientReport] = []
    for quantity in WEIGHT_QUANTITIES:
        best = None
        for (l, k) in graph.edges:
            rep = fd_check_weight(graph, quantity, l, k, step=step)
            if best is None or rep.rel_err > best.rel_err:
                best = rep
        worst.append(best)
    dP = random_feasible_direction(graph, direction_seed)
    for quantity in TRANSITION_QUANTITIES:
        worst.append(fd_check_transitions(graph, quantity, dP, step=step))
    return worst
