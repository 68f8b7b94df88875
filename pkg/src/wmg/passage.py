"""First-passage moment matrices and their independent oracles.

The closed forms express mean passage lengths, mean weighted passage times,
and their second moments through the fundamental matrix.  Three independent
routes cross-check them: a taboo-kernel linear solve, a truncated sum over
first-passage paths, and a vectorized Monte Carlo simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chain import ChainAnalysis, ReducibleChainError, analyze_chain
from .graph import WeightedMarkovGraph

# Absolute floor (relative to the squared-mean scale) below which a negative
# variance entry is treated as a defect rather than cancellation noise.
VARIANCE_CLAMP = 1e-8


@dataclass(frozen=True)
class PassageMoments:
    """First-passage statistics between every ordered node pair.

    ``lengths`` counts expected steps, ``means`` expected accumulated weight,
    ``second_moments`` its second moment, ``variances`` the difference
    ``second_moments - means**2``.  Diagonals hold return-time statistics.
    """

    lengths: np.ndarray
    means: np.ndarray
    second_moments: np.ndarray
    variances: np.ndarray


def _bcast_diag(A: np.ndarray) -> np.ndarray:
    """Matrix with entry (i, j) equal to A(j, j)."""
    return np.broadcast_to(np.diag(A), A.shape)


def deviation_form(analysis: ChainAnalysis) -> np.ndarray:
    """The factor (I - Z + 1 1^T [Z]_dg) shared by all closed forms."""
    Z = analysis.fundamental
    return np.eye(analysis.n) - Z + _bcast_diag(Z)


def mean_passage_lengths(analysis: ChainAnalysis) -> np.ndarray:
    """Expected first-passage step counts; diagonal is 1/stationary."""
    return deviation_form(analysis) / analysis.stationary[None, :]


def step_weight_of(graph: WeightedMarkovGraph):
    """One-step weight vector (row sums of P * W) for a graph's weights."""
    return (graph.P * graph.W).sum(axis=1)


def weighted_mean_passage(analysis: ChainAnalysis, graph: WeightedMarkovGraph) -> np.ndarray:
    """Expected accumulated weight of first passages (closed form).

    Linear in the mean weights for fixed routing.  The diagonal satisfies
    means(i, i) * stationary(i) = weight_rate.  Weight-dependent quantities
    are taken from ``graph`` so an analysis of the same routing matrix may be
    reused across weight changes.
    """
    pi = analysis.stationary
    Z = analysis.fundamental
    ubar = step_weight_of(graph)
    rate = float(pi @ ubar)
    zu = Z @ ubar
    # Z (P*W) projector reduces to the outer product of Z @ step_weight with pi
    G = np.outer(zu, pi)
    M = G - _bcast_diag(G) + rate * (np.eye(analysis.n) - Z + _bcast_diag(Z))
    return M / pi[None, :]


def weighted_second_moment(analysis: ChainAnalysis, graph: WeightedMarkovGraph,
                           means: np.ndarray) -> np.ndarray:
    """Second moments of the accumulated first-passage weight (closed form).

    Requires the second-moment matrix of the edge weights and independent
    redraws of stochastic weights on every traversal.
    """
    pi = analysis.stationary
    Z = analysis.fundamental
    PW = graph.P * graph.W
    u2 = (graph.P * graph.W2).sum(axis=1)

    zu2 = Z @ u2
    t1 = zu2[:, None] - zu2[None, :]

    off_means = means - np.diag(np.diag(means))
    B = Z @ (PW @ off_means)
    t2 = 2.0 * (B - _bcast_diag(B))

    s2 = float(pi @ u2)
    row = (pi @ PW) @ off_means
    diag_second = (s2 + 2.0 * row) / pi

    t4 = deviation_form(analysis) * diag_second[None, :]
    return t1 + t2 + t4


def passage_variance(means: np.ndarray, second_moments: np.ndarray) -> np.ndarray:
    """Variance matrix: second moments minus squared means.

    Small negative entries produced by cancellation are clamped to zero; the
    clamp threshold scales with the squared-mean magnitude so that large-scale
    chains are not rejected for pure roundoff.  Entries below the threshold
    raise ArithmeticError.
    """
    sq = means * means
    v = second_moments - sq
    floor = -VARIANCE_CLAMP * max(1.0, float(np.max(np.abs(sq)))) if sq.size else -VARIANCE_CLAMP
    worst = float(v.min()) if v.size else 0.0
    if worst < floor:
        raise ArithmeticError(
            f"variance entry {worst:.6g} below the cancellation floor {floor:.6g}")
    return np.where(v < 0.0, 0.0, v)


def passage_moments(graph: WeightedMarkovGraph,
                    analysis: ChainAnalysis | None = None) -> PassageMoments:
    """All four first-passage matrices for one graph."""
    if analysis is None:
        analysis = analyze_chain(graph)
    lengths = mean_passage_lengths(analysis)
    means = weighted_mean_passage(analysis, graph)
    second = weighted_second_moment(analysis, graph, means)
    variances = passage_variance(means, second)
    return PassageMoments(lengths, means, second, variances)


# ---------------------------------------------------------------------------
# oracle 1: taboo-kernel linear solve

def taboo_passage_column(graph: WeightedMarkovGraph, j: int,
                         weighted: bool = True) -> np.ndarray:
    """Column j of the mean passage matrix via the taboo kernel.

    Zeroing column j of P gives the kernel of the walk killed on hitting j;
    the expected accumulated weight into j solves (I - kernel) x = b with b
    the expected one-step weight (or the all-ones vector for step counts).
    The solution's j-th entry is the mean return quantity.
    """
    P = graph.P
    n = graph.n
    kernel = P.copy()
    kernel[:, j] = 0.0
    b = (P * graph.W).sum(axis=1) if weighted else np.ones(n)
    try:
        return scipy.linalg.solve(np.eye(n) - kernel, b)
    except scipy.linalg.LinAlgError as exc:
        raise ReducibleChainError(
            f"taboo system for node {j} is singular; chain not irreducible") from exc


# ---------------------------------------------------------------------------
# oracle 2: truncated sum over first-passage paths

def series_passage_column(graph: WeightedMarkovGraph, j: int, tol: float = 1e-12,
                          max_len: int | None = None):
    """Column j of the passage means and second moments by path summation.

    Accumulates the contribution of every first-passage path into j, grouped
    by path length, until the unabsorbed probability mass falls below ``tol``.
    The length cap defaults to the smallest L with (1 - p_min)^L < 1e-10
    (p_min the smallest positive transition probability), extended as needed
    until the measured residual mass converges.

    Returns
    -------
    (means, second_moments, residual) : two length-n vectors and the
        remaining unabsorbed probability mass at truncation.
    """
    P, W, W2 = graph.P, graph.W, graph.W2
    n = graph.n
    Q = P.copy()
    Q[:, j] = 0.0
    QW = Q * W
    QW2 = Q * W2
    pcol = P[:, j]
    pw_col = pcol * W[:, j]
    pw2_col = pcol * W2[:, j]

    if max_len is None:
        p_min = float(P[P > 0].min())
        base = max(1, math.ceil(math.log(1e-10) / math.log1p(-min(p_min, 1 - 1e-12))))
        max_len = max(10 * base, 1000)

    prob = np.eye(n)          # (start, current) mass of j-avoiding prefixes
    wsum = np.zeros((n, n))   # accumulated weight mass of those prefixes
    ssum = np.zeros((n, n))   # accumulated squared-weight mass
    means = np.zeros(n)
    second = np.zeros(n)
    residual = 1.0
    for _ in range(max_len):
        means += wsum @ pcol + prob @ pw_col
        second += ssum @ pcol + 2.0 * (wsum @ pw_col) + prob @ pw2_col
        ssum = ssum @ Q + 2.0 * (wsum @ QW) + prob @ QW2
        wsum = wsum @ Q + prob @ QW
        prob = prob @ Q
        residual = float(prob.sum(axis=1).max())
        if residual < tol:
            break
    return means, second, residual


# ---------------------------------------------------------------------------
# oracle 3: Monte Carlo simulation

@dataclass(frozen=True)
class MonteCarloResult:
    """Sample statistics of simulated first-passage weights."""

    mean: float
    variance: float
    se_mean: float
    se_variance: float
    episodes: int


def _lognormal_params(W: np.ndarray, cv: np.ndarray):
    sig2 = np.log1p(cv**2)
    with np.errstate(divide="ignore"):
        mu = np.where(W > 0, np.log(np.where(W > 0, W, 1.0)) - sig2 / 2.0, 0.0)
    return mu, np.sqrt(sig2)


def _gamma_params(W: np.ndarray, cv: np.ndarray):
    cv2 = np.where(cv > 0, cv**2, 1.0)
    shape = 1.0 / cv2
    scale = W * cv2
    return shape, scale


def monte_carlo_passage(graph: WeightedMarkovGraph, i: int, j: int, episodes: int,
                        seed: int, step_cap: int = 10**9) -> MonteCarloResult:
    """Simulate first passages from i to j and return sample statistics.

    Episodes run vectorized; stochastic edge weights are redrawn on every
    traversal from the distribution matched to the edge's mean and cv.
    Deterministic for a fixed seed.  Aborts with RuntimeError if the total
    simulated step count exceeds ``step_cap``.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    P, W = graph.P, graph.W
    n = graph.n
    cum = np.cumsum(P, axis=1)
    codes = graph.kind_codes()
    cv = graph.cv_matrix()
    any_ln = bool((codes == 1).any())
    any_gm = bool((codes == 2).any())
    if any_ln:
        mu_log, sig_log = _lognormal_params(W, cv)
    if any_gm:
        shape, scale = _gamma_params(W, cv)

    cur = np.full(episodes, i, dtype=np.int64)
    acc = np.zeros(episodes)
    out = np.empty(episodes)
    alive = np.arange(episodes)
    total_steps = 0
    while alive.size:
        rows = cur[alive]
        u = rng.random(alive.size)
        nxt = np.minimum((cum[rows] < u[:, None]).sum(axis=1), n - 1)
        w = W[rows, nxt].copy()
        k = codes[rows, nxt]
        if any_ln:
            mask = k == 1
            if mask.any():
                w[mask] = rng.lognormal(mu_log[rows[mask], nxt[mask]],
                                        sig_log[rows[mask], nxt[mask]])
        if any_gm:
            mask = k == 2
            if mask.any():
                w[mask] = rng.gamma(shape[rows[mask], nxt[mask]],
                                    scale[rows[mask], nxt[mask]])
        acc[alive] += w
        done = nxt == j
        if done.any():
            hit = alive[done]
            out[hit] = acc[hit]
        cur[alive] = nxt
        alive = alive[~done]
        total_steps += rows.size
        if total_steps > step_cap:
            raise RuntimeError(
                f"passage simulation exceeded {step_cap} steps "
                f"({alive.size} of {episodes} episodes still running)")

    mean = float(out.mean())
    if episodes < 2:
        return MonteCarloResult(mean, 0.0, 0.0, 0.0, episodes)
    variance = float(out.var(ddof=1))
    se_mean = math.sqrt(variance / episodes)
    centered = out - mean
    m2 = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    # delta-method standard error of the sample variance
    se_var = math.sqrt(max(m4 - m2**2 * (episodes - 3) / (episodes - 1), 0.0) / episodes)
    return MonteCarloResult(mean, variance, se_mean, se_var, episodes)
