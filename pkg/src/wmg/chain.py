"""Stationary analysis of the routing chain and of the weighted process.

Produces the stationary distribution of the embedded chain, the ergodic
projector, the fundamental matrix, and the long-run occupancy distribution of
the weighted process (fraction of accumulated weight spent in each state).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .graph import WeightedMarkovGraph, strongly_connected_count

log = logging.getLogger(__name__)

COND_WARN = 1e12


class ReducibleChainError(ValueError):
    """The transition matrix is not irreducible."""


class SingularFundamentalError(ArithmeticError):
    """(I - P + projector) could not be inverted; carries the condition estimate."""

    def __init__(self, message: str, cond: float):
        super().__init__(message)
        self.cond = cond


@dataclass(frozen=True)
class ChainAnalysis:
    """Stationary quantities of a weighted Markovian graph.

    Attributes
    ----------
    stationary : ndarray, shape (n,)
        Stationary distribution of the routing chain.
    projector : ndarray, shape (n, n)
        Ergodic projector; every row equals ``stationary``.
    fundamental : ndarray, shape (n, n)
        Inverse of (I - P + projector).
    step_weight : ndarray, shape (n,)
        Expected weight of one step out of each state: row sums of P * W.
    weight_rate : float
        Long-run average weight accumulated per step
        (stationary . step_weight).
    weighted_stationary : ndarray, shape (n,)
        Long-run fraction of accumulated weight spent in each state:
        stationary(i) * step_weight(i) / weight_rate.
    cond : float
        Condition number estimate of (I - P + projector).
    """

    stationary: np.ndarray
    projector: np.ndarray
    fundamental: np.ndarray
    step_weight: np.ndarray
    weight_rate: float
    weighted_stationary: np.ndarray
    cond: float

    @property
    def n(self) -> int:
        return self.stationary.shape[0]


def _unreachable_pair(P: np.ndarray):
    """Find (i, j) with j unreachable from i in the support digraph."""
    n = P.shape[0]
    for start in range(n):
        seen = np.zeros(n, dtype=bool)
        stack = [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            for v in np.nonzero(P[u] > 0)[0]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        if not seen.all():
            j = int(np.nonzero(~seen)[0][0])
            return start, j
    return None


def stationary_of(P: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible row-stochastic matrix.

    Solves the linear system (P^T - I) pi = 0 with a normalization row
    replacing the last equation, followed by one step of iterative
    refinement.  A direct solve is used deliberately: it is deterministic
    and also covers periodic chains where power iteration diverges.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(P))]
    if strongly_connected_count(n, edges) != 1:
        pair = _unreachable_pair(P)
        raise ReducibleChainError(
            f"transition matrix is reducible: node {pair[1]} unreachable from node {pair[0]}")

    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    lu = scipy.linalg.lu_factor(A)
    pi = scipy.linalg.lu_solve(lu, b)
    # one refinement pass keeps the residual near machine precision
    pi += scipy.linalg.lu_solve(lu, b - A @ pi)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def analyze_chain(graph: WeightedMarkovGraph) -> ChainAnalysis:
    """Compute all stationary quantities for one graph.

    Raises SingularFundamentalError when (I - P + projector) cannot be
    factorized; logs a warning when its condition estimate exceeds 1e12.
    """
    P, W = graph.P, graph.W
    n = graph.n
    pi = stationary_of(P)
    projector = np.tile(pi, (n, 1))
    A = np.eye(n) - P + projector
    cond = float(np.linalg.cond(A))
    try:
        fundamental = scipy.linalg.inv(A)
    except scipy.linalg.LinAlgError as exc:
        raise SingularFundamentalError(
            f"(I - P + projector) is singular (cond estimate {cond:.3g})", cond) from exc
    if not np.isfinite(fundamental).all():
        raise SingularFundamentalError(
            f"(I - P + projector) inversion overflowed (cond estimate {cond:.3g})", cond)
    if cond > COND_WARN:
        log.warning("fundamental matrix badly conditioned: cond=%.3g", cond)

    step_weight = (P * W).sum(axis=1)
    weight_rate = float(pi @ step_weight)
    weighted_stationary = pi * step_weight / weight_rate

    return ChainAnalysis(
        stationary=pi,
        projector=projector,
        fundamental=fundamental,
        step_weight=step_weight,
        weight_rate=weight_rate,
        weighted_stationary=weighted_stationary,
        cond=cond,
    )
