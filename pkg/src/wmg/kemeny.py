"""Scalar network summaries built from the first-passage matrices.

Two first-order constants aggregate mean passage weights (one weighting node
pairs by the routing chain's stationary distribution, one by the occupancy
distribution of the weighted process), two second-order constants aggregate
the passage variances the same way, and the surprise index is their
coefficient-of-variation ratio.  The diagonal (return-time) terms are
included in all quadratic forms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import ChainAnalysis
from .graph import WeightedMarkovGraph
from .passage import PassageMoments

log = logging.getLogger(__name__)

TRACE_IDENTITY_TOL = 1e-9


@dataclass(frozen=True)
class KemenySummary:
    """Global connectivity and variability scalars of one graph.

    Attributes
    ----------
    kemeny : float
        Stationary-weighted quadratic form over the mean passage weights;
        equals trace(fundamental) * weight_rate.
    kemeny_weighted : float
        Occupancy-weighted variant of the same form.
    kemeny_var : float
        Stationary-weighted quadratic form over the passage variances.
    kemeny_var_weighted : float
        Occupancy-weighted variant.
    surprise : float
        sqrt(kemeny_var_weighted) / kemeny_weighted, clamped NaN-free.
    resistance : float
        Mean symmetrized passage length per edge (Kirchhoff-style index).
    trace_identity_residual : float
        |kemeny - trace(fundamental) * weight_rate|, recorded as an internal
        consistency check.
    """

    kemeny: float
    kemeny_weighted: float
    kemeny_var: float
    kemeny_var_weighted: float
    surprise: float
    resistance: float
    trace_identity_residual: float


def quadratic_form(weights: np.ndarray, matrix: np.ndarray) -> float:
    """sum_ij weights(i) matrix(i,j) weights(j), diagonal included."""
    return float(weights @ matrix @ weights)


def graph_resistance(lengths: np.ndarray, num_edges: int) -> float:
    """Average symmetrized mean passage length, normalized by edge count."""
    off_sum = float(lengths.sum() - np.trace(lengths))
    return off_sum / (2.0 * num_edges)


def surprise_index(kemeny_weighted: float, kemeny_var_weighted: float) -> float:
    """Coefficient-of-variation index sqrt(var) / mean; NaN-free."""
    return float(np.sqrt(max(kemeny_var_weighted, 0.0)) / kemeny_weighted)


def kemeny_constants(analysis: ChainAnalysis, moments: PassageMoments,
                     graph: WeightedMarkovGraph) -> KemenySummary:
    """All scalar summaries for one graph.

    The stationary-weighted first-order constant is cross-checked against
    trace(fundamental) * weight_rate; the residual is recorded and logged
    when it exceeds 1e-9 relative to the constant's magnitude.
    """
    pi = analysis.stationary
    pi_w = analysis.weighted_stationary
    k = quadratic_form(pi, moments.means)
    k_w = quadratic_form(pi_w, moments.means)
    v = quadratic_form(pi, moments.variances)
    v_w = quadratic_form(pi_w, moments.variances)

    k_trace = float(np.trace(analysis.fundamental)) * analysis.weight_rate
    residual = abs(k - k_trace)
    if residual > TRACE_IDENTITY_TOL * max(1.0, abs(k)):
        log.warning("first-order constant identity residual %.3g (K=%.6g)", residual, k)

    return KemenySummary(
        kemeny=k,
        kemeny_weighted=k_w,
        kemeny_var=v,
        kemeny_var_weighted=v_w,
        surprise=surprise_index(k_w, v_w),
        resistance=graph_resistance(moments.lengths, graph.num_edges),
        trace_identity_residual=residual,
    )
