"""Cascading edge-failure studies on geometric road networks.

Instances are geometric random graphs with degree-normalized routing and
uniform travel times.  A cascade removes random edges (never disconnecting
the network), reroutes flow under one of three regulatory policies, and then
re-optimizes the surviving travel times through the minimal-intervention
solver against the original network's connectivity and variance budgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import ReducibleChainError, analyze_chain, stationary_of
from .graph import WeightedMarkovGraph, make_graph, strongly_connected_count
from .kemeny import quadratic_form
from .optimizer import (
    FEASIBLE,
    INFEASIBLE,
    OptimizerConfig,
    build_feasible_set,
    hybrid_target,
    minimal_intervention,
    project_to_feasible,
)
from .passage import passage_moments

POLICY_KINDS = ("unsupervised", "supervised", "locally-supervised")

# flow entries below this are treated as structurally zero after projection
FLOW_FLOOR = 1e-12


@dataclass(frozen=True)
class PolicyKind:
    """Rerouting policy: how flow reacts when an edge fails."""

    kind: str
    destinations: tuple = ()

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"kind must be one of {POLICY_KINDS}")
        if self.kind == "locally-supervised" and not self.destinations:
            raise ValueError("locally-supervised policy needs a destination set")


@dataclass(frozen=True)
class CascadeConfig:
    """Cascade driver settings; ``removals`` is the per-run failure budget."""

    seed: int = 0
    removals: int = 5
    weight_range: tuple = (1.0, 3.0)
    bound_low_factor: float = 2.0 / 3.0
    bound_high_factor: float = 4.0 / 3.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


def gen_geometric_graph(n: int, target_degree: float, seed: int,
                        weight_range: tuple = (1.0, 3.0),
                        max_attempts: int = 1000) -> WeightedMarkovGraph:
    """Random geometric graph on the unit square with bidirectional edges.

    Points connect within radius sqrt(d / (n pi)); placements resample until
    the result is strongly connected.  Routing is uniform over out-edges and
    travel times are uniform on ``weight_range`` per directed edge.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    radius = math.sqrt(target_degree / (n * math.pi))
    for _ in range(max_attempts):
        pts = rng.random((n, 2))
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        adj = (d2 <= radius**2) & ~np.eye(n, dtype=bool)
        if not adj.any():
            continue
        edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(adj))]
        if strongly_connected_count(n, edges) != 1:
            continue
        P = adj / adj.sum(axis=1, keepdims=True)
        W = np.where(adj, rng.uniform(*weight_range, size=(n, n)), 0.0)
        return make_graph(P, W)
    raise RuntimeError(f"no connected geometric graph found in {max_attempts} attempts")


def _flow_graph(P: np.ndarray, W: np.ndarray) -> WeightedMarkovGraph:
    """Graph on the positive-flow support of P (deterministic weights)."""
    Pf = np.where(P > FLOW_FLOOR, P, 0.0)
    Pf = Pf / Pf.sum(axis=1, keepdims=True)
    Wf = np.where(Pf > 0, W, 0.0)
    return make_graph(Pf, Wf)


def kemeny_pair(graph: WeightedMarkovGraph):
    """Stationary-weighted first- and second-order constants of a graph."""
    analysis = analyze_chain(graph)
    moments = passage_moments(graph, analysis)
    pi = analysis.stationary
    return (quadratic_form(pi, moments.means),
            quadratic_form(pi, moments.variances), analysis)


def apply_policy(P: np.ndarray, W: np.ndarray, failed_edge, policy: PolicyKind,
                 pi_star: np.ndarray, config: OptimizerConfig):
    """Reroute flow after one edge failure.

    Returns ``(P_new, status)``; status is ``feasible`` or ``infeasible``.
    Unsupervised rerouting renormalizes the damaged row; the supervised
    variants project onto the polytope of routing matrices holding the
    original (or hybrid) occupancy measure on the surviving support.
    """
    i, j = failed_edge
    if P[i, j] <= 0:
        raise ValueError(f"({i},{j}) carries no flow to remove")
    P_cut = P.copy()
    P_cut[i, j] = 0.0
    if P_cut[i].sum() <= 0:
        return None, INFEASIBLE
    P_norm = P_cut / P_cut.sum(axis=1, keepdims=True)
    n = P.shape[0]

    edges_after = [(int(a), int(b)) for a, b in zip(*np.nonzero(P_cut > FLOW_FLOOR))]
    if strongly_connected_count(n, edges_after) != 1:
        return None, INFEASIBLE

    if policy.kind == "unsupervised":
        return P_norm, FEASIBLE

    if policy.kind == "supervised":
        target = pi_star
    else:
        try:
            pi_prime = stationary_of(P_norm)
        except ReducibleChainError:
            return None, INFEASIBLE
        target = hybrid_target(pi_star, pi_prime, policy.destinations)

    support_graph = _flow_graph(P_norm, W)
    try:
        fset = build_feasible_set(support_graph, target, 0.0, config)
    except ValueError:
        return None, INFEASIBLE
    if fset.status != FEASIBLE:
        return None, INFEASIBLE
    proj = project_to_feasible(P_norm, fset, config)
    if not proj.converged or proj.residual > 1e-8:
        return None, INFEASIBLE
    P_new = np.where(proj.P > FLOW_FLOOR, proj.P, 0.0)
    row_sums = P_new.sum(axis=1)
    if np.any(row_sums <= 0):
        return None, INFEASIBLE
    P_new = P_new / row_sums[:, None]
    if strongly_connected_count(
            n, [(int(a), int(b)) for a, b in zip(*np.nonzero(P_new))]) != 1:
        return None, INFEASIBLE
    try:
        pi_new = stationary_of(P_new)
    except ReducibleChainError:
        return None, INFEASIBLE
    if np.max(np.abs(pi_new - target)) > 1e-8:
        return None, INFEASIBLE
    return P_new, FEASIBLE


@dataclass(frozen=True)
class StepRecord:
    """Metrics of one successful cascade step."""

    step: int
    removed_edge: tuple
    d_kemeny: float
    d_variance: float
    dpi_per_node: tuple
    mean_dpi: float
    max_dpi_dest: float
    objective: float


@dataclass(frozen=True)
class CascadeRun:
    """One seeded cascade: per-step records plus the termination reason."""

    seed: int
    policy: str
    steps: tuple
    reason: str  # step-budget | disconnection | projection-infeasible | optimization-infeasible

    @property
    def successful(self) -> bool:
        return self.reason == "step-budget"

    @property
    def total_d_kemeny(self) -> float:
        return sum(s.d_kemeny for s in self.steps)

    @property
    def total_d_variance(self) -> float:
        return sum(s.d_variance for s in self.steps)


def _pick_removable_edge(P, rng, max_retries):
    """Uniform random flow edge whose removal keeps the network strongly
    connected and every node routable; falls back to enumeration."""
    n = P.shape[0]
    flow_edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(P > FLOW_FLOOR))]

    def removable(e):
        i, j = e
        rest = [f for f in flow_edges if f != e]
        if not any(a == i for a, _ in rest):
            return False
        return strongly_connected_count(n, rest) == 1

    for _ in range(max_retries):
        e = flow_edges[int(rng.integers(len(flow_edges)))]
        if removable(e):
            return e
    for e in flow_edges:
        if removable(e):
            return e
    return None


def run_cascade(graph: WeightedMarkovGraph, policy: PolicyKind,
                config: CascadeConfig) -> CascadeRun:
    """Drive one cascade to its removal budget or to infeasibility.

    The connectivity and variance budgets reference the pre-cascade network
    throughout; travel times evolve continuously (each optimization warm
    starts from the previous step's weights).  Deterministic per seed.
    """
    rng = np.random.default_rng(config.seed)
    k_ref, v_ref, _ = kemeny_pair(graph)
    W_orig = graph.W.copy()
    W_min = config.bound_low_factor * W_orig
    W_max = config.bound_high_factor * W_orig
    pi_star = analyze_chain(graph).stationary

    P = graph.P.copy()
    W_cur = W_orig.copy()
    steps = []
    reason = "step-budget"
    for step in range(1, config.removals + 1):
        edge = _pick_removable_edge(P, rng, max_retries=10 * graph.num_edges)
        if edge is None:
            reason = "disconnection"
            break
        P_new, status = apply_policy(P, W_cur, edge, policy, pi_star, config.optimizer)
        if status != FEASIBLE:
            reason = "projection-infeasible"
            break

        damaged = _flow_graph(P_new, W_orig)
        k_unopt, v_unopt, analysis = kemeny_pair(damaged)
        result = minimal_intervention(damaged, W_orig, W_min, W_max, k_ref, v_ref,
                                      config.optimizer, start=W_cur)
        if result.status != FEASIBLE:
            reason = "optimization-infeasible"
            break

        dpi = np.abs(analysis.stationary - pi_star)
        dest = policy.destinations if policy.destinations else tuple(range(graph.n))
        steps.append(StepRecord(
            step=step,
            removed_edge=edge,
            d_kemeny=k_unopt - result.k_value,
            d_variance=v_unopt - result.v_value,
            dpi_per_node=tuple(float(x) for x in dpi),
            mean_dpi=float(dpi.mean()),
            max_dpi_dest=float(dpi[list(dest)].max()),
            objective=result.objective,
        ))
        P = damaged.P.copy()
        W_cur = np.where(damaged.P > 0, result.W, W_cur)

    return CascadeRun(seed=config.seed, policy=policy.kind, steps=tuple(steps),
                      reason=reason)


@dataclass(frozen=True)
class CascadeSummary:
    """Aggregate statistics for one policy over a batch of cascades."""

    policy: str
    runs: int
    successful_runs: int
    mean_d_kemeny: float
    mean_d_variance: float
    mean_dpi: float
    max_dpi_dest: float


def aggregate_cascades(runs_by_policy: dict) -> list:
    """Per-policy summary rows over successful runs (cumulative per-run
    improvements averaged; occupancy deviations from the final step)."""
    rows = []
    for policy, runs in runs_by_policy.items():
        good = [r for r in runs if r.successful and r.steps]
        if good:
            mean_dk = float(np.mean([r.total_d_kemeny for r in good]))
            mean_dv = float(np.mean([r.total_d_variance for r in good]))
            mean_dpi = float(np.mean([r.steps[-1].mean_dpi for r in good]))
            max_dest = float(np.max([r.steps[-1].max_dpi_dest for r in good]))
        else:
            mean_dk = mean_dv = mean_dpi = max_dest = float("nan")
        rows.append(CascadeSummary(policy, len(runs), len(good), mean_dk,
                                   mean_dv, mean_dpi, max_dest))
    return rows
