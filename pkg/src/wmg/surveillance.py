"""Grid surveillance studies: instance builders, policy search, structure analysis.

Builds 4-neighbor lattice instances (optionally with obstacle cells and
priority targets), runs the projected stochastic search for maximum-surprise
or minimum-variance patrol policies, and analyzes the dominant-edge structure
of the results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import analyze_chain
from .graph import WeightedMarkovGraph, make_graph
from .kemeny import quadratic_form
from .optimizer import (
    FEASIBLE,
    OptimizerConfig,
    PolicyFeasibleSet,
    build_feasible_set,
    maximize_surprise,
    project_to_feasible,
    surprise_objective,
)
from .passage import passage_moments

MODES = ("baseline", "max-surprise", "min-variance")


@dataclass(frozen=True)
class GridSpec:
    """One lattice surveillance instance.

    ``obstacles`` lists removed (row, col) cells.  Edge weights are sampled
    uniformly from ``weight_range`` per directed edge.  When
    ``high_cv_fraction`` is positive, that fraction of edges draws its
    coefficient of variation from ``cv_high_band`` and the rest from
    ``cv_low_band``; otherwise weights are deterministic.  ``target_rule``
    is ``uniform`` or ``obstacle-adjacent-2x`` (cells bordering an obstacle
    get twice the coverage mass).
    """

    rows: int
    cols: int
    obstacles: tuple = ()
    weight_range: tuple = (1.0, 3.0)
    cv_low_band: tuple = (0.0, 0.0)
    cv_high_band: tuple = (0.0, 0.0)
    high_cv_fraction: float = 0.0
    target_rule: str = "uniform"
    eta: float = 1e-4
    seed: int = 0

    @property
    def stochastic(self) -> bool:
        return self.high_cv_fraction > 0.0 or self.cv_low_band[1] > 0.0


def grid_4x4_spec(seed: int = 0) -> GridSpec:
    """Canonical 16-node deterministic instance (uniform target)."""
    return GridSpec(rows=4, cols=4, seed=seed)


def grid_8x8_spec(seed: int = 0) -> GridSpec:
    """Canonical 60-node stochastic instance with two obstacle pairs.

    The cv bands are chosen so 40% of the edges are high-variability
    (cv >= 1), the overall cv range is [0.3, 1.7], and the mean cv is 0.85.
    """
    return GridSpec(
        rows=8, cols=8,
        obstacles=((2, 2), (2, 3), (5, 4), (5, 5)),
        cv_low_band=(0.3, 11.0 / 15.0),
        cv_high_band=(1.0, 1.7),
        high_cv_fraction=0.4,
        target_rule="obstacle-adjacent-2x",
        seed=seed,
    )


def grid_cells(spec: GridSpec):
    """Accessible (row, col) cells of a grid spec in row-major node order."""
    return [(r, c) for r in range(spec.rows) for c in range(spec.cols)
            if (r, c) not in set(spec.obstacles)]


def build_grid(spec: GridSpec):
    """Materialize a GridSpec into a graph and its target distribution.

    Nodes are the accessible cells in row-major order; edges connect
    4-neighbors in both directions.  The returned graph carries a uniform
    out-edge routing matrix as the starting policy.
    """
    cells = grid_cells(spec)
    index = {cell: k for k, cell in enumerate(cells)}
    n = len(cells)
    if n == 0:
        raise ValueError("all cells are obstacles")

    adjacency = np.zeros((n, n))
    for (r, c) in cells:
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (r + dr, c + dc)
            if nb in index:
                adjacency[index[(r, c)], index[nb]] = 1.0

    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.weight_range
    W = np.where(adjacency > 0, rng.uniform(lo, hi, size=(n, n)), 0.0)
    if spec.stochastic:
        pick_high = rng.random((n, n)) < spec.high_cv_fraction
        cv_low = rng.uniform(*spec.cv_low_band, size=(n, n))
        cv_high = rng.uniform(*spec.cv_high_band, size=(n, n))
        cv = np.where(adjacency > 0, np.where(pick_high, cv_high, cv_low), 0.0)
    else:
        cv = None

    P = adjacency / adjacency.sum(axis=1, keepdims=True)

    if spec.target_rule == "uniform":
        mu = np.full(n, 1.0 / n)
    elif spec.target_rule == "obstacle-adjacent-2x":
        weight = np.ones(n)
        for (r, c) in spec.obstacles:
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = (r + dr, c + dc)
                if nb in index:
                    weight[index[nb]] = 2.0
        mu = weight / weight.sum()
    else:
        raise ValueError(f"unknown target rule {spec.target_rule!r}")

    graph = make_graph(P, W, cv=cv, dist="lognormal" if spec.stochastic else None, mu=mu)
    return graph, mu


@dataclass(frozen=True)
class PolicyStructure:
    """Dominant-edge structure of a routing policy."""

    dominant_edges: tuple
    is_hamiltonian_cycle: bool
    kemeny_weighted: float
    sqrt_var_weighted: float
    surprise: float


def analyze_policy(P: np.ndarray, graph: WeightedMarkovGraph,
                   threshold: float = 0.5) -> PolicyStructure:
    """Extract dominant edges (P > threshold) and test for a single full cycle."""
    n = P.shape[0]
    dominant = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(P > threshold)))
    successor = {}
    for i, j in dominant:
        successor[i] = j
    hamiltonian = False
    if len(dominant) == n and len(successor) == n:
        seen = set()
        node = 0
        for _ in range(n):
            if node in seen:
                break
            seen.add(node)
            node = successor[node]
        hamiltonian = len(seen) == n and node == 0

    shifted = WeightedMarkovGraph(
        n=graph.n, edges=graph.edges, P=P, W=graph.W, W2=graph.W2,
        tags=graph.tags, mu=graph.mu, destinations=graph.destinations)
    analysis = analyze_chain(shifted)
    moments = passage_moments(shifted, analysis)
    pi_w = analysis.weighted_stationary
    k_w = quadratic_form(pi_w, moments.means)
    v_w = quadratic_form(pi_w, moments.variances)
    s = float(np.sqrt(max(v_w, 0.0)) / k_w)
    return PolicyStructure(dominant, hamiltonian, k_w, float(np.sqrt(max(v_w, 0.0))), s)


@dataclass(frozen=True)
class StudyRow:
    policy: str
    kemeny_weighted: float
    sqrt_var_weighted: float
    surprise: float
    gain: float


@dataclass(frozen=True)
class StudyResult:
    """Outputs of one surveillance study."""

    spec: GridSpec
    mode: str
    graph: WeightedMarkovGraph
    mu: np.ndarray
    baseline_P: np.ndarray
    policy_P: np.ndarray
    rows: tuple
    trace: np.ndarray
    structure: PolicyStructure
    cv_correlation: float | None
    components_direction: str


def _policy_row(name: str, P: np.ndarray, graph: WeightedMarkovGraph,
                baseline_surprise: float | None) -> StudyRow:
    structure = analyze_policy(P, graph)
    gain = 0.0
    if baseline_surprise:
        gain = (structure.surprise - baseline_surprise) / baseline_surprise
    return StudyRow(name, structure.kemeny_weighted, structure.sqrt_var_weighted,
                    structure.surprise, gain)


def negative_variance_objective(graph: WeightedMarkovGraph) -> float:
    """Ascent objective whose maximization drives the occupancy-weighted
    passage variance toward zero (log scale keeps steps usable across the
    many orders of magnitude the variance traverses)."""
    analysis = analyze_chain(graph)
    moments = passage_moments(graph, analysis)
    v_w = quadratic_form(analysis.weighted_stationary, moments.variances)
    return -float(np.log(max(v_w, 1e-300)))


def baseline_policy(graph: WeightedMarkovGraph, fset: PolicyFeasibleSet,
                    config: OptimizerConfig) -> np.ndarray:
    """Reference policy: the all-1/n mixing kernel projected to feasibility."""
    H = np.full((graph.n, graph.n), 1.0 / graph.n)
    proj = project_to_feasible(H, fset, config)
    if not proj.converged:
        raise RuntimeError(f"baseline projection failed (residual {proj.residual:.3g})")
    return proj.P


def run_surveillance_study(spec: GridSpec, config: OptimizerConfig,
                           mode: str) -> StudyResult:
    """Run one grid study and collect table rows, traces, and structure.

    ``mode`` selects the search objective: ``max-surprise`` maximizes the
    surprise index, ``min-variance`` minimizes the occupancy-weighted passage
    variance, ``baseline`` skips optimization.  The baseline row is derived
    from the same starting point in every mode.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    graph, mu = build_grid(spec)
    fset = build_feasible_set(graph, mu, spec.eta, config)
    if fset.status != FEASIBLE:
        raise RuntimeError(f"instance infeasible (residual {fset.residual:.3g})")

    base_P = baseline_policy(graph, fset, config)
    base_row = _policy_row("baseline", base_P, graph, None)

    if mode == "baseline":
        policy_P = base_P
        trace = np.array([(0, base_row.surprise, 0.0)])
    else:
        objective = surprise_objective if mode == "max-surprise" else negative_variance_objective
        fset_from_base = PolicyFeasibleSet(
            n=fset.n, edges=fset.edges, mu=fset.mu, eta=fset.eta,
            constraints=fset.constraints, rhs=fset.rhs,
            constraints_pinv=fset.constraints_pinv, nullspace=fset.nullspace,
            witness=base_P, status=FEASIBLE, residual=0.0)
        search = maximize_surprise(graph, fset_from_base, config, objective=objective)
        policy_P = search.P
        trace = search.trace

    row = _policy_row(mode, policy_P, graph, base_row.surprise) if mode != "baseline" else base_row
    structure = analyze_policy(policy_P, graph)

    cv_corr = None
    if spec.stochastic:
        rows_idx, cols_idx = zip(*graph.edges)
        cv = graph.cv_matrix()
        p_active = policy_P[rows_idx, cols_idx]
        cv_active = cv[rows_idx, cols_idx]
        cv_corr = float(np.corrcoef(p_active, cv_active)[0, 1])

    dk = "up" if row.kemeny_weighted >= base_row.kemeny_weighted else "down"
    dv = "up" if row.sqrt_var_weighted >= base_row.sqrt_var_weighted else "down"
    direction = f"kemeny_weighted {dk}, sqrt_var {dv}"

    return StudyResult(
        spec=spec, mode=mode, graph=graph, mu=mu, baseline_P=base_P,
        policy_P=policy_P, rows=(base_row, row) if mode != "baseline" else (base_row,),
        trace=trace, structure=structure, cv_correlation=cv_corr,
        components_direction=direction)
