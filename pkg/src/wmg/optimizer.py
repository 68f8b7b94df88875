"""Constrained optimization over routing matrices and edge weights.

Routing policies live in the polytope cut out by a target stationary
distribution, row-stochasticity, a probability floor on active edges, and the
edge support.  Optimization over that polytope runs a projected simultaneous
perturbation scheme in null-space coordinates.  Weight recovery after edge
failures solves a minimal-intervention problem: smallest squared weight change
subject to a linear connectivity budget, box bounds, and a nonconvex variance
budget handled by quadratic penalties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .chain import ReducibleChainError, analyze_chain
from .graph import WeightedMarkovGraph
from .gradients import variance_scalar_weight_gradient
from .kemeny import quadratic_form
from .passage import passage_moments

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class OptimizerConfig:
    """Tuning knobs for the projected SPSA search and the penalty solver.

    The perturbation-scheme gains follow common practice: step gain
    a_k = step_gain / (k + 1 + stability)^step_decay and probe size
    c_k = probe_gain / (k + 1)^probe_decay, with stability defaulting to
    iterations / 10.
    """

    seed: int = 0
    iterations: int = 2000
    step_gain: float = 0.1
    probe_gain: float = 0.05
    stability: float | None = None
    step_decay: float = 0.602
    probe_decay: float = 0.101
    step_limit: float = 1.0
    projection_tol: float = 1e-10
    max_projection_sweeps: int = 10000
    penalty_start: float = 1.0
    penalty_growth: float = 10.0
    penalty_rounds: int = 5
    inner_iterations: int = 60

    def __post_init__(self):
        positive = ("iterations", "step_gain", "probe_gain", "step_decay",
                    "probe_decay", "step_limit", "projection_tol",
                    "max_projection_sweeps", "penalty_start", "penalty_growth",
                    "penalty_rounds", "inner_iterations")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"OptimizerConfig.{name} must be positive")
        if self.stability is not None and self.stability < 0:
            raise ValueError("OptimizerConfig.stability must be nonnegative")

    @property
    def stability_value(self) -> float:
        return self.iterations / 10.0 if self.stability is None else self.stability

    @classmethod
    def from_json(cls, path) -> "OptimizerConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def with_overrides(self, **kw) -> "OptimizerConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class PolicyFeasibleSet:
    """Affine + box description of the admissible routing polytope.

    Free variables are the transition probabilities on the edge support.  The
    stacked affine system enforces row sums and the target stationary
    distribution; ``nullspace`` is an orthonormal basis of its kernel over the
    free entries.  ``witness`` is a feasible point when one was found.
    """

    n: int
    edges: tuple
    mu: np.ndarray
    eta: float
    constraints: np.ndarray
    rhs: np.ndarray
    constraints_pinv: np.ndarray
    nullspace: np.ndarray
    witness: np.ndarray | None
    status: str
    residual: float

    @property
    def dim(self) -> int:
        return self.nullspace.shape[1]

    def matrix_from_free(self, x: np.ndarray) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        rows, cols = zip(*self.edges)
        P[rows, cols] = x
        return P

    def free_from_matrix(self, P: np.ndarray) -> np.ndarray:
        rows, cols = zip(*self.edges)
        return np.asarray(P[rows, cols], dtype=float)


@dataclass(frozen=True)
class ProjectionResult:
    P: np.ndarray
    converged: bool
    residual: float
    sweeps: int


def _constraint_system(n, edges, mu):
    m = len(edges)
    A = np.zeros((2 * n, m))
    b = np.zeros(2 * n)
    for idx, (i, j) in enumerate(edges):
        A[i, idx] = 1.0
        A[n + j, idx] = mu[i]
    b[:n] = 1.0
    b[n:] = mu
    return A, b


def build_feasible_set(graph: WeightedMarkovGraph, mu: np.ndarray, eta: float,
                       config: OptimizerConfig | None = None) -> PolicyFeasibleSet:
    """Assemble the feasible routing polytope for a target distribution.

    A closed-form witness (every row equal to mu) is used for complete edge
    supports when the floor allows it; otherwise a projection phase searches
    for a feasible point from the uniform-out-edge start.  An empty polytope
    is reported through ``status``, never raised.
    """
    if config is None:
        config = OptimizerConfig()
    mu = np.asarray(mu, dtype=float)
    n = graph.n
    if np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError("target distribution must be positive and sum to 1")
    d_max = int(graph.out_degrees().max())
    if not 0.0 <= eta < 1.0 / d_max:
        raise ValueError(f"eta must lie in [0, 1/{d_max})")

    edges = graph.edges
    A, b = _constraint_system(n, edges, mu)
    A_pinv = np.linalg.pinv(A)
    nullspace = scipy.linalg.null_space(A)

    fset = PolicyFeasibleSet(n=n, edges=edges, mu=mu, eta=eta, constraints=A,
                             rhs=b, constraints_pinv=A_pinv, nullspace=nullspace,
                             witness=None, status=INFEASIBLE, residual=np.inf)

    if len(edges) == n * n and float(mu.min()) >= eta:
        witness = np.tile(mu, (n, 1))
        return replace(fset, witness=witness, status=FEASIBLE, residual=0.0)

    start = np.where(graph.P > 0, 1.0, 0.0)
    start /= start.sum(axis=1, keepdims=True)
    proj = project_to_feasible(start, fset, config)
    if proj.residual <= 1e-8:
        return replace(fset, witness=proj.P, status=FEASIBLE, residual=proj.residual)
    return replace(fset, residual=proj.residual)


def project_to_feasible(P_raw: np.ndarray, fset: PolicyFeasibleSet,
                        config: OptimizerConfig | None = None) -> ProjectionResult:
    """Alternating projection of a raw matrix onto the feasible polytope.

    Alternates the affine least-squares step with clipping to the probability
    box until the joint residual drops below the configured tolerance, then
    renormalizes rows so their sums are exactly one.
    """
    if config is None:
        config = OptimizerConfig()
    A, b, A_pinv = fset.constraints, fset.rhs, fset.constraints_pinv
    x = fset.free_from_matrix(P_raw)
    residual = np.inf
    sweeps = 0
    for sweeps in range(1, config.max_projection_sweeps + 1):
        x = x - A_pinv @ (A @ x - b)
        x = np.clip(x, fset.eta, 1.0)
        residual = float(np.max(np.abs(A @ x - b)))
        if residual <= config.projection_tol:
            break

    P = fset.matrix_from_free(x)
    row_sums = P.sum(axis=1)
    P = P / row_sums[:, None]
    final_residual = float(np.max(np.abs(A @ fset.free_from_matrix(P) - b)))
    converged = residual <= config.projection_tol
    return ProjectionResult(P, converged, max(final_residual, 0.0) if converged else residual,
                            sweeps)


@dataclass(frozen=True)
class SearchResult:
    """Outcome of a projected stochastic search over the routing polytope."""

    P: np.ndarray
    value: float
    trace: np.ndarray  # columns: iteration, best value, projection residual
    status: str
    evaluations: int


def maximize_surprise(graph: WeightedMarkovGraph, fset: PolicyFeasibleSet,
                      config: OptimizerConfig, objective=None) -> SearchResult:
    """Projected SPSA ascent of an objective over the feasible routing set.

    Paired +/- probes along a random null-space direction estimate the
    gradient; iterates are projected back to the polytope after every step
    and the best feasible point seen is returned (ties keep the earliest).
    The default objective is the surprise index of the policy under the
    graph's weights.  Deterministic for a fixed config seed.
    """
    if fset.status != FEASIBLE or fset.witness is None:
        raise ValueError("feasible set is empty or was not built with a witness")
    if objective is None:
        objective = lambda g: surprise_objective(g)  # noqa: E731

    def evaluate(P: np.ndarray) -> float:
        shifted = WeightedMarkovGraph(
            n=graph.n, edges=graph.edges, P=P, W=graph.W, W2=graph.W2,
            tags=graph.tags, mu=graph.mu, destinations=graph.destinations)
        return float(objective(shifted))

    rng = np.random.default_rng(config.seed)
    basis = fset.nullspace
    dim = basis.shape[1]
    p0 = fset.free_from_matrix(fset.witness)

    best_P = fset.witness
    best_value = evaluate(best_P)
    evaluations = 1
    trace = [(0, best_value, 0.0)]
    if dim == 0:
        return SearchResult(best_P, best_value, np.array(trace), FEASIBLE, evaluations)

    theta = np.zeros(dim)
    stability = config.stability_value

    def decode(t: np.ndarray) -> np.ndarray:
        return fset.matrix_from_free(np.clip(p0 + basis @ t, fset.eta, 1.0))

    for k in range(config.iterations):
        a_k = config.step_gain / (k + 1 + stability) ** config.step_decay
        c_k = config.probe_gain / (k + 1) ** config.probe_decay
        delta = rng.integers(0, 2, size=dim) * 2.0 - 1.0

        plus = project_to_feasible(decode(theta + c_k * delta), fset, config)
        minus = project_to_feasible(decode(theta - c_k * delta), fset, config)
        f_plus = evaluate(plus.P)
        f_minus = evaluate(minus.P)
        evaluations += 2

        ghat = (f_plus - f_minus) / (2.0 * c_k) * delta
        step = a_k * ghat
        norm = float(np.linalg.norm(step))
        if norm > config.step_limit:
            step *= config.step_limit / norm
        theta = theta + step

        proj = project_to_feasible(decode(theta), fset, config)
        theta = basis.T @ (fset.free_from_matrix(proj.P) - p0)
        value = evaluate(proj.P)
        evaluations += 1
        if value > best_value:
            best_value = value
            best_P = proj.P
        trace.append((k + 1, best_value, proj.residual))

    return SearchResult(best_P, best_value, np.array(trace), FEASIBLE, evaluations)


def surprise_objective(graph: WeightedMarkovGraph) -> float:
    """Surprise index of a graph's routing policy under its weights."""
    analysis = analyze_chain(graph)
    moments = passage_moments(graph, analysis)
    pi_w = analysis.weighted_stationary
    k_w = quadratic_form(pi_w, moments.means)
    v_w = quadratic_form(pi_w, moments.variances)
    return float(np.sqrt(max(v_w, 0.0)) / k_w)


# ---------------------------------------------------------------------------
# minimal-intervention weight recovery

@dataclass(frozen=True)
class InterventionResult:
    """Outcome of one minimal-intervention solve."""

    W: np.ndarray | None
    objective: float
    k_value: float
    v_value: float
    k_residual: float
    v_residual: float
    status: str
    evaluations: int


def _project_box_halfspace(w, lo, hi, g, budget):
    """Euclidean projection onto {lo <= w <= hi, g . w <= budget}."""
    p = np.clip(w, lo, hi)
    if g @ p <= budget:
        return p
    # profile g . clip(w - lam * g) is continuous and nonincreasing in lam
    lam_lo, lam_hi = 0.0, 1.0
    while g @ np.clip(w - lam_hi * g, lo, hi) > budget:
        lam_hi *= 2.0
        if lam_hi > 1e18:
            return np.clip(w - lam_hi * g, lo, hi)
    for _ in range(200):
        lam = 0.5 * (lam_lo + lam_hi)
        if g @ np.clip(w - lam * g, lo, hi) > budget:
            lam_lo = lam
        else:
            lam_hi = lam
    return np.clip(w - lam_hi * g, lo, hi)


def minimal_intervention(graph_after: WeightedMarkovGraph, W_orig: np.ndarray,
                         W_min: np.ndarray, W_max: np.ndarray,
                         k_ref: float, v_ref: float,
                         config: OptimizerConfig | None = None,
                         start: np.ndarray | None = None) -> InterventionResult:
    """Smallest weight adjustment restoring the connectivity and variance budgets.

    Minimizes ||W - W_orig||^2 over the surviving edges subject to the linear
    constraint that the stationary-weighted first-order constant does not
    exceed ``k_ref``, box bounds, and the nonconvex constraint that the
    second-order constant does not exceed ``v_ref``.  The convex part is
    handled by exact projection; the variance budget by a quadratic penalty
    with geometrically growing weight.  Returns the best feasible point seen
    (never worse than a feasible starting point), or an infeasible status.
    """
    if config is None:
        config = OptimizerConfig()
    analysis = analyze_chain(graph_after)
    pi = analysis.stationary
    edges = graph_after.edges
    rows, cols = zip(*edges)

    w0 = np.asarray(W_orig, dtype=float)[rows, cols]
    lo = np.asarray(W_min, dtype=float)[rows, cols]
    hi = np.asarray(W_max, dtype=float)[rows, cols]
    if np.any(lo > w0 + 1e-12) or np.any(w0 > hi + 1e-12):
        raise ValueError("bounds must bracket the original weights on surviving edges")

    tr = float(np.trace(analysis.fundamental))
    g = tr * pi[np.array(rows)] * graph_after.P[rows, cols]

    k_tol = 1e-6
    v_tol = 1e-6 * max(1.0, abs(v_ref))
    if g @ lo > k_ref + k_tol:
        return InterventionResult(None, np.inf, float(g @ lo), np.inf,
                                  float(g @ lo - k_ref), np.inf, INFEASIBLE, 0)

    def weights_matrix(w):
        W = np.zeros_like(W_orig, dtype=float)
        W[rows, cols] = w
        return W

    evaluations = 0

    def v_value(w) -> float:
        nonlocal evaluations
        evaluations += 1
        shifted = graph_after.with_weights(weights_matrix(w))
        moments = passage_moments(shifted, analysis)
        return quadratic_form(pi, moments.variances)

    def v_gradient(w) -> np.ndarray:
        shifted = graph_after.with_weights(weights_matrix(w))
        grad = variance_scalar_weight_gradient(shifted, analysis, weighted=False)
        return grad[rows, cols]

    start_w = w0 if start is None else np.asarray(start, dtype=float)[rows, cols]
    w = _project_box_halfspace(start_w, lo, hi, g, k_ref)

    best_w = None
    best_obj = np.inf

    def consider(w_cand, v_cand):
        nonlocal best_w, best_obj
        if v_cand <= v_ref + v_tol:
            obj = float(np.sum((w_cand - w0) ** 2))
            if obj < best_obj - 1e-15:
                best_obj = obj
                best_w = w_cand.copy()

    v_now = v_value(w)
    consider(w, v_now)

    if best_w is None:
        rho = config.penalty_start
        for _ in range(config.penalty_rounds):
            t = 1.0
            for _ in range(config.inner_iterations):
                viol = max(v_now - v_ref, 0.0)
                grad = 2.0 * (w - w0)
                if viol > 0.0:
                    grad = grad + 2.0 * rho * viol * v_gradient(w)
                f_now = float(np.sum((w - w0) ** 2)) + rho * viol**2
                accepted = False
                for _ in range(40):
                    w_try = _project_box_halfspace(w - t * grad, lo, hi, g, k_ref)
                    v_try = v_value(w_try)
                    f_try = float(np.sum((w_try - w0) ** 2)) + rho * max(v_try - v_ref, 0.0)**2
                    if f_try < f_now - 1e-15:
                        w, v_now = w_try, v_try
                        consider(w, v_now)
                        t *= 2.0
                        accepted = True
                        break
                    t *= 0.5
                if not accepted:
                    break
            if best_w is not None:
                break
            rho *= config.penalty_growth

    if best_w is None:
        return InterventionResult(None, np.inf, float(g @ w), v_now,
                                  max(float(g @ w - k_ref), 0.0),
                                  max(v_now - v_ref, 0.0), INFEASIBLE, evaluations)

    k_final = float(g @ best_w)
    v_final = v_value(best_w)
    return InterventionResult(weights_matrix(best_w), best_obj, k_final, v_final,
                              max(k_final - k_ref, 0.0), max(v_final - v_ref, 0.0),
                              FEASIBLE, evaluations)


def hybrid_target(pi_star: np.ndarray, pi_prime: np.ndarray, destinations) -> np.ndarray:
    """Occupancy target that pins destination nodes and rescales the rest.

    Destination entries keep their original stationary mass; transit entries
    take the post-failure distribution rescaled so the result sums to one.
    """
    pi_star = np.asarray(pi_star, dtype=float)
    pi_prime = np.asarray(pi_prime, dtype=float)
    n = pi_star.shape[0]
    dest = sorted(set(int(d) for d in destinations))
    if any(not 0 <= d < n for d in dest):
        raise ValueError("destinations out of range")
    if len(dest) == n:
        raise ValueError("destinations must be a strict subset of the nodes")
    mask = np.zeros(n, dtype=bool)
    mask[dest] = True
    dest_mass = float(pi_star[mask].sum())
    transit_mass = float(pi_prime[~mask].sum())
    alpha = (1.0 - dest_mass) / transit_mass
    out = np.where(mask, pi_star, alpha * pi_prime)
    return out
