"""Weighted Markovian graph model: construction, validation, serialization.

A weighted Markovian graph couples a row-stochastic routing matrix with a
matrix of per-edge traversal costs.  Transition probabilities and costs share
the same directed edge support, and the cost of an edge may be deterministic
or drawn fresh on every traversal from a distribution matched to a mean and a
coefficient of variation.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-12
# Admissibility floor for edge weights; the model requires strictly positive
# costs on every edge.
WEIGHT_FLOOR = 1e-9

DIST_KINDS = ("deterministic", "lognormal", "gamma")
_KIND_CODE = {"deterministic": 0, "lognormal": 1, "gamma": 2}


class GraphFormatError(ValueError):
    """A graph file could not be parsed; message carries the field locus."""


class GraphValidationError(ValueError):
    """A graph violates the model assumptions (see :func:`validate`)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=float))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class WeightTag:
    """Per-edge weight distribution tag.

    ``kind`` is one of ``deterministic``, ``lognormal``, ``gamma``; ``cv`` is
    the coefficient of variation (std/mean).  Deterministic tags require
    ``cv == 0``, the stochastic kinds require ``cv > 0``.
    """

    kind: str = "deterministic"
    cv: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in DIST_KINDS:
            raise GraphValidationError(f"unknown weight distribution kind {self.kind!r}")
        if self.kind == "deterministic" and self.cv != 0.0:
            raise GraphValidationError("deterministic weight tag requires cv = 0")
        if self.kind != "deterministic" and not self.cv > 0.0:
            raise GraphValidationError(f"{self.kind} weight tag requires cv > 0")

    @property
    def second_moment_factor(self) -> float:
        """Ratio E[w^2] / E[w]^2 = 1 + cv^2 for a matched distribution."""
        return 1.0 + self.cv**2


@dataclass(frozen=True)
class WeightedMarkovGraph:
    """Immutable weighted Markovian graph.

    Attributes
    ----------
    n : int
        Number of nodes (0-based indices).
    edges : tuple of (int, int)
        Directed edge set, sorted lexicographically.
    P : ndarray, shape (n, n)
        Row-stochastic transition matrix supported exactly on ``edges``.
    W : ndarray, shape (n, n)
        Mean edge weights, positive on ``edges`` and zero elsewhere.
    W2 : ndarray, shape (n, n)
        Second moments of the edge weights, same support.
    tags : tuple of WeightTag
        Weight distribution tag per edge, aligned with ``edges``.
    mu : ndarray or None
        Optional target stationary distribution carried from input files.
    destinations : tuple of int or None
        Optional destination node set carried from input files.
    """

    n: int
    edges: tuple
    P: np.ndarray
    W: np.ndarray
    W2: np.ndarray
    tags: tuple
    mu: np.ndarray | None = None
    destinations: tuple | None = None

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_index(self) -> dict:
        """Map (i, j) -> position in the edge list."""
        return {e: k for k, e in enumerate(self.edges)}

    def edge_array(self) -> np.ndarray:
        """Edge list as an (m, 2) integer array."""
        return np.array(self.edges, dtype=int).reshape(-1, 2)

    def cv_matrix(self) -> np.ndarray:
        """Dense (n, n) matrix of per-edge coefficients of variation."""
        cv = np.zeros((self.n, self.n))
        for (i, j), tag in zip(self.edges, self.tags):
            cv[i, j] = tag.cv
        return cv

    def kind_codes(self) -> np.ndarray:
        """Dense (n, n) int matrix of distribution codes (0 det, 1 lognormal, 2 gamma)."""
        codes = np.zeros((self.n, self.n), dtype=int)
        for (i, j), tag in zip(self.edges, self.tags):
            codes[i, j] = _KIND_CODE[tag.kind]
        return codes

    def out_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, _ in self.edges:
            deg[i] += 1
        return deg

    def with_weights(self, W: np.ndarray, W2: np.ndarray | None = None) -> "WeightedMarkovGraph":
        """Copy of the graph with new mean weights on the same support.

        When ``W2`` is omitted it is refilled from the per-edge tags
        (``W2 = W^2 (1 + cv^2)``).
        """
        W = np.asarray(W, dtype=float)
        if W2 is None:
            W2 = np.zeros_like(W)
            for (i, j), tag in zip(self.edges, self.tags):
                W2[i, j] = W[i, j] ** 2 * tag.second_moment_factor
        return WeightedMarkovGraph(
            n=self.n, edges=self.edges, P=self.P, W=_frozen(W), W2=_frozen(W2),
            tags=self.tags, mu=self.mu, destinations=self.destinations)


def strongly_connected_count(n: int, edges) -> int:
    """Number of strongly connected components of the directed edge set."""
    if n == 1:
        return 1
    if not edges:
        return n
    rows = [i for i, _ in edges]
    cols = [j for _, j in edges]
    adj = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    count, _ = connected_components(adj, directed=True, connection="strong")
    return int(count)


def make_graph(P, W, cv=None, dist=None, mu=None, destinations=None,
               check: bool = True) -> WeightedMarkovGraph:
    """Build a graph from dense matrices; edge set taken from the support of P.

    Parameters
    ----------
    P, W : array_like, shape (n, n)
        Transition probabilities and mean weights; must share support.
    cv : array_like or float, optional
        Per-edge coefficient of variation (0 = deterministic weight).
    dist : array of str or str, optional
        Distribution kind per edge where cv > 0; defaults to ``lognormal``.
    mu, destinations : optional
        Metadata carried through for the optimization drivers.
    check : bool
        Validate the result and raise GraphValidationError on violations.
    """
    P = np.asarray(P, dtype=float)
    W = np.asarray(W, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or W.shape != (n, n):
        raise GraphValidationError("P and W must be square matrices of equal shape")
    edges = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(P)))

    if cv is None:
        cv_mat = np.zeros((n, n))
    elif np.isscalar(cv):
        cv_mat = np.where(P > 0, float(cv), 0.0)
    else:
        cv_mat = np.asarray(cv, dtype=float)

    tags = []
    W2 = np.zeros((n, n))
    for (i, j) in edges:
        c = float(cv_mat[i, j])
        if c == 0.0:
            tag = WeightTag("deterministic", 0.0)
        else:
            if dist is None:
                kind = "lognormal"
            elif isinstance(dist, str):
                kind = dist
            else:
                kind = str(np.asarray(dist)[i, j])
            tag = WeightTag(kind, c)
        tags.append(tag)
        W2[i, j] = W[i, j] ** 2 * tag.second_moment_factor

    g = WeightedMarkovGraph(
        n=n, edges=edges, P=_frozen(P), W=_frozen(W), W2=_frozen(W2),
        tags=tuple(tags),
        mu=None if mu is None else _frozen(mu),
        destinations=None if destinations is None else tuple(int(d) for d in destinations))
    if check:
        report = validate(g)
        if not report.ok:
            raise GraphValidationError("; ".join(report.violations))
    return g


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`: a list of human-readable violations."""

    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(graph: WeightedMarkovGraph) -> ValidationReport:
    """Check the model assumptions; collects violations instead of raising.

    Checks: row-stochasticity, support agreement of P/W/W2 with the edge set,
    the weight floor, second-moment consistency (W2 >= W^2 on every edge),
    and strong connectivity of the edge set.
    """
    v = []
    n, P, W, W2 = graph.n, graph.P, graph.W, graph.W2
    edge_set = set(graph.edges)

    row_sums = P.sum(axis=1)
    for i in np.nonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL)[0]:
        v.append(f"row {i} sums to {row_sums[i]:.12g}")

    for name, mat in (("P", P), ("W", W), ("W2", W2)):
        support = {(int(i), int(j)) for i, j in zip(*np.nonzero(mat))}
        for e in sorted(support - edge_set):
            v.append(f"{name}{e} nonzero off the edge set")
        for e in sorted(edge_set - support):
            v.append(f"{name}{e} zero on a declared edge")

    for (i, j) in graph.edges:
        if 0.0 < W[i, j] < WEIGHT_FLOOR:
            v.append(f"W({i},{j}) below the {WEIGHT_FLOOR:g} weight floor")
        if W2[i, j] < W[i, j] ** 2 - 1e-12 * max(1.0, W[i, j] ** 2):
            v.append(f"W2({i},{j}) = {W2[i, j]:.12g} below W({i},{j})^2")

    ncomp = strongly_connected_count(n, graph.edges)
    if ncomp != 1:
        v.append(f"1 strongly connected component required, found {ncomp}")

    if graph.mu is not None:
        if graph.mu.shape != (n,):
            v.append("mu has wrong length")
        elif np.any(graph.mu <= 0) or abs(graph.mu.sum() - 1.0) > 1e-9:
            v.append("mu must be positive and sum to 1")
    if graph.destinations is not None:
        bad = [d for d in graph.destinations if not 0 <= d < n]
        if bad:
            v.append(f"destinations out of range: {bad}")

    return ValidationReport(tuple(v))


def uniform_mixing_matrix(n: int) -> np.ndarray:
    """The n x n matrix with every entry 1/n (complete-support mixing kernel)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.full((n, n), 1.0 / n)


# ---------------------------------------------------------------------------
# serialization

def _edge_record(graph: WeightedMarkovGraph, k: int) -> dict:
    i, j = graph.edges[k]
    tag = graph.tags[k]
    rec = {"from": i, "to": j, "p": float(graph.P[i, j]), "w_mean": float(graph.W[i, j])}
    if tag.cv > 0:
        rec["cv"] = float(tag.cv)
        rec["dist"] = tag.kind
    return rec


def graph_doc(graph: WeightedMarkovGraph) -> dict:
    """JSON-ready document for a graph (floats round-trip bit-exactly)."""
    doc = {
        "n": graph.n,
        "edges": [_edge_record(graph, k) for k in range(graph.num_edges)],
    }
    if graph.mu is not None:
        doc["mu"] = [float(x) for x in graph.mu]
    if graph.destinations is not None:
        doc["destinations"] = list(graph.destinations)
    return doc


def save_graph(graph: WeightedMarkovGraph, path) -> None:
    """Write the graph to a JSON file (bit-exact round trip via float repr)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(graph_doc(graph), indent=1, sort_keys=True))
    os.replace(tmp, path)


def _edges_from_records(records, n: int):
    """Parse edge records into (P, W, cv, dist) dense matrices."""
    P = np.zeros((n, n))
    W = np.zeros((n, n))
    cv = np.zeros((n, n))
    dist = np.empty((n, n), dtype=object)
    for idx, rec in enumerate(records):
        for key in ("from", "to", "p", "w_mean"):
            if key not in rec:
                raise GraphFormatError(f"edge {idx}: missing {key!r}")
        i, j = int(rec["from"]), int(rec["to"])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphFormatError(f"edge {idx}: endpoint ({i},{j}) outside 0..{n - 1}")
        if P[i, j] != 0:
            raise GraphFormatError(f"edge {idx}: duplicate edge ({i},{j})")
        P[i, j] = float(rec["p"])
        W[i, j] = float(rec["w_mean"])
        cv[i, j] = float(rec.get("cv", 0.0))
        kind = rec.get("dist")
        if kind is not None and kind not in DIST_KINDS:
            raise GraphFormatError(f"edge {idx}: unknown dist {kind!r}")
        dist[i, j] = kind
    return P, W, cv, dist


def load_graph(path) -> WeightedMarkovGraph:
    """Load a graph from a JSON document or a CSV edge list.

    JSON schema: ``{"n": int, "edges": [{"from", "to", "p", "w_mean",
    "cv"?, "dist"?}], "mu"?: [float], "destinations"?: [int]}``.
    CSV alternative: header ``from,to,p,w_mean,cv`` (node count inferred).
    Raises GraphFormatError on parse problems and GraphValidationError when
    the parsed graph is inadmissible.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)

    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON ({exc})") from exc
    if "n" not in doc:
        raise GraphFormatError(f"{path}: missing 'n'")
    if "edges" not in doc or not isinstance(doc["edges"], list):
        raise GraphFormatError(f"{path}: missing 'edges' list")
    n = int(doc["n"])
    if n < 1:
        raise GraphFormatError(f"{path}: n must be positive")
    P, W, cv, dist = _edges_from_records(doc["edges"], n)

    mu = doc.get("mu")
    if mu is not None:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (n,):
            raise GraphFormatError(f"{path}: mu must have length {n}")
    destinations = doc.get("destinations")

    # per-edge dist matrix: None entries fall back to the cv-driven default
    dist_arr = np.where(dist == None, "lognormal", dist)  # noqa: E711
    return make_graph(P, W, cv=cv, dist=dist_arr, mu=mu, destinations=destinations)


def _load_csv(path: Path) -> WeightedMarkovGraph:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"from", "to", "p", "w_mean"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise GraphFormatError(f"{path}: CSV header must contain from,to,p,w_mean[,cv]")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = {"from": int(row["from"]), "to": int(row["to"]),
                       "p": float(row["p"]), "w_mean": float(row["w_mean"])}
            except (TypeError, ValueError) as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from exc
            if row.get("cv"):
                rec["cv"] = float(row["cv"])
            rows.append(rec)
    if not rows:
        raise GraphFormatError(f"{path}: no edges")
    n = 1 + max(max(r["from"] for r in rows), max(r["to"] for r in rows))
    P, W, cv, dist = _edges_from_records(rows, n)
    dist_arr = np.where(dist == None, "lognormal", dist)  # noqa: E711
    return make_graph(P, W, cv=cv, dist=dist_arr)
