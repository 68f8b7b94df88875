import json

import numpy as np
import pytest

from wmg import (
    GraphFormatError,
    GraphValidationError,
    WeightTag,
    load_graph,
    make_graph,
    save_graph,
    uniform_mixing_matrix,
    validate,
)
from wmg.graph import WeightedMarkovGraph, graph_doc

from conftest import random_graph, two_state_graph


def test_two_state_admissible():
    assert validate(two_state_graph()).ok


def test_row_sum_violation_reported():
    g = two_state_graph()
    P = np.array([[0.0, 0.9], [1.0, 0.0]])
    bad = WeightedMarkovGraph(n=2, edges=g.edges, P=P, W=g.W, W2=g.W2, tags=g.tags)
    report = validate(bad)
    assert any("row 0 sums to 0.9" in v for v in report.violations)


def test_isolated_node_reported():
    # node 2 has no in-edges reaching the rest: two components
    P = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    W = np.where(P > 0, 1.0, 0.0)
    with pytest.raises(GraphValidationError, match="strongly connected"):
        make_graph(P, W)
    g = make_graph(P, W, check=False)
    report = validate(g)
    assert any("1 strongly connected component required, found 2" in v
               for v in report.violations)


def test_moment_consistency_violation():
    g = two_state_graph()
    W2 = g.W2.copy()
    W2[0, 1] = 1.0  # below W(0,1)^2 = 4
    bad = WeightedMarkovGraph(n=2, edges=g.edges, P=g.P, W=g.W, W2=W2, tags=g.tags)
    assert any("below" in v for v in validate(bad).violations)


def test_weight_tags():
    assert WeightTag("deterministic", 0.0).second_moment_factor == 1.0
    assert WeightTag("lognormal", 0.5).second_moment_factor == 1.25
    with pytest.raises(GraphValidationError):
        WeightTag("deterministic", 0.5)
    with pytest.raises(GraphValidationError):
        WeightTag("gamma", 0.0)
    with pytest.raises(GraphValidationError):
        WeightTag("weibull", 0.5)


def test_load_two_state(tmp_path):
    doc = {"n": 2, "edges": [
        {"from": 0, "to": 1, "p": 1.0, "w_mean": 2.0},
        {"from": 1, "to": 0, "p": 1.0, "w_mean": 3.0}]}
    path = tmp_path / "g.json"
    path.write_text(json.dumps(doc))
    g = load_graph(path)
    ref = two_state_graph()
    assert np.array_equal(g.P, ref.P)
    assert np.array_equal(g.W, ref.W)
    assert np.array_equal(g.W2, ref.W2)


def test_cv_fills_second_moment(tmp_path):
    doc = {"n": 2, "edges": [
        {"from": 0, "to": 1, "p": 1.0, "w_mean": 2.0, "cv": 0.5},
        {"from": 1, "to": 0, "p": 1.0, "w_mean": 3.0}]}
    path = tmp_path / "g.json"
    path.write_text(json.dumps(doc))
    g = load_graph(path)
    assert g.W2[0, 1] == pytest.approx(5.0, abs=1e-15)  # 4 * 1.25
    assert g.W2[1, 0] == 9.0


def test_missing_field_names_edge(tmp_path):
    doc = {"n": 2, "edges": [
        {"from": 0, "to": 1, "w_mean": 2.0},
        {"from": 1, "to": 0, "p": 1.0, "w_mean": 3.0}]}
    path = tmp_path / "g.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(GraphFormatError, match="edge 0: missing 'p'"):
        load_graph(path)


def test_uniform_mixing_matrix():
    assert np.array_equal(uniform_mixing_matrix(2), np.full((2, 2), 0.5))
    assert np.array_equal(uniform_mixing_matrix(4), np.full((4, 4), 0.25))
    # the n=16 kernel clears the canonical probability floor
    H = uniform_mixing_matrix(16)
    assert H[0, 0] == 0.0625 >= 1e-4


def test_roundtrip_bit_exact(tmp_path):
    g = random_graph(6, seed=7, cv_mix=True)
    path = tmp_path / "g.json"
    save_graph(g, path)
    g2 = load_graph(path)
    assert np.array_equal(g.P, g2.P)
    assert np.array_equal(g.W, g2.W)
    assert np.array_equal(g.W2, g2.W2)
    assert g.edges == g2.edges
    assert g.tags == g2.tags
    # and the serialized form is stable
    save_graph(g2, tmp_path / "g2.json")
    assert (tmp_path / "g.json").read_bytes() == (tmp_path / "g2.json").read_bytes()


def test_graph_doc_carries_metadata():
    g = random_graph(5, seed=1)
    from dataclasses import replace
    g = replace(g, mu=np.full(5, 0.2), destinations=(1, 3))
    doc = graph_doc(g)
    assert doc["mu"] == [0.2] * 5
    assert doc["destinations"] == [1, 3]


def test_csv_edge_list(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("from,to,p,w_mean,cv\n0,1,1.0,2.0,\n1,0,1.0,3.0,0.5\n")
    g = load_graph(path)
    assert g.W[0, 1] == 2.0
    assert g.W2[1, 0] == pytest.approx(9.0 * 1.25)


def test_sampled_weights_match_declared_moments():
    # the matched lognormal and gamma samplers reproduce (W, W2) within 3 SE
    from wmg.passage import _gamma_params, _lognormal_params
    rng = np.random.default_rng(42)
    n_draws = 10**6
    for kind in ("lognormal", "gamma"):
        mean, cv = 2.0, 0.5
        W = np.array([[mean]])
        C = np.array([[cv]])
        if kind == "lognormal":
            mu, sig = _lognormal_params(W, C)
            draws = rng.lognormal(mu[0, 0], sig[0, 0], size=n_draws)
        else:
            shape, scale = _gamma_params(W, C)
            draws = rng.gamma(shape[0, 0], scale[0, 0], size=n_draws)
        w2 = mean**2 * (1 + cv**2)
        se_mean = draws.std(ddof=1) / np.sqrt(n_draws)
        sq = draws**2
        se_sq = sq.std(ddof=1) / np.sqrt(n_draws)
        assert abs(draws.mean() - mean) < 3 * se_mean
        assert abs(sq.mean() - w2) < 3 * se_sq
