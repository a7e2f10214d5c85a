import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize
from scipy import stats as sps

from landmark_gate.core import NormalizationSpec, Shape
from landmark_gate.shapestats import (
    EdgeStats,
    SchemaViolation,
    Topology,
    TrainStats,
    TruncatedFile,
    UnsupportedFormat,
    default_topology,
    delaunay_topology,
    fit_edge,
    fit_stats,
    fit_t,
    load_stats,
    save_stats,
    t_logpdf,
    t_pdf,
)


def _acyclic_connected(edges, n):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri == rj:
            return False
        parent[ri] = rj
    return len({find(i) for i in range(n)}) == 1


def brute_force_mst_weight(pts):
    n = len(pts)
    all_edges = list(itertools.combinations(range(n), 2))
    w = {e: float(np.linalg.norm(pts[e[0]] - pts[e[1]])) for e in all_edges}
    best = math.inf
    for tree in itertools.combinations(all_edges, n - 1):
        if _acyclic_connected(tree, n):
            best = min(best, sum(w[e] for e in tree))
    return best, w


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology(((1, 1),))
    with pytest.raises(ValueError):
        Topology(((2, 1),))
    with pytest.raises(ValueError):
        Topology(((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        Topology(((0, 1), (2, 3))).validate(4)
    with pytest.raises(ValueError):
        Topology(((0, 5),)).validate(3)
    Topology(((0, 1), (1, 2))).validate(3)


def test_topology_text_roundtrip():
    t = Topology(((0, 1), (1, 2), (0, 3)))
    assert Topology.from_text(t.to_text()) == t
    assert Topology.from_text("# comment\n2 1\n\n0 1 # tail\n").edges == ((1, 2), (0, 1))
    with pytest.raises(ValueError):
        Topology.from_text("0 1 2\n")


def test_default_topology_examples():
    assert set(default_topology([[0, 0], [1, 0], [3, 0]]).edges) == {(0, 1), (1, 2)}
    assert default_topology([[0, 0], [5, 5]]).edges == ((0, 1),)
    # duplicate means: index tie-break, still a tree
    t = default_topology([[0, 0], [0, 0], [0, 0]])
    assert t.edges == ((0, 1), (0, 2))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-100, 100, allow_nan=False)))
def test_default_topology_is_minimum_spanning_tree(pts):
    topo = default_topology(pts)
    assert len(topo.edges) == 4 and _acyclic_connected(topo.edges, 5)
    best, w = brute_force_mst_weight(pts)
    assert math.isclose(sum(w[e] for e in topo.edges), best, rel_tol=1e-12, abs_tol=1e-12)


@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_default_topology_tree_property(L, seed):
    pts = np.random.default_rng(seed).normal(size=(L, 2))
    topo = default_topology(pts)
    assert len(topo.edges) == L - 1
    assert _acyclic_connected(topo.edges, L)


def test_delaunay_topology_contains_mst():
    pts = np.random.default_rng(4).uniform(0, 100, (20, 2))
    d = delaunay_topology(pts)
    d.validate(20)
    assert set(default_topology(pts).edges) <= set(d.edges)
    # collinear input falls back to the tree
    assert delaunay_topology([[0, 0], [1, 0], [2, 0]]).edges == ((0, 1), (1, 2))


@pytest.mark.parametrize("dof,loc,scale", [(1.0, 0.0, 1.0), (5.0, 30.0, 2.0), (60.0, -3.0, 0.2)])
def test_t_logpdf_matches_scipy(dof, loc, scale):
    x = np.linspace(-20, 50, 41)
    np.testing.assert_allclose(t_logpdf(x, dof, loc, scale), sps.t.logpdf(x, dof, loc, scale), rtol=1e-12, atol=1e-12)


def test_t_pdf_mode_value():
    assert math.isclose(float(t_pdf(30.0, 5, 30.0, 2.0)), 0.18980334491124, rel_tol=1e-10)


def test_fit_t_recovers_known_law():
    x = sps.t.rvs(5, loc=30, scale=2, size=10_000, random_state=np.random.default_rng(7))
    dof, loc, scale = fit_t(x)
    assert abs(dof - 5) < 0.5 and abs(loc - 30) < 3 and abs(scale - 2) < 0.2


def test_fit_t_is_a_likelihood_maximum():
    x = sps.t.rvs(3, loc=10, scale=1.5, size=2000, random_state=np.random.default_rng(8))
    ours = fit_t(x)
    ll_ours = t_logpdf(x, *ours).sum()
    # scipy's generic fitter is an independent route; it should never do better
    assert ll_ours >= sps.t.logpdf(x, *sps.t.fit(x)).sum() - 1e-6
    # a direct simplex search started at our answer finds no better point
    nll = lambda p: -sps.t.logpdf(x, p[0], p[1], abs(p[2])).sum()
    res = optimize.minimize(nll, ours, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10})
    # the fit stops at a relative log-likelihood change of 1e-8
    assert -res.fun <= ll_ours + 1e-7 * abs(ll_ours)
    np.testing.assert_allclose(ours, [3, 10, 1.5], rtol=0.1)


def test_fit_t_degenerate_and_bounds():
    assert fit_t([4.0, 4.0, 4.0]) == (100.0, 4.0, 1e-3)
    with pytest.raises(ValueError):
        fit_t([1.0, 2.0])
    # light-tailed data: dof runs into the upper bound and is reported as exactly 100
    x = np.random.default_rng(1).uniform(4, 6, 2000)
    assert fit_t(x)[0] == 100.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 4.0))
def test_mle_dominates_moment_matched_normal(seed, dof):
    x = sps.t.rvs(dof, loc=20, scale=1.0, size=300, random_state=np.random.default_rng(seed))
    params = fit_t(x)
    assert t_logpdf(x, *params).sum() >= sps.norm.logpdf(x, x.mean(), x.std()).sum()


def test_fit_stats_identical_shapes():
    s = Shape(np.array([[0.0, 0.0], [50.0, 0.0], [20.0, -30.0]]))
    stats = fit_stats([s] * 10)
    np.testing.assert_array_equal(stats.landmark_means, s.points)
    for e in stats.edge_stats:
        i, j = e.edge
        assert math.isclose(e.mean_distance, float(np.linalg.norm(s.points[i] - s.points[j])), rel_tol=1e-15)
        assert e.t_scale == 1e-3
    assert stats.ssm.t == 0


def test_mean_distance_is_arithmetic_mean():
    shapes = [Shape(np.array([[0.0, 0.0], [d, 0.0]])) for d in (10.0, 20.0, 10.0, 20.0)]
    stats = fit_stats(shapes)
    assert stats.edge(0, 1).mean_distance == 15.0
    with pytest.raises(ValueError):
        fit_stats(shapes[:2])


def test_fit_stats_permutation_invariant(fixture_training):
    shapes = fixture_training[:30]
    a = fit_stats(shapes)
    b = fit_stats(shapes[::-1])
    assert a.topology == b.topology
    np.testing.assert_allclose(a.landmark_means, b.landmark_means, rtol=1e-12)
    assert a.edge_stats == b.edge_stats


def test_stats_save_load_roundtrip(tmp_path, fixture_stats):
    save_stats(tmp_path / "s.txt", fixture_stats)
    back = load_stats(tmp_path / "s.txt")
    assert back == fixture_stats
    assert (tmp_path / "s.txt").read_text().startswith("landmark-gate-stats v1\n")


def test_stats_load_errors(tmp_path):
    shapes = [Shape(np.array([[0.0, 0.0], [d, 0.0], [d, 5.0]])) for d in (10.0, 11.0, 12.0)]
    save_stats(tmp_path / "s.txt", fit_stats(shapes))
    text = (tmp_path / "s.txt").read_text()

    (tmp_path / "bad.txt").write_text(text.replace("v1", "v9", 1))
    with pytest.raises(UnsupportedFormat):
        load_stats(tmp_path / "bad.txt")

    (tmp_path / "short.txt").write_text(text[: len(text) // 2])
    with pytest.raises(TruncatedFile):
        load_stats(tmp_path / "short.txt")

    import json

    head, body = text.split("\n", 1)
    doc = json.loads(body)
    doc["edge_stats"] = doc["edge_stats"][:-1]
    (tmp_path / "schema.txt").write_text(head + "\n" + json.dumps(doc))
    with pytest.raises(SchemaViolation):
        load_stats(tmp_path / "schema.txt")


def test_train_stats_schema():
    topo = Topology(((0, 1),))
    e = EdgeStats((0, 1), 5.0, 10.0, 1.0, 10.0)
    TrainStats(2, np.zeros((2, 2)), (e,), topo)
    with pytest.raises(SchemaViolation):
        TrainStats(3, np.zeros((3, 2)), (e,), topo)
    with pytest.raises(SchemaViolation):
        TrainStats(2, np.zeros((2, 2)), (), topo)
    with pytest.raises(ValueError):
        EdgeStats((0, 1), 5.0, 10.0, 0.0, 10.0)


def test_fit_edge():
    e = fit_edge([9.0, 10.0, 11.0, 10.0], (2, 5))
    assert e.edge == (2, 5) and e.mean_distance == 10.0 and e.reference_distance == 10.0
    assert math.isclose(float(e.pdf(e.t_loc)), float(t_pdf(e.t_loc, e.t_dof, e.t_loc, e.t_scale)))
    assert isinstance(NormalizationSpec(), NormalizationSpec)
