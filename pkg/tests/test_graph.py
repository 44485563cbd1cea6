import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpp.acceptance import crossing_fixtures
from fpp.graph import (
    EnumerationBudgetError,
    PathRecord,
    crosses,
    dump_graph,
    enumerate_paths,
    generate,
    graph_from_edges,
    load_graph,
    min_paths,
    point_coords,
    point_process,
    uncrossed_filter,
)
from fpp.params import build_params, schedule
from fpp.weights import Exponential, FiniteSupport, ZeroMix

EXP = Exponential(1.0)
TWO_POINT = FiniteSupport(((1, 0.5), (2, 0.5)))


def diamond(span=None):
    # 1-2-4 and 1-3-4, both of weight 2, plus a heavier chord 1-4
    return graph_from_edges(4, [(1, 2, 1.0), (2, 4, 1.0), (1, 3, 1.0), (3, 4, 1.0), (1, 4, 3.0)], span=span)


def nx_paths(g):
    G = nx.Graph()
    G.add_nodes_from(range(1, g.n + 1))
    w = g.units if g.lattice else g.weight
    for a, b, x in zip(g.src, g.dst, w):
        G.add_edge(int(a) + 1, int(b) + 1, w=x)
    if g.n == 1:
        return []
    out = []
    for p in nx.all_simple_paths(G, 1, g.n):
        total = 0
        for a, b in zip(p, p[1:]):
            total = total + G[a][b]["w"]
        out.append((tuple(p), total))
    return out


@pytest.mark.parametrize("span", [None, 1.0])
def test_diamond_fixture(span):
    g = diamond(span)
    paths = enumerate_paths(g, 2.0, 10)
    assert sorted(p.vertices for p in paths) == [(1, 2, 4), (1, 3, 4)]
    assert all(p.H == 2 and p.L == 2.0 for p in paths)
    mr = min_paths(g)
    assert mr.connected and mr.P_min == 2 and mr.L_min == 2.0 and mr.hopcounts == (2, 2)
    assert len(enumerate_paths(g, 3.0, 10)) == 3
    assert len(enumerate_paths(g, 3.0, 1)) == 1
    assert enumerate_paths(g, -1.0, 10) == []


def test_disconnected():
    g = graph_from_edges(4, [(1, 2, 1.0), (3, 4, 1.0)])
    assert min_paths(g).status == "disconnected"
    assert min_paths(g).L_min == math.inf
    assert enumerate_paths(g, 100.0, 3) == []


def test_threshold_validation():
    g = diamond()
    with pytest.raises(ValueError):
        enumerate_paths(g, math.nan, 3)
    with pytest.raises(ValueError):
        enumerate_paths(g, math.inf, 3)


def test_graph_validation():
    with pytest.raises(ValueError):
        graph_from_edges(3, [(1, 1, 1.0)])
    with pytest.raises(ValueError):
        graph_from_edges(3, [(1, 2, 1.0), (2, 1, 2.0)])
    with pytest.raises(ValueError):
        graph_from_edges(3, [(1, 2, -1.0)])
    with pytest.raises(ValueError):
        graph_from_edges(3, [(1, 2, 1.5)], span=1.0)


def test_zero_weight_edges_are_edges():
    g = graph_from_edges(3, [(1, 2, 0.0), (2, 3, 0.0)])
    mr = min_paths(g)
    assert mr.connected and mr.L_min == 0.0 and mr.P_min == 1


def test_budget_exhaustion():
    # complete graph: many paths under a generous threshold
    n = 11
    edges = [(i, j, 1.0) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    g = graph_from_edges(n, edges)
    with pytest.raises(EnumerationBudgetError):
        enumerate_paths(g, 100.0, n - 1, budget=1000)


@pytest.mark.parametrize("model", [EXP, TWO_POINT, ZeroMix(0.3, Exponential(1.0))], ids=["exp", "lattice", "zeromix"])
def test_against_networkx_oracle(model):
    rng = np.random.default_rng(2024)
    for _ in range(170):
        n = int(rng.integers(2, 13))
        lam = float(rng.uniform(1.2, min(4.0, n)))
        g = generate(n, lam, model, rng)
        brute = nx_paths(g)
        mr = min_paths(g)
        span = g.span or 1.0
        if not brute:
            assert not mr.connected
            continue
        best = min(t for _, t in brute)
        tied = [p for p, t in brute if t == best]
        assert mr.connected
        assert mr.P_min == len(tied)
        assert mr.hopcounts == tuple(sorted(len(p) - 1 for p in tied))
        assert mr.L_min == pytest.approx(best * span, rel=1e-12, abs=1e-15)
        for t in sorted({t for _, t in brute})[:6]:
            for hop in (1, 2, n - 1):
                expect = {p for p, x in brute if x <= t and len(p) - 1 <= hop}
                got = enumerate_paths(g, t * span, hop)
                assert {p.vertices for p in got} == expect
                for p in got:
                    assert p.H == len(p.vertices) - 1


def test_generate_statistics():
    rng = np.random.default_rng(5)
    n, lam = 2000, 2.0
    m = [generate(n, lam, EXP, rng).m for _ in range(30)]
    expect = lam / n * n * (n - 1) / 2
    assert abs(np.mean(m) - expect) < 5 * math.sqrt(expect / 30)
    g = generate(n, lam, TWO_POINT, rng)
    assert g.lattice and set(np.unique(g.units)) <= {1, 2}
    with pytest.raises(ValueError):
        generate(3, 5.0, EXP, rng)


def test_generate_reproducible():
    a = generate(500, 2.0, EXP, np.random.default_rng(9))
    b = generate(500, 2.0, EXP, np.random.default_rng(9))
    assert np.array_equal(a.src, b.src) and np.array_equal(a.weight, b.weight)


def test_dump_load_roundtrip(tmp_path):
    g = generate(60, 3.0, EXP, np.random.default_rng(3))
    dump_graph(g, tmp_path / "g.txt")
    h = load_graph(tmp_path / "g.txt")
    assert h.n == g.n and np.array_equal(h.weight, g.weight)
    assert min_paths(h) == min_paths(g)


def test_point_coords():
    p = build_params(EXP, 2.0)
    s = schedule(p, 10_000)
    ln = math.log(10_000)
    z, u = point_coords([2 * ln], [ln - 1], s, p)
    assert z[0] == pytest.approx(0.0) and u[0] == pytest.approx(-1.0)
    pts = point_process([PathRecord((1, 2), 1, 3.0)], s, p)
    assert pts[0].u == pytest.approx(3.0 - ln)


def test_left_fixture_no_crossings():
    left = list(crossing_fixtures()["left"].values())
    for i, a in enumerate(left):
        for b in left[i + 1 :]:
            assert not crosses(a, b)


def test_right_fixture_lower_pair_crosses():
    r = crossing_fixtures()["right"]
    assert crosses(r["green"], r["red"])
    assert not crosses(r["green"], r["blue"])
    assert not crosses(r["blue"], r["red"])


def test_uncrossed_filter_on_fixture():
    p = build_params(EXP, 2.0)
    s = schedule(p, 16)
    right = crossing_fixtures()["right"]
    recs = [PathRecord(v, len(v) - 1, 0.1) for v in right.values()]
    assert [k.vertices for k in uncrossed_filter(recs, math.inf, 5.0, s, p)] == [right["blue"]]
    left = [PathRecord(v, len(v) - 1, 0.1) for v in crossing_fixtures()["left"].values()]
    assert uncrossed_filter(left, math.inf, 5.0, s, p) == left


def test_uncrossed_filter_ignores_paths_outside_window():
    p = build_params(EXP, 2.0)
    s = schedule(p, 16)
    right = crossing_fixtures()["right"]
    heavy_red = PathRecord(right["red"], 7, 100.0)
    recs = [PathRecord(right["green"], 8, 0.1), heavy_red]
    kept = uncrossed_filter(recs, math.inf, 5.0, s, p)
    assert PathRecord(right["green"], 8, 0.1) in kept


def test_crosses_identical_raises():
    with pytest.raises(ValueError):
        crosses((1, 2, 3), (1, 2, 3))


@st.composite
def path_pairs(draw):
    n = 9
    inner = list(range(2, n))

    def one():
        k = draw(st.integers(0, len(inner)))
        perm = draw(st.permutations(inner))
        return (1, *perm[:k], n)

    a, b = one(), one()
    return a, b


@settings(max_examples=300, deadline=None)
@given(path_pairs())
def test_crosses_symmetric_and_matches_segment_definition(pair):
    a, b = pair
    if a == b:
        return
    assert crosses(a, b) == crosses(b, a)
    assert crosses(a, b) == segment_crossing(a, b)


def segment_crossing(a, b):
    """Reference: a maximal joint segment (vertices consecutive in both paths) avoiding 1 and n."""
    pos_b = {v: j for j, v in enumerate(b)}
    n_end = a[-1]
    i = 0
    while i < len(a):
        if a[i] not in pos_b:
            i += 1
            continue
        # grow a joint run in either direction of b
        j = pos_b[a[i]]
        best = None
        for d in (1, -1):
            k = 0
            while i + k + 1 < len(a) and 0 <= j + d * (k + 1) < len(b) and a[i + k + 1] == b[j + d * (k + 1)]:
                k += 1
            if best is None or k > best[0]:
                best = (k, d)
        k, _ = best
        seg = a[i : i + k + 1]
        if 1 not in seg and n_end not in seg:
            return True
        i += k + 1
    return False
