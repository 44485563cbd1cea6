"""Weighted Erdos-Renyi graphs, minimal paths and near-optimal path enumeration.

Vertices are 1-based in every public function (vertex 1 is the source and
vertex ``n`` the target); arrays inside :class:`WeightedGraph` are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .params import LimitParams, ScalingSchedule, k_n
from .weights import FiniteSupport, WeightModel, detect_span

__all__ = [
    "EnumerationBudgetError",
    "WeightedGraph",
    "PathRecord",
    "PointSample",
    "MinRecord",
    "generate",
    "graph_from_edges",
    "min_paths",
    "enumerate_paths",
    "point_process",
    "point_coords",
    "crosses",
    "uncrossed_filter",
    "dump_graph",
    "load_graph",
]

DEFAULT_BUDGET = 10**8


class EnumerationBudgetError(RuntimeError):
    """Path enumeration exceeded its node-expansion budget."""


@dataclass
class WeightedGraph:
    """Undirected simple graph on ``{1..n}`` stored as an edge list.

    ``units`` holds the weights as integer multiples of ``span`` for
    lattice weight laws, so path weights can be compared exactly.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    units: Optional[np.ndarray] = None
    span: Optional[float] = None
    _csr: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=float)
        if np.any(self.src == self.dst):
            raise ValueError("self-loops are not allowed")
        if np.any(self.weight < 0):
            raise ValueError("edge weights must be non-negative")
        lo, hi = np.minimum(self.src, self.dst), np.maximum(self.src, self.dst)
        if len(np.unique(lo * self.n + hi)) != len(lo):
            raise ValueError("multi-edges are not allowed")

    @property
    def m(self) -> int:
        return len(self.src)

    @property
    def lattice(self) -> bool:
        return self.units is not None

    def csr(self) -> sp.csr_matrix:
        """Symmetric adjacency; explicit zeros are kept as zero-weight edges."""
        if self._csr is None:
            data = self.units.astype(float) if self.lattice else self.weight
            rows = np.concatenate([self.src, self.dst])
            cols = np.concatenate([self.dst, self.src])
            self._csr = sp.csr_matrix(
                (np.concatenate([data, data]), (rows, cols)), shape=(self.n, self.n)
            )
        return self._csr

    def neighbors(self, v: int) -> list[tuple[int, float]]:
        a = self.csr()
        lo, hi = a.indptr[v - 1], a.indptr[v]
        scale = self.span if self.lattice else 1.0
        return [(int(j) + 1, float(x) * scale) for j, x in zip(a.indices[lo:hi], a.data[lo:hi])]


@dataclass(frozen=True)
class PathRecord:
    vertices: tuple
    H: int
    L: float
    units: Optional[int] = None


@dataclass(frozen=True)
class PointSample:
    z: float
    u: float


@dataclass(frozen=True)
class MinRecord:
    status: str
    L_min: float
    P_min: Optional[int] = None
    hopcounts: tuple = ()

    @property
    def connected(self) -> bool:
        return self.status == "connected"


def _row_starts(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.int64)
    return i * (2 * n - i - 1) // 2


def generate(n: int, lam: float, model: WeightModel, rng: np.random.Generator) -> WeightedGraph:
    """Sample ``G(n, lam/n)`` with i.i.d. weights from ``model``.

    Edges are located by geometric skipping over the ``n(n-1)/2`` vertex
    pairs, so the cost is proportional to the number of edges.
    """
    n = int(n)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if lam > n:
        raise ValueError(f"edge probability lambda/n = {lam}/{n} exceeds 1")
    p = lam / n
    n_pairs = n * (n - 1) // 2
    if p >= 1.0:
        idx = np.arange(n_pairs, dtype=np.int64)
    elif p <= 0.0:
        idx = np.zeros(0, dtype=np.int64)
    else:
        chunk = int(n_pairs * p + 6 * math.sqrt(n_pairs * p) + 16)
        parts, last = [], -1
        while last < n_pairs:
            pos = last + np.cumsum(rng.geometric(p, size=chunk))
            parts.append(pos)
            last = int(pos[-1])
        idx = np.concatenate(parts)
        idx = idx[idx < n_pairs]
    starts = _row_starts(n)
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1

    span = detect_span(model)
    if span is not None and isinstance(model, FiniteSupport):
        units = model.sample_units(rng, span, size=len(idx))
        weight = units * span
    else:
        units = None
        weight = np.asarray(model.sample(rng, size=len(idx)), dtype=float)
    return WeightedGraph(n=n, src=i, dst=j, weight=weight, units=units, span=span)


def graph_from_edges(
    n: int, edges: Iterable[tuple], span: Optional[float] = None
) -> WeightedGraph:
    """Build a graph from ``(u, v, weight)`` triples with 1-based vertices."""
    edges = list(edges)
    src = np.array([e[0] - 1 for e in edges], dtype=np.int64)
    dst = np.array([e[1] - 1 for e in edges], dtype=np.int64)
    w = np.array([e[2] for e in edges], dtype=float)
    units = None
    if span is not None:
        units = np.rint(w / span).astype(np.int64)
        if np.any(np.abs(units * span - w) > 1e-9 * np.maximum(1.0, w)):
            raise ValueError(f"edge weights are not multiples of span {span}")
    return WeightedGraph(n=n, src=src, dst=dst, weight=w, units=units, span=span)


def _distances(graph: WeightedGraph):
    """Weighted and hop distances from source (row 0) and target (row 1)."""
    a = graph.csr()
    ends = [0, graph.n - 1]
    d = dijkstra(a, directed=True, indices=ends)
    h = dijkstra(a, directed=True, indices=ends, unweighted=True)
    return d, h


class _Enumerator:
    """Depth-first enumeration of simple 1->n paths under weight and hop caps."""

    def __init__(self, graph: WeightedGraph, budget: int = DEFAULT_BUDGET):
        self.graph = graph
        self.budget = budget
        self.d, self.h = _distances(graph)

    def run(self, w_cap, h_cap: int, strict: bool = True) -> list[PathRecord]:
        g = self.graph
        n = g.n
        d_s, d_t = self.d
        h_s, h_t = self.h
        if g.lattice:
            slack = 0.5
        else:
            slack = 1e-9 * max(1.0, abs(w_cap))
        cand = (d_s + d_t <= w_cap + slack) & (h_s + h_t <= h_cap)
        if not cand[0] or not cand[n - 1]:
            return []
        a = g.csr()
        vs = np.flatnonzero(cand)
        adj: dict[int, list] = {}
        for v in vs:
            lo, hi = a.indptr[v], a.indptr[v + 1]
            nb = a.indices[lo:hi]
            keep = cand[nb]
            if g.lattice:
                ws = a.data[lo:hi][keep].astype(np.int64).tolist()
            else:
                ws = a.data[lo:hi][keep].tolist()
            adj[int(v)] = list(zip(nb[keep].tolist(), ws))
        dt = d_t.tolist()
        ht = h_t.tolist()
        target = n - 1
        out: list[PathRecord] = []
        expansions = 0
        path = [0]
        wsum = [0]
        onpath = {0}
        stack = [iter(adj[0])]
        while stack:
            it = stack[-1]
            advanced = False
            for v, w in it:
                if v in onpath:
                    continue
                nw = wsum[-1] + w
                nh = len(path)
                if nw + dt[v] > w_cap + slack or nh + ht[v] > h_cap:
                    continue
                expansions += 1
                if expansions > self.budget:
                    raise EnumerationBudgetError(
                        f"path enumeration exceeded {self.budget} node expansions"
                    )
                if v == target:
                    if nw <= w_cap or (not strict and nw <= w_cap + slack):
                        verts = tuple(x + 1 for x in path) + (n,)
                        if g.lattice:
                            out.append(PathRecord(verts, nh, nw * g.span, int(nw)))
                        else:
                            out.append(PathRecord(verts, nh, float(nw)))
                    continue
                path.append(v)
                wsum.append(nw)
                onpath.add(v)
                stack.append(iter(adj[v]))
                advanced = True
                break
            if not advanced:
                stack.pop()
                onpath.discard(path.pop())
                wsum.pop()
        return out


def _weight_cap(graph: WeightedGraph, threshold: float):
    if graph.lattice:
        q = threshold / graph.span
        k = round(q)
        return int(k) if abs(q - k) <= 1e-9 * max(1.0, abs(q)) else math.floor(q)
    return float(threshold)


def enumerate_paths(
    graph: WeightedGraph,
    weight_threshold: float,
    hop_threshold: int,
    budget: int = DEFAULT_BUDGET,
    _enum: Optional[_Enumerator] = None,
) -> list[PathRecord]:
    """All simple paths from 1 to n with ``L <= weight_threshold`` and ``H <= hop_threshold``.

    Partial paths are pruned with two admissible bounds: the weighted
    distance to the target and the hop distance to the target.
    """
    if math.isnan(weight_threshold) or weight_threshold == math.inf:
        raise ValueError("weight_threshold must be finite")
    if weight_threshold < 0 or hop_threshold < 1:
        return []
    hop_threshold = min(int(hop_threshold), graph.n - 1)
    enum = _enum or _Enumerator(graph, budget)
    return enum.run(_weight_cap(graph, weight_threshold), hop_threshold)


def min_paths(graph: WeightedGraph, budget: int = DEFAULT_BUDGET, _enum=None) -> MinRecord:
    """Minimal total weight, number of minimizers and their sorted hopcounts."""
    enum = _enum or _Enumerator(graph, budget)
    d = enum.d[1][0]
    if not math.isfinite(d):
        return MinRecord(status="disconnected", L_min=math.inf)
    if graph.lattice:
        paths = enum.run(int(round(d)), graph.n - 1)
        best = min(p.units for p in paths)
        tied = [p for p in paths if p.units == best]
    else:
        paths = enum.run(float(d), graph.n - 1, strict=False)
        best = min(p.L for p in paths)
        tied = [p for p in paths if p.L == best]
    return MinRecord(
        status="connected",
        L_min=tied[0].L,
        P_min=len(tied),
        hopcounts=tuple(sorted(p.H for p in tied)),
    )


def point_coords(H, L, sched: ScalingSchedule, params: LimitParams):
    """Map hopcounts and weights to the centred/scaled coordinates ``(z, u)``."""
    log_n = math.log(sched.n)
    z = (np.asarray(H, dtype=float) - params.gamma * log_n) / math.sqrt(params.beta * log_n)
    u = np.asarray(L, dtype=float) - sched.rho_n
    return z, u


def point_process(
    paths: Sequence[PathRecord], sched: ScalingSchedule, params: LimitParams
) -> list[PointSample]:
    if not paths:
        return []
    z, u = point_coords([p.H for p in paths], [p.L for p in paths], sched, params)
    return [PointSample(float(a), float(b)) for a, b in zip(z, u)]


def crosses(p1, p2) -> bool:
    """Whether two 1->n paths share a maximal joint segment avoiding both endpoints.

    Equivalently: some shared vertex other than the endpoints is reached
    along different prefixes and left along different suffixes.
    """
    a = tuple(getattr(p1, "vertices", p1))
    b = tuple(getattr(p2, "vertices", p2))
    if a == b:
        raise ValueError("crosses() needs two distinct paths")
    cp = 0
    while cp < min(len(a), len(b)) and a[cp] == b[cp]:
        cp += 1
    cs = 0
    while cs < min(len(a), len(b)) and a[-1 - cs] == b[-1 - cs]:
        cs += 1
    pos_b = {v: j for j, v in enumerate(b)}
    for i in range(1, len(a) - 1):
        j = pos_b.get(a[i])
        if j is None or j == 0 or j == len(b) - 1:
            continue
        same_prefix = i == j and i < cp
        ra, rb = len(a) - 1 - i, len(b) - 1 - j
        same_suffix = ra == rb and ra < cs
        if not same_prefix and not same_suffix:
            return True
    return False


def uncrossed_filter(
    paths: Sequence[PathRecord],
    a: float,
    w: float,
    sched: ScalingSchedule,
    params: LimitParams,
) -> list[PathRecord]:
    """Keep the paths not crossed by any other path of the ``(a, w)`` window.

    The window holds paths with ``H <= k_n(a)`` and ``L <= log(n)/alpha + w``;
    ``paths`` must contain every such path.
    """
    h_cap = k_n(params, sched.n, a)
    l_cap = math.log(sched.n) / params.alpha + w
    tol = 1e-9 * max(1.0, abs(l_cap))
    window = [q for q in paths if q.H <= h_cap and q.L <= l_cap + tol]
    by_vertex: dict[int, list[int]] = {}
    for idx, q in enumerate(window):
        for v in q.vertices[1:-1]:
            by_vertex.setdefault(v, []).append(idx)
    kept = []
    for p in paths:
        others = set()
        for v in p.vertices[1:-1]:
            others.update(by_vertex.get(v, ()))
        if not any(window[i].vertices != p.vertices and crosses(p, window[i]) for i in others):
            kept.append(p)
    return kept


def dump_graph(graph: WeightedGraph, path) -> None:
    """Write the plain edge-list format: ``n m`` then ``u v weight`` per line."""
    with open(path, "w") as fh:
        fh.write(f"{graph.n} {graph.m}\n")
        for u, v, w in zip(graph.src, graph.dst, graph.weight):
            fh.write(f"{u + 1} {v + 1} {w:.17g}\n")


def load_graph(path, span: Optional[float] = None) -> WeightedGraph:
    with open(path) as fh:
        n, m = (int(x) for x in fh.readline().split())
        edges = []
        for _ in range(m):
            u, v, w = fh.readline().split()
            edges.append((int(u), int(v), float(w)))
    return graph_from_edges(n, edges, span=span)
