"""The mean-one fixed point W of ``W = sum_{i<=D} exp(-alpha X_i) W_i``.

Three independent routes:

* samplers of the iteration ``W(1) = 1, W(k+1) = sum exp(-alpha X_i) W_i(k)``
  (an exact random-tree sampler and a population-dynamics sampler),
* a continuous-time Galton-Watson sampler (``N(t)/E[N(t)]``),
* exact moments, through the set-partition recursion for ``E[W^r]`` and,
  separately, through the marked-tree sums ``M^(r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator, Optional

import numpy as np

from .params import LimitParams, eta_lambda
from .weights import WeightModel, prob_zero

__all__ = [
    "BudgetError",
    "MomentTable",
    "MarkedTree",
    "eta_lambda",
    "set_partitions",
    "sample_W_fixed_point",
    "sample_W_branching",
    "moments_W",
    "moments_W_truncated",
    "M_r_recursive",
    "M_r_tree_sum",
    "iter_marked_trees",
    "moment_table",
    "sample_w_bank",
    "tail_quantile_growth",
    "save_bank",
    "load_bank",
]

R_MAX_LIMIT = 20
TREE_NODE_CAP = 5e7


class BudgetError(RuntimeError):
    """A simulation outgrew its configured population cap."""


@dataclass(frozen=True)
class MomentTable:
    r_max: int
    ew: tuple
    mr: tuple

    def to_dict(self) -> dict:
        return {"r_max": self.r_max, "E[W^r]": list(self.ew), "M^(r)": list(self.mr)}


# ---------------------------------------------------------------------------
# samplers


def _tree_draws(params, model, depth, size, rng):
    # exact: W(depth) is the discounted size of generation depth-1
    owner = np.arange(size)
    mass = np.ones(size)
    for _ in range(depth - 1):
        d = rng.poisson(params.lam, size=len(owner))
        owner = np.repeat(owner, d)
        mass = np.repeat(mass, d)
        if len(owner) == 0:
            break
        mass = mass * np.exp(-params.alpha * np.asarray(model.sample(rng, size=len(owner))))
    return np.bincount(owner, weights=mass, minlength=size)


def _pool_step(pool, params, model, size, rng):
    d = rng.poisson(params.lam, size=size)
    total = int(d.sum())
    picks = rng.integers(0, len(pool), size=total)
    contrib = np.exp(-params.alpha * np.asarray(model.sample(rng, size=total))) * pool[picks]
    return np.bincount(np.repeat(np.arange(size), d), weights=contrib, minlength=size)


def _pool_draws(params, model, depth, size, rng, pool_size):
    pool = np.ones(pool_size)
    for _ in range(depth - 2):
        pool = _pool_step(pool, params, model, pool_size, rng)
        mean = pool.mean()
        if mean > 0:
            # E[W(k)] = 1 exactly; rescaling stops the pool mean from random-walking
            pool /= mean
    return _pool_step(pool, params, model, size, rng)


def sample_W_fixed_point(
    params: LimitParams,
    model: WeightModel,
    depth: int,
    rng: np.random.Generator,
    size: Optional[int] = None,
    method: str = "auto",
    pool_size: int = 200_000,
):
    """Draws of ``W(depth)`` from the fixed-point iteration.

    ``method="tree"`` grows an independent Poisson tree per draw, truncated
    at ``depth`` with leaves valued 1; it is exact but its cost grows like
    ``lam**depth``. ``method="pool"`` runs population dynamics: generation
    ``k+1`` is built from uniform picks out of a pool approximating the law
    of ``W(k)``, rescaled to mean one at each level. ``"auto"`` uses the tree
    when its expected size stays below a few million nodes.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    n = 1 if size is None else int(size)
    if method == "auto":
        method = "tree" if n * params.lam ** (depth - 1) <= 4e6 else "pool"
    if depth == 1:
        out = np.ones(n)
    elif method == "tree":
        if n * params.lam ** (depth - 1) > TREE_NODE_CAP:
            raise BudgetError(f"expected tree size {n * params.lam ** (depth - 1):.3g} exceeds {TREE_NODE_CAP:.0e}; use method='pool'")
        out = _tree_draws(params, model, depth, n, rng)
    elif method == "pool":
        # a pool at least as large as the output keeps the draws nearly independent
        out = _pool_draws(params, model, depth, n, rng, max(pool_size, n, 1000))
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out[0]) if size is None else out


def _ctgw_alive(n_roots, root_birth_zero, model, lam, t, rng, cap):
    """Individuals alive at ``t`` per run of a continuous-time Galton-Watson process.

    Each individual lives an ``F``-distributed time and at death leaves
    ``Poisson(lam)`` children. With ``root_birth_zero`` the root has lifetime
    0, i.e. each run starts from ``Poisson(lam)`` fresh individuals at time 0.
    """
    runs = np.arange(n_roots)
    if root_birth_zero:
        d = rng.poisson(lam, size=n_roots)
        owner = np.repeat(runs, d)
    else:
        owner = runs.copy()
    birth = np.zeros(len(owner))
    alive = np.zeros(n_roots, dtype=np.int64)
    born = np.bincount(owner, minlength=n_roots)
    while len(owner):
        death = birth + np.asarray(model.sample(rng, size=len(owner)), dtype=float)
        still = death > t
        alive += np.bincount(owner[still], minlength=n_roots)
        gone = ~still
        owner, death = owner[gone], death[gone]
        k = rng.poisson(lam, size=len(owner))
        owner = np.repeat(owner, k)
        birth = np.repeat(death, k)
        born += np.bincount(owner, minlength=n_roots)
        if born.max(initial=0) > cap:
            raise BudgetError(f"branching population exceeded cap {cap} before t={t}")
    return alive


def sample_W_branching(
    params: LimitParams,
    model: WeightModel,
    t_horizon: float,
    pilot_reps: int,
    rng: np.random.Generator,
    size: Optional[int] = None,
    cap: int = 10**7,
):
    """Draws of ``W ~ N~(t) / (lam * E[N(t)])`` from the branching process.

    ``N~`` starts with a zero-lifetime ancestor, so ``N~(t)`` is a sum of
    ``D ~ Poisson(lam)`` independent copies of ``N(t)``. ``E[N(t)]`` is
    estimated once from ``pilot_reps`` runs started by a single individual.
    """
    if prob_zero(model) > 0:
        raise ValueError("the branching-process route needs P(X=0) = 0")
    if not t_horizon > 0:
        raise ValueError(f"t_horizon must be positive, got {t_horizon}")
    if pilot_reps < 1:
        raise ValueError("pilot_reps must be >= 1")
    pilot = _ctgw_alive(pilot_reps, False, model, params.lam, t_horizon, rng, cap)
    mean_n = pilot.mean()
    if mean_n == 0:
        raise RuntimeError("all pilot runs died out; increase pilot_reps")
    n = 1 if size is None else int(size)
    counts = _ctgw_alive(n, True, model, params.lam, t_horizon, rng, cap)
    out = counts / (params.lam * mean_n)
    return float(out[0]) if size is None else out


def sample_w_bank(
    params: LimitParams,
    model: WeightModel,
    pairs: int,
    rng: np.random.Generator,
    depth: int = 40,
    method: str = "auto",
    pool_size: int = 200_000,
) -> np.ndarray:
    """``(pairs, 2)`` array of independent ``(W1, W2)`` draws."""
    w = sample_W_fixed_point(params, model, depth, rng, size=2 * pairs, method=method, pool_size=pool_size)
    return w.reshape(pairs, 2)


def tail_quantile_growth(draws, q: float = 0.9999, sizes=(10**5, 10**6)) -> dict:
    """Heuristic check that the upper tail of W is light.

    If ``E[e^{tW}] < inf`` the ``q`` quantile of the first ``m`` draws grows at
    most like ``log m``; the ratio of the quantile increase to the increase of
    ``log m`` between the two sample sizes is reported, together with whether
    it stays below the quantile itself (sub-linear growth in ``log m``).
    """
    draws = np.asarray(draws, dtype=float)
    lo, hi = sizes
    if len(draws) < hi:
        raise ValueError(f"need at least {hi} draws")
    q_lo = float(np.quantile(draws[:lo], q))
    q_hi = float(np.quantile(draws[:hi], q))
    slope = (q_hi - q_lo) / math.log(hi / lo)
    return {"q": q, "quantile_small": q_lo, "quantile_large": q_hi, "slope_per_log_size": slope, "sublinear": slope < q_lo}


def save_bank(values: np.ndarray, path, fmt: Optional[str] = None) -> None:
    """Persist W draws as ``.npy`` (flat binary) or CSV with one value per line."""
    path = str(path)
    fmt = fmt or ("csv" if path.endswith(".csv") else "npy")
    values = np.asarray(values, dtype=float).ravel()
    if fmt == "npy":
        np.save(path, values)
    elif fmt == "csv":
        np.savetxt(path, values, fmt="%.17g")
    else:
        raise ValueError(f"unknown bank format {fmt!r}")


def load_bank(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, ndmin=1)


# ---------------------------------------------------------------------------
# moments through set partitions


def set_partitions(r: int) -> Iterator[list[list[int]]]:
    """All partitions of ``{0..r-1}`` via restricted growth strings."""
    if r == 0:
        yield []
        return
    a = [0] * r
    b = [1] * r  # b[i] = 1 + max(a[:i])
    while True:
        blocks: list[list[int]] = [[] for _ in range(max(a) + 1)]
        for i, x in enumerate(a):
            blocks[x].append(i)
        yield blocks
        i = r - 1
        while i > 0 and a[i] == b[i]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        for j in range(i + 1, r):
            a[j] = 0
            b[j] = max(b[i], a[i] + 1)


def _check_r(r_max: int) -> None:
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    if r_max > R_MAX_LIMIT:
        raise ValueError(f"r_max={r_max} refused: partitions of [r] blow up (limit {R_MAX_LIMIT})")


def moments_W(params: LimitParams, model: WeightModel, r_max: int) -> list[float]:
    """``E[W^1..W^r_max]`` from the partition recursion."""
    _check_r(r_max)
    c = [params.lam * model.transform(j * params.alpha, 0) for j in range(r_max + 1)]
    ew = [1.0, 1.0]
    for r in range(2, r_max + 1):
        total = 0.0
        for blocks in set_partitions(r):
            if len(blocks) == 1:
                continue
            prod = 1.0
            for b in blocks:
                prod *= c[len(b)] * ew[len(b)]
            total += prod
        ew.append(total / (1.0 - c[r]))
    return ew[1:]


def moments_W_truncated(params: LimitParams, model: WeightModel, r_max: int, depth: int) -> list[float]:
    """Exact ``E[W(depth)^r]`` for the truncated iteration started at ``W(1) = 1``."""
    _check_r(r_max)
    c = [params.lam * model.transform(j * params.alpha, 0) for j in range(r_max + 1)]
    parts = {r: [[len(b) for b in blocks] for blocks in set_partitions(r)] for r in range(1, r_max + 1)}
    cur = [1.0] * (r_max + 1)
    for _ in range(depth - 1):
        nxt = [1.0]
        for r in range(1, r_max + 1):
            nxt.append(sum(math.prod(c[s] * cur[s] for s in sizes) for sizes in parts[r]))
        cur = nxt
    return cur[1:]


def _partitions_recursive(items: tuple) -> Iterator[list[tuple]]:
    # first element either opens a new block or joins an existing one
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for part in _partitions_recursive(rest):
        yield [(head,)] + part
        for i in range(len(part)):
            yield part[:i] + [(head,) + part[i]] + part[i + 1 :]


def M_r_recursive(params: LimitParams, model: WeightModel, r_max: int) -> list[float]:
    """``M^(1..r_max)`` from the marked-tree recursion, ``M^(1) = 1``."""
    _check_r(r_max)
    lam, alpha = params.lam, params.alpha
    out = {1: 1.0}
    for r in range(2, r_max + 1):
        acc = 0.0
        for part in _partitions_recursive(tuple(range(r))):
            if len(part) == 1:
                continue
            term = 1.0
            for block in part:
                k = len(block)
                term *= lam * model.transform(alpha * k, 0) * out[k]
            acc += term
        out[r] = acc / (1.0 - lam * model.transform(alpha * r, 0))
    return [out[r] for r in range(1, r_max + 1)]


# ---------------------------------------------------------------------------
# marked trees


@dataclass
class MarkedTree:
    mark: frozenset
    children: list = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def nodes(self) -> Iterator["MarkedTree"]:
        yield self
        for c in self.children:
            yield from c.nodes()

    def is_valid(self) -> bool:
        if len(self.mark) < 2:
            return False
        seen: set = set()
        for c in self.children:
            if not c.mark <= self.mark or seen & c.mark:
                return False
            seen |= c.mark
        if any(c.mark == self.mark for c in self.children) and len(self.children) != 1:
            return False
        return all(c.is_valid() for c in self.children)

    def mark_counts(self) -> dict:
        """``N(T, I)``: number of non-root vertices carrying each mark ``I``."""
        counts: dict = {}
        for node in self.nodes():
            if node is not self:
                counts[node.mark] = counts.get(node.mark, 0) + 1
        return counts


def _child_families(mark: frozenset) -> list[tuple]:
    """Admissible child-mark sets below a vertex with mark ``mark``."""
    subs = [frozenset(s) for k in range(2, len(mark)) for s in combinations(sorted(mark), k)]
    fams: list[tuple] = [(), (mark,)]

    def extend(start, used, chosen):
        for i in range(start, len(subs)):
            s = subs[i]
            if s & used:
                continue
            fam = chosen + (s,)
            fams.append(fam)
            extend(i + 1, used | s, fam)

    extend(0, frozenset(), ())
    return fams


def iter_marked_trees(r: int, size_cap: int) -> Iterator[MarkedTree]:
    """Every tree of the marked family for ``[r]`` with at most ``size_cap`` vertices."""
    if r < 2:
        raise ValueError("marked trees need r >= 2")

    def grow(mark: frozenset, budget: int) -> Iterator[MarkedTree]:
        for fam in _child_families(mark):
            yield from attach(mark, list(fam), budget - 1, [])

    def attach(mark, fam, budget, done):
        if not fam:
            yield MarkedTree(mark, list(done))
            return
        first, rest = fam[0], fam[1:]
        if budget < 1 + len(rest):
            return
        for sub in grow(first, budget - len(rest)):
            yield from attach(mark, rest, budget - sub.size(), done + [sub])

    if size_cap < 1:
        return
    yield from grow(frozenset(range(1, r + 1)), size_cap)


def M_r_tree_sum(params: LimitParams, model: WeightModel, r: int, size_cap: int) -> float:
    """Truncated tree sum ``sum_{|T| <= size_cap} lam^(|T|-1) prod_I E[e^{-alpha|I|X}]^N(T,I)``.

    Trees are grouped by mark and vertex count: ``table(mark)[s]`` is the total
    weight of all trees rooted at a vertex with that mark having ``s`` vertices,
    where each non-root vertex with mark ``J`` carries ``lam E[exp(-alpha |J| X)]``.
    """
    if not 2 <= r <= 4:
        raise ValueError(f"tree sums are limited to 2 <= r <= 4, got {r}")
    if not 1 <= size_cap <= 12:
        raise ValueError(f"size_cap must be in [1, 12], got {size_cap}")
    lam, alpha = params.lam, params.alpha
    edge = {k: lam * model.transform(alpha * k, 0) for k in range(2, r + 1)}

    if size_cap == 1:
        return 1.0
    return _tree_sum_sizes(frozenset(range(1, r + 1)), size_cap, edge)


def _tree_sum_sizes(root: frozenset, size_cap: int, edge: dict) -> float:
    memo: dict = {}

    def table(mark: frozenset) -> list:
        if mark in memo:
            return memo[mark]
        w = [0.0] * (size_cap + 1)
        fams = _child_families(mark)
        proper = [f for f in fams if f != (mark,)]
        base = [0.0] * (size_cap + 1)
        for fam in proper:
            poly = [0.0] * (size_cap + 1)
            poly[1] = 1.0
            for child in fam:
                sub = table(child)
                fac = edge[len(child)]
                new = [0.0] * (size_cap + 1)
                for i, a in enumerate(poly):
                    if a:
                        for j in range(1, size_cap + 1 - i):
                            if sub[j]:
                                new[i + j] += a * fac * sub[j]
                poly = new
            base = [x + y for x, y in zip(base, poly)]
        # single child with the same mark: w[s] = base[s] + edge * w[s-1]
        fac = edge[len(mark)]
        for s in range(1, size_cap + 1):
            w[s] = base[s] + fac * w[s - 1]
        memo[mark] = w
        return w

    return math.fsum(table(root)[1:])


def moment_table(params: LimitParams, model: WeightModel, r_max: int) -> MomentTable:
    ew = moments_W(params, model, r_max)
    mr = M_r_recursive(params, model, r_max)
    return MomentTable(r_max=r_max, ew=tuple(ew), mr=tuple(mr))
