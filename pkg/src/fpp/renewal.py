"""Exponentially weighted renewal function ``V(x) = sum_l lam^l P(S_l <= x)``.

``S_l`` is a sum of ``l`` i.i.d. edge weights (``S_0 = 0``). ``V`` grows like
``C e^{alpha x}`` and its limiting ratio fixes every intensity constant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np
from scipy.special import gammainc

from .params import LimitParams, k_n, schedule
from .weights import Exponential, FiniteSupport, WeightModel, detect_span

__all__ = [
    "RenewalEval",
    "V",
    "partial_sum_cdf",
    "renewal_limit",
    "uniform_bound_check",
    "ratio_table",
    "write_ratio_table",
    "finite_n_first_moment",
]

TRUNC_RTOL = 1e-12
METHODS = ("closed_form", "lattice_dp", "monte_carlo")


@dataclass(frozen=True)
class RenewalEval:
    x: float
    value: float
    method: str
    stderr: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if (self.stderr is not None) != (self.method == "monte_carlo"):
            raise ValueError("stderr is reported exactly for Monte Carlo evaluations")


def _check_malthusian(model, lam, alpha):
    resid = abs(lam * model.transform(alpha, 0) - 1.0)
    if resid > 1e-9:
        raise ValueError(f"lambda*R(alpha) = 1 violated (residual {resid:.3g})")


def _tail_terms(model, lam, alpha, x, value):
    """Number of ``l`` terms after which the 2*alpha-tilt bound drops below ``TRUNC_RTOL*value``.

    ``lam^l P(S_l <= x) <= e^{2 alpha x} q^l`` with ``q = lam R(2 alpha) < 1``.
    """
    q = lam * model.transform(2 * alpha, 0)
    target = TRUNC_RTOL * max(value, 1.0) * (1 - q)
    # e^{2 alpha x} q^(L+1) <= target
    return max(0, math.ceil((math.log(target) - 2 * alpha * x) / math.log(q)))


def _lattice_units(model: FiniteSupport):
    span = detect_span(model)
    units = np.rint(model.values / span).astype(np.int64)
    return span, units


def _lattice_dp(model, lam, alpha, x, exact=False):
    span, units = _lattice_units(model)
    top = int(math.floor(x / span + 1e-9))
    if exact:
        probs = [Fraction(p).limit_denominator(10**12) for p in model.probs]
        lam_f = Fraction(lam).limit_denominator(10**12)
        zero = Fraction(0)
    else:
        probs = list(model.probs)
        lam_f = lam
        zero = 0.0
    dist = [zero] * (top + 1)
    dist[0] = zero + 1
    total = zero + 1
    weight = zero + 1
    l_cap = _tail_terms(model, lam, alpha, x, math.exp(alpha * x))
    ell = 0
    while True:
        ell += 1
        nxt = [zero] * (top + 1)
        for u, p in zip(units, probs):
            u = int(u)
            for j in range(top + 1 - u):
                if dist[j]:
                    nxt[j + u] += p * dist[j]
        dist = nxt
        weight *= lam_f
        mass = sum(dist)
        if mass == 0:
            break
        total += weight * mass
        if ell >= l_cap:
            break
    return total


def _closed_form_exponential(model: Exponential, lam, x):
    r = model.rate
    return 1.0 + lam / (lam - 1.0) * math.expm1(r * (lam - 1.0) * x)


def _monte_carlo(model, lam, alpha, x, n_walks, rng, batch=200_000):
    # per walk: Y = sum_{l <= N_x} lam^l with N_x the last index with S_l <= x
    l_cap = _tail_terms(model, lam, alpha, x, math.exp(alpha * x))
    s1 = 0.0
    s2 = 0.0
    done = 0
    while done < n_walks:
        m = min(batch, n_walks - done)
        s = np.zeros(m)
        y = np.ones(m)
        alive = np.ones(m, dtype=bool)
        w = 1.0
        for _ in range(l_cap):
            idx = np.flatnonzero(alive)
            if len(idx) == 0:
                break
            s[idx] += model.sample(rng, size=len(idx))
            w *= lam
            ok = s[idx] <= x
            y[idx[ok]] += w
            alive[idx[~ok]] = False
        s1 += float(y.sum())
        s2 += float((y * y).sum())
        done += m
    mean = s1 / n_walks
    var = max(s2 / n_walks - mean * mean, 0.0)
    return mean, math.sqrt(var / max(n_walks - 1, 1))


def V(
    model: WeightModel,
    lam: float,
    alpha: float,
    x: float,
    method: str = "auto",
    n_walks: int = 10**6,
    rng: Optional[np.random.Generator] = None,
    exact: bool = False,
) -> RenewalEval:
    """Evaluate ``V(x)``.

    ``auto`` picks the closed form for exponential weights, the lattice DP
    for finitely supported weights and Monte Carlo otherwise. ``exact=True``
    runs the lattice DP in rational arithmetic.
    """
    if not x >= 0:
        raise ValueError(f"V(x) needs x >= 0, got {x}")
    _check_malthusian(model, lam, alpha)
    if method == "auto":
        if isinstance(model, Exponential):
            method = "closed_form"
        elif isinstance(model, FiniteSupport):
            method = "lattice_dp"
        else:
            method = "monte_carlo"
    if method == "closed_form":
        if not isinstance(model, Exponential):
            raise ValueError("closed form is available for exponential weights only")
        return RenewalEval(x, _closed_form_exponential(model, lam, x), method)
    if method == "lattice_dp":
        if not isinstance(model, FiniteSupport):
            raise ValueError("lattice DP needs finitely supported weights")
        return RenewalEval(x, float(_lattice_dp(model, lam, alpha, x, exact)), method)
    if method == "monte_carlo":
        rng = rng if rng is not None else np.random.default_rng(0)
        mean, se = _monte_carlo(model, lam, alpha, x, n_walks, rng)
        return RenewalEval(x, mean, method, se)
    raise ValueError(f"unknown method {method!r}")


def partial_sum_cdf(
    model: WeightModel, x: float, l_max: int, rng: Optional[np.random.Generator] = None, n_walks: int = 10**6
) -> np.ndarray:
    """``P(S_l <= x)`` for ``l = 0..l_max``.

    Exact for exponential (gamma cdf) and finitely supported laws (lattice
    convolution); Monte Carlo for the rest.
    """
    ells = np.arange(l_max + 1)
    if x < 0:
        return np.zeros(l_max + 1)
    if isinstance(model, Exponential):
        out = np.ones(l_max + 1)
        out[1:] = gammainc(ells[1:], model.rate * x)
        return out
    if isinstance(model, FiniteSupport):
        span, units = _lattice_units(model)
        top = int(math.floor(x / span + 1e-9))
        dist = np.zeros(top + 1)
        dist[0] = 1.0
        out = np.empty(l_max + 1)
        out[0] = 1.0
        for ell in range(1, l_max + 1):
            nxt = np.zeros(top + 1)
            for u, p in zip(units, model.probs):
                if u <= top:
                    nxt[u:] += p * dist[: top + 1 - u]
            dist = nxt
            out[ell] = dist.sum()
        return out
    rng = rng if rng is not None else np.random.default_rng(0)
    s = np.cumsum(model.sample(rng, size=(n_walks, l_max)), axis=1)
    out = np.ones(l_max + 1)
    out[1:] = (s <= x).mean(axis=0)
    return out


def renewal_limit(params: LimitParams) -> float:
    """``lim V(x) e^{-alpha x}``; along the lattice for arithmetic weights."""
    if params.span is None:
        return 1.0 / (params.alpha * params.nu_bar)
    m = params.span
    return m / (-math.expm1(-params.alpha * m) * params.nu_bar)


def uniform_bound_check(model: WeightModel, lam: float, alpha: float, grid: Iterable[float], **kwargs) -> float:
    """Empirical constant ``max_x (V(x) - 1) e^{-alpha x}`` over ``grid``."""
    best = 0.0
    for x in grid:
        ev = V(model, lam, alpha, float(x), **kwargs)
        best = max(best, (ev.value - 1.0) * math.exp(-alpha * float(x)))
    return best


def ratio_table(model: WeightModel, lam: float, alpha: float, xs: Iterable[float], **kwargs) -> list[dict]:
    rows = []
    for x in xs:
        ev = V(model, lam, alpha, float(x), **kwargs)
        rows.append(
            {"x": ev.x, "V": ev.value, "ratio": ev.value * math.exp(-alpha * ev.x), "method": ev.method, "stderr": ev.stderr}
        )
    return rows


def write_ratio_table(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "V", "ratio", "method", "stderr"])
        for r in rows:
            w.writerow([repr(r["x"]), repr(r["V"]), repr(r["ratio"]), r["method"], "" if r["stderr"] is None else repr(r["stderr"])])


def finite_n_first_moment(model: WeightModel, params: LimitParams, n: int, z: float, u: float) -> float:
    """Exact ``tau_n E[#paths 1->n with hopcount <= k_n(z), weight <= rho_n + u]`` in ``G(n, lam/n)``.

    A path with ``l`` edges uses ``l-1`` distinct interior vertices out of
    ``n-2``; each edge is present with probability ``lam/n``.
    """
    sched = schedule(params, n)
    x = sched.rho_n + u
    if x < 0:
        return 0.0
    # the falling-factorial factor is <= 1, so the renewal tail bound also caps this sum
    top = min(k_n(params, n, z), n - 1, _tail_terms(model, params.lam, params.alpha, x, 1.0) + 1)
    if top < 1:
        return 0.0
    cdf = partial_sum_cdf(model, x, top)
    ells = np.arange(1, top + 1)
    # log of (n-2)_(l-1) / n^(l-1)
    falling = np.concatenate([[0.0], np.cumsum(np.log1p(-(np.arange(1, top) + 1) / n))])
    with np.errstate(divide="ignore"):
        log_terms = falling + ells * math.log(params.lam) - math.log(n) + np.log(cdf[1:])
    return float(sched.tau_n * np.sum(np.exp(log_terms)))
