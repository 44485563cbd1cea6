"""Limit objects: intensity measures, Cox samples and minimal-path limit laws.

The limit of the rescaled point process of short paths is a Poisson process
with random intensity ``W1 W2 e^{alpha theta} Lambda`` where
``Lambda = P_N (x) K``: a standard Gaussian in the hopcount coordinate and
``K(du) = e^{alpha u} du / nu_bar`` in the weight coordinate (or its lattice
version ``(M/nu_bar) sum_j e^{alpha j M} delta_{jM}``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, ndtr
from scipy.stats import truncnorm

from .params import LimitParams, _lattice_floor

__all__ = [
    "IntensitySpec",
    "Window",
    "intensity_spec",
    "Phi",
    "lambda_mass",
    "lambda_window",
    "sample_cox",
    "cdf_joint_min",
    "pmf_arithmetic_min",
    "order_stat_prob",
    "factorial_moment_limit",
    "connect_prob_limit",
    "cdf_table",
    "pmf_table",
    "write_table",
]

LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class IntensitySpec:
    params: LimitParams
    span: Optional[float] = None
    theta: float = 0.0

    def __post_init__(self):
        if self.span is not None:
            if not self.span > 0:
                raise ValueError("span must be positive")
            if not (-self.span < self.theta <= 1e-12):
                raise ValueError(f"theta must lie in (-M, 0], got {self.theta}")
        elif self.theta != 0.0:
            raise ValueError("theta is only meaningful for lattice intensities")

    @property
    def kind(self) -> str:
        return "nonarithmetic" if self.span is None else "arithmetic"

    @property
    def scale(self) -> float:
        """``e^{alpha theta}``: finite-n shift of the lattice intensity."""
        return math.exp(self.params.alpha * self.theta)


@dataclass(frozen=True)
class Window:
    """Rectangle ``(z_lo, z_hi] x (u_lo, u_hi]`` in (standardized hopcount, weight offset)."""

    u_hi: float
    z_hi: float = math.inf
    z_lo: float = -math.inf
    u_lo: float = -math.inf

    def __post_init__(self):
        if not self.z_lo <= self.z_hi or not self.u_lo <= self.u_hi:
            raise ValueError("empty or inverted window")


def intensity_spec(params: LimitParams, theta: Optional[float] = None) -> IntensitySpec:
    if params.span is None:
        return IntensitySpec(params)
    return IntensitySpec(params, params.span, params.theta if theta is None else theta)


def Phi(z):
    return ndtr(z)


def _k_mass(spec: IntensitySpec, u: float) -> float:
    # K((-inf, u])
    p = spec.params
    if u == -math.inf:
        return 0.0
    if u == math.inf:
        return math.inf
    if spec.span is None:
        return math.exp(p.alpha * u) / (p.alpha * p.nu_bar)
    m = spec.span
    j = _lattice_floor(u / m)
    return m / (-math.expm1(-p.alpha * m)) * math.exp(p.alpha * m * j) / p.nu_bar


def lambda_mass(spec: IntensitySpec, z: float, u: float) -> float:
    """``Lambda((-inf, z] x (-inf, u])``."""
    return float(Phi(z)) * _k_mass(spec, u)


def lambda_window(spec: IntensitySpec, window: Window) -> float:
    pz = float(Phi(window.z_hi) - Phi(window.z_lo))
    if pz == 0.0:
        return 0.0
    return pz * (_k_mass(spec, window.u_hi) - _k_mass(spec, window.u_lo))


def _sample_u(spec: IntensitySpec, window: Window, size: int, rng) -> np.ndarray:
    a = spec.params.alpha
    if spec.span is None:
        # density proportional to e^{alpha u} on (u_lo, u_hi]
        width = window.u_hi - window.u_lo
        floor_mass = 0.0 if width == math.inf else math.exp(-a * width)
        v = rng.random(size)
        return window.u_hi + np.log(floor_mass + (1.0 - floor_mass) * v) / a
    m = spec.span
    j_hi = _lattice_floor(window.u_hi / m)
    r = math.exp(-a * m)
    if window.u_lo == -math.inf:
        r_k = 0.0
    else:
        r_k = r ** (j_hi - _lattice_floor(window.u_lo / m))
    v = rng.random(size)
    g = np.floor(np.log1p(-v * (1.0 - r_k)) / math.log(r)).astype(np.int64)
    return m * (j_hi - g).astype(float)


def sample_cox(spec: IntensitySpec, w1: float, w2: float, window: Window, rng: np.random.Generator) -> np.ndarray:
    """One realization restricted to ``window`` as an ``(count, 2)`` array of ``(z, u)``."""
    if window.u_hi == math.inf:
        raise ValueError("the limit intensity is infinite on windows unbounded above in u")
    if w1 < 0 or w2 < 0:
        raise ValueError("W values must be non-negative")
    mean = w1 * w2 * spec.scale * lambda_window(spec, window)
    count = int(rng.poisson(mean)) if mean > 0 else 0
    if count == 0:
        return np.empty((0, 2))
    z = truncnorm.rvs(window.z_lo, window.z_hi, size=count, random_state=rng)
    u = _sample_u(spec, window, count, rng)
    return np.column_stack([np.atleast_1d(z), u])


def _bank_products(w_bank) -> np.ndarray:
    w = np.asarray(w_bank, dtype=float)
    if w.ndim != 2 or w.shape[1] != 2:
        raise ValueError("W bank must be an (N, 2) array of independent pairs")
    return w[:, 0] * w[:, 1]


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def cdf_joint_min(
    spec: IntensitySpec, z: float, u: float, w_bank, conditional: bool = False, chunk: int = 1 << 18
) -> tuple[float, float]:
    """Limit of ``P(H_min standardized <= z, L_min - log(n)/alpha <= u)`` with its MC standard error.

    ``conditional=True`` gives the law given ``1`` and ``n`` connected, i.e.
    averages over bank pairs with ``W1 W2 > 0`` only.
    """
    if spec.span is not None:
        raise ValueError("lattice weights: use pmf_arithmetic_min")
    prod = _bank_products(w_bank)
    if conditional:
        prod = prod[prod > 0]
        if len(prod) == 0:
            raise ValueError("bank has no pairs with W1 W2 > 0")
    p = spec.params
    phi = float(Phi(z))
    if u == -math.inf or phi == 0.0:
        return 0.0, 0.0
    if u == math.inf:
        vals = (prod > 0).astype(float)
    else:
        c = math.exp(p.alpha * u) / (p.alpha * p.nu_bar)
        vals = np.empty(len(prod))
        for s in range(0, len(prod), chunk):
            vals[s : s + chunk] = -np.expm1(-c * prod[s : s + chunk])
    mean, se = _mean_se(vals)
    return phi * mean, phi * se


def order_stat_prob(z_vec: Sequence[float]) -> float:
    """``P(N_(1) <= z_1, ..., N_(k) <= z_k)`` for ``k`` i.i.d. standard Gaussians.

    Since ``N_(i) <= N_(j)`` for ``i < j`` the constraint ``N_(i) <= z_i`` can be
    tightened to the suffix minimum ``t_i``. The event then says that at least
    ``i`` samples fall below ``t_i`` for every ``i``, which a multinomial DP over
    the cells cut by ``t_1 <= ... <= t_k`` evaluates exactly.
    """
    z = [float(v) for v in z_vec]
    k = len(z)
    if k == 0:
        return 1.0
    t = list(z)
    for i in range(k - 2, -1, -1):
        t[i] = min(t[i], t[i + 1])
    cuts = [0.0] + [float(Phi(v)) for v in t]
    cells = [cuts[i + 1] - cuts[i] for i in range(k)]
    last = 1.0 - cuts[-1]
    logfact = [math.lgamma(c + 1) for c in range(k + 1)]
    f = [1.0] + [0.0] * k  # f[c]: weight of c samples placed so far, as prod p^n / n!
    for i, p in enumerate(cells):
        g = [0.0] * (k + 1)
        for c in range(k + 1):
            if f[c] == 0.0:
                continue
            for add in range(k + 1 - c):
                term = 1.0 if add == 0 else (p**add) * math.exp(-logfact[add])
                g[c + add] += f[c] * term
        for c in range(i + 1):
            g[c] = 0.0
        f = g
    total = sum(f[c] * (last ** (k - c)) * math.exp(-logfact[k - c]) for c in range(k + 1))
    return min(1.0, max(0.0, total * math.exp(logfact[k])))


def pmf_arithmetic_min(
    spec: IntensitySpec, u: float, k: int, z_vec: Optional[Sequence[float]], w_bank
) -> tuple[float, float]:
    """Limit of ``P(L_min = rho_n + u, P_min = k, H_min^(i) standardized <= z_i)`` with MC error.

    With ``m = W' e^{alpha (theta + u)} / nu_bar`` (``W' = M W1 W2``), the lattice
    Cox process has ``Poisson(m)`` points at level ``u`` and ``Poisson(m/(e^{alpha M}-1))``
    points strictly below it, so the weight factor is
    ``exp(-m/(e^{alpha M}-1)) m^k e^{-m} / k!``.
    """
    if spec.span is None:
        raise ValueError("non-lattice weights: use cdf_joint_min")
    if k < 1:
        raise ValueError("k must be >= 1")
    m_span = spec.span
    j = round(u / m_span)
    if abs(u / m_span - j) > LATTICE_TOL:
        raise ValueError(f"u={u} is not on the lattice {m_span}Z")
    z_vec = [math.inf] * k if z_vec is None else list(z_vec)
    if len(z_vec) != k:
        raise ValueError("z_vec must have k entries")
    p = spec.params
    order = order_stat_prob(z_vec)
    if order == 0.0:
        return 0.0, 0.0
    prod = _bank_products(w_bank)
    m = m_span * prod * math.exp(p.alpha * (spec.theta + j * m_span)) / p.nu_bar
    below = m / math.expm1(p.alpha * m_span)
    with np.errstate(divide="ignore"):
        log_m = np.log(m)
    vals = np.where(m > 0, np.exp(-below - m + k * log_m - gammaln(k + 1)), 0.0)
    mean, se = _mean_se(vals)
    return order * mean, order * se


def factorial_moment_limit(spec: IntensitySpec, window: Window, r: int, moment_table) -> float:
    """``lim tau_n^r E[(count in window)_r] = Lambda(window)^r E[W^r]^2``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    ew = moment_table.ew if hasattr(moment_table, "ew") else moment_table
    if r > len(ew):
        raise ValueError(f"moment table only reaches r={len(ew)}")
    mass = lambda_window(spec, window)
    if not math.isfinite(mass):
        raise ValueError("window has infinite intensity")
    return mass**r * ew[r - 1] ** 2


def connect_prob_limit(params: LimitParams) -> float:
    """Limit probability that vertices 1 and n are connected."""
    return (1.0 - params.eta) ** 2


def cdf_table(spec: IntensitySpec, zs, us, w_bank, conditional: bool = False) -> list[dict]:
    rows = []
    for z in zs:
        for u in us:
            v, se = cdf_joint_min(spec, float(z), float(u), w_bank, conditional)
            rows.append({"z": float(z), "u": float(u), "value": v, "mc_stderr": se})
    return rows


def pmf_table(spec: IntensitySpec, us, ks, w_bank) -> list[dict]:
    rows = []
    for u in us:
        for k in ks:
            v, se = pmf_arithmetic_min(spec, float(u), int(k), None, w_bank)
            rows.append({"z": math.inf, "u": float(u), "k": int(k), "value": v, "mc_stderr": se})
    return rows


def write_table(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
