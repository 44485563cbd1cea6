"""Malthusian parameter, CLT constants and the n-dependent scalings."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

from .weights import WeightModel, detect_span, laplace, prob_zero, tilt_moments

__all__ = [
    "SupercriticalZeroWeightError",
    "LimitParams",
    "ScalingSchedule",
    "solve_alpha",
    "eta_lambda",
    "build_params",
    "schedule",
    "k_n",
    "subsequence_offset",
]


class SupercriticalZeroWeightError(ValueError):
    """``lambda * P(X=0) >= 1``: the zero-weight subgraph is not subcritical."""


def _lattice_floor(x: float) -> int:
    # guards floor against representation noise when x is an integer in exact arithmetic
    k = round(x)
    if abs(x - k) <= 1e-9 * max(1.0, abs(x)):
        return int(k)
    return math.floor(x)


def solve_alpha(model: WeightModel, lam: float) -> float:
    """Unique ``alpha > 0`` with ``lam * R(alpha) = 1``.

    Bisection down to a bracket of width 1e-8, then at most five Newton
    steps using ``R'(s) = -E[X exp(-sX)]``.
    """
    if not lam > 1:
        raise ValueError(f"lambda must exceed 1, got {lam}")
    if lam * prob_zero(model) >= 1:
        raise SupercriticalZeroWeightError(
            f"lambda*P(X=0) = {lam * prob_zero(model):.6g} >= 1; zero-weight edges percolate"
        )

    def g(s):
        return lam * laplace(model, s) - 1.0

    lo, hi = 0.0, 1.0
    while g(hi) > 0:
        lo, hi = hi, 2 * hi
    while hi - lo > 1e-8:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    # the root may sit on a bracket end, so Newton may step slightly outside
    slack = hi - lo
    for _ in range(5):
        f = g(a)
        if f == 0.0:
            break
        step = f / (-lam * model.transform(a, 1))
        a_new = a - step
        if not lo - slack <= a_new <= hi + slack:
            break
        a = a_new
        if abs(step) < 1e-16 * a:
            break
    return a


def eta_lambda(lam: float, tol: float = 1e-15, max_iter: int = 10**7) -> float:
    """Extinction probability of a Poisson(lam) Galton-Watson tree.

    Monotone iteration ``s -> exp(lam (s - 1))`` from 0, which increases to
    the smallest fixed point.
    """
    if not lam > 1:
        raise ValueError(f"lambda must exceed 1, got {lam}")
    s = 0.0
    for _ in range(max_iter):
        nxt = math.exp(lam * (s - 1.0))
        if nxt - s <= tol:
            return nxt
        s = nxt
    return s


@dataclass(frozen=True)
class LimitParams:
    lam: float
    alpha: float
    nu_bar: float
    sigma2_bar: float
    beta: float
    gamma: float
    eta: float
    span: Optional[float] = None
    theta: Optional[float] = None

    @property
    def arithmetic(self) -> bool:
        return self.span is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(frozen=True)
class ScalingSchedule:
    n: float
    rho_n: float
    tau_n: float

    @property
    def log_n(self) -> float:
        return math.log(self.n)


def build_params(model: WeightModel, lam: float, n: Optional[float] = None) -> LimitParams:
    """Assemble all limit constants for ``model`` on ``G(n, lam/n)``.

    For arithmetic laws ``theta`` is the finite-``n`` offset
    ``rho_n - log(n)/alpha`` when ``n`` is given, else 0.
    """
    alpha = solve_alpha(model, lam)
    tm = tilt_moments(model, lam, alpha)
    beta = tm.sigma2_bar / (alpha * tm.nu_bar**3)
    gamma = 1.0 / (alpha * tm.nu_bar)
    span = detect_span(model)
    theta = None
    if span is not None:
        theta = 0.0
        if n is not None:
            theta = span * _lattice_floor(math.log(n) / (span * alpha)) - math.log(n) / alpha
    return LimitParams(
        lam=float(lam),
        alpha=alpha,
        nu_bar=tm.nu_bar,
        sigma2_bar=tm.sigma2_bar,
        beta=beta,
        gamma=gamma,
        eta=eta_lambda(lam),
        span=span,
        theta=theta,
    )


def schedule(params: LimitParams, n: float) -> ScalingSchedule:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    log_n = math.log(n)
    if params.span is None:
        return ScalingSchedule(n=n, rho_n=log_n / params.alpha, tau_n=1.0)
    m = params.span
    rho = m * _lattice_floor(log_n / (m * params.alpha))
    return ScalingSchedule(n=n, rho_n=rho, tau_n=n * math.exp(-params.alpha * rho))


def k_n(params: LimitParams, n: float, z: float) -> int:
    """Largest hopcount whose standardized value does not exceed ``z``."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if z == math.inf:
        return 2**62
    if z == -math.inf:
        return -(2**62)
    log_n = math.log(n)
    return math.floor(z * math.sqrt(params.beta * log_n) + params.gamma * log_n)


def subsequence_offset(params: LimitParams, n: float) -> float:
    """``rho_n - log(n)/alpha``, in ``(-M, 0]`` for arithmetic laws."""
    if params.span is None:
        raise ValueError("subsequence offset is only defined for arithmetic weights")
    return schedule(params, n).rho_n - math.log(n) / params.alpha
