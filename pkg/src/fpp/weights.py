"""Edge-weight distributions.

Every model exposes closed forms for the weighted transforms
``E[X^k exp(-s X)]`` (k = 0, 1, 2), which is all the limit theory needs:
the Laplace transform, its derivative and the tilted mean/variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Optional

import numpy as np
from scipy.special import gammainc

__all__ = [
    "WeightModel",
    "Exponential",
    "Uniform",
    "FiniteSupport",
    "ZeroMix",
    "TiltedMoments",
    "SpanUndecidableError",
    "laplace",
    "sample_weight",
    "prob_zero",
    "detect_span",
    "tilt_moments",
    "model_from_dict",
    "parse_weights",
]

SPAN_RTOL = 1e-12


class SpanUndecidableError(ValueError):
    """Raised when support values are not rationals with a small denominator."""


class WeightModel:
    """Base class for non-negative, non-degenerate weight laws."""

    kind: str = ""
    declared_span: Optional[float] = None

    def transform(self, s: float, power: int = 0) -> float:
        """Return ``E[X**power * exp(-s X)]`` for ``power`` in {0, 1, 2}."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def p0(self) -> float:
        return 0.0

    @property
    def has_continuous_part(self) -> bool:
        return True

    def mean(self) -> float:
        return self.transform(0.0, 1)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_power(power: int) -> None:
    if power not in (0, 1, 2):
        raise ValueError(f"power must be 0, 1 or 2, got {power}")


@dataclass(frozen=True)
class Exponential(WeightModel):
    rate: float = 1.0

    kind = "exponential"

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    def transform(self, s, power=0):
        _check_power(power)
        r = self.rate
        return math.factorial(power) * r / (r + s) ** (power + 1)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


def _unit_moment(m: int, c: float) -> float:
    # int_0^1 t^m exp(-c t) dt, stable for every c >= 0
    if c < 1e-3:
        total, term = 0.0, 1.0
        for j in range(12):
            total += term / (m + j + 1)
            term *= -c / (j + 1)
        return total
    return math.factorial(m) * float(gammainc(m + 1, c)) / c ** (m + 1)


@dataclass(frozen=True)
class Uniform(WeightModel):
    lo: float = 0.0
    hi: float = 1.0

    kind = "uniform"

    def __post_init__(self):
        if not (0 <= self.lo < self.hi and math.isfinite(self.hi)):
            raise ValueError(f"uniform needs 0 <= lo < hi, got ({self.lo}, {self.hi})")

    def transform(self, s, power=0):
        _check_power(power)
        a, d = self.lo, self.hi - self.lo
        c = s * d
        # X = a + d*T with T ~ U(0,1); expand (a + d T)^power
        j0, j1 = _unit_moment(0, c), _unit_moment(1, c)
        if power == 0:
            inner = j0
        elif power == 1:
            inner = a * j0 + d * j1
        else:
            inner = a * a * j0 + 2 * a * d * j1 + d * d * _unit_moment(2, c)
        return math.exp(-s * a) * inner

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class FiniteSupport(WeightModel):
    """Finitely supported law given as ``((value, prob), ...)``."""

    support: tuple = ()
    declared_span: Optional[float] = None
    max_denominator: int = 10**6

    kind = "finite_support"

    def __post_init__(self):
        pairs = tuple((float(v), float(p)) for v, p in self.support)
        merged: dict[float, float] = {}
        for v, p in pairs:
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"support values must be finite and >= 0, got {v}")
            if not (0 <= p <= 1):
                raise ValueError(f"probabilities must lie in [0, 1], got {p}")
            if p > 0:
                merged[v] = merged.get(v, 0.0) + p
        if abs(sum(p for _, p in pairs) - 1.0) > 1e-12:
            raise ValueError("finite-support probabilities must sum to 1")
        if len(merged) < 2:
            raise ValueError("weight law is a point mass (almost surely constant)")
        object.__setattr__(self, "support", tuple(sorted(merged.items())))
        if self.declared_span is not None:
            _verify_span(self.values, self.declared_span)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.support])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.support])

    @property
    def p0(self):
        return sum(p for v, p in self.support if v == 0.0)

    @property
    def has_continuous_part(self):
        return False

    def transform(self, s, power=0):
        _check_power(power)
        return math.fsum(p * v**power * math.exp(-s * v) for v, p in self.support)

    def sample(self, rng, size=None):
        idx = rng.choice(len(self.support), size=size, p=self.probs)
        return self.values[idx]

    def sample_units(self, rng, span: float, size=None) -> np.ndarray:
        """Draw weights as integer multiples of ``span``."""
        units = np.rint(self.values / span).astype(np.int64)
        return units[rng.choice(len(self.support), size=size, p=self.probs)]

    def to_dict(self):
        d = {"kind": "finite_support", "support": [[v, p] for v, p in self.support]}
        if self.declared_span is not None:
            d["span"] = self.declared_span
        return d


@dataclass(frozen=True)
class ZeroMix(WeightModel):
    """Atom of mass ``q`` at zero mixed with a continuous tail law."""

    q: float = 0.0
    tail: WeightModel = Exponential(1.0)

    kind = "zero_mix"

    def __post_init__(self):
        if not (0 <= self.q < 1):
            raise ValueError(f"zero_mix needs 0 <= q < 1 (q=1 is degenerate), got {self.q}")
        if not isinstance(self.tail, (Exponential, Uniform)):
            raise ValueError("zero_mix tail must be a continuous model")

    @property
    def p0(self):
        return self.q + (1 - self.q) * self.tail.p0

    def transform(self, s, power=0):
        _check_power(power)
        head = self.q if power == 0 else 0.0
        return head + (1 - self.q) * self.tail.transform(s, power)

    def sample(self, rng, size=None):
        x = np.asarray(self.tail.sample(rng, size=size), dtype=float)
        zero = rng.random(size=size) < self.q
        out = np.where(zero, 0.0, x)
        return float(out) if size is None else out

    def to_dict(self):
        return {"kind": "zero_mix", "q": self.q, "tail": self.tail.to_dict()}


@dataclass(frozen=True)
class TiltedMoments:
    nu_bar: float
    sigma2_bar: float


def laplace(model: WeightModel, s: float) -> float:
    """``R(s) = E[exp(-s X)]``."""
    if s < 0:
        raise ValueError(f"Laplace transform needs s >= 0, got {s}")
    return model.transform(s, 0)


def sample_weight(model: WeightModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size=size)


def prob_zero(model: WeightModel) -> float:
    return float(model.p0)


def _verify_span(values, span: float) -> None:
    if not span > 0:
        raise ValueError(f"span must be positive, got {span}")
    q = np.asarray(values, dtype=float) / span
    k = np.rint(q)
    if np.any(np.abs(q - k) > SPAN_RTOL * np.maximum(1.0, np.abs(q))):
        raise ValueError(f"support is not contained in {span}*Z")
    if reduce(math.gcd, (int(x) for x in k), 0) != 1:
        raise ValueError(f"{span} is a lattice for the support but not the largest one")


def detect_span(model: WeightModel) -> Optional[float]:
    """Largest ``M`` with all support points in ``M*Z``; ``None`` if a continuous part exists."""
    if model.has_continuous_part:
        return None
    if model.declared_span is not None:
        _verify_span(model.values, model.declared_span)
        return float(model.declared_span)
    fracs = []
    for v in model.values:
        f = Fraction(float(v)).limit_denominator(model.max_denominator)
        # the rational must reproduce the float to a few ulps
        if abs(float(f) - v) > 4 * np.finfo(float).eps * max(1.0, abs(v)):
            raise SpanUndecidableError(
                f"support value {v!r} is not a rational with denominator <= "
                f"{model.max_denominator}; declare the span explicitly"
            )
        fracs.append(f)
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fracs), 1)
    num = reduce(math.gcd, (int(f * den) for f in fracs), 0)
    return float(Fraction(num, den))


def tilt_moments(model: WeightModel, lam: float, alpha: float) -> TiltedMoments:
    """Mean and variance of the tilted law ``dF~(x) = lam exp(-alpha x) dF(x)``."""
    resid = abs(lam * laplace(model, alpha) - 1.0)
    if resid > 1e-9:
        raise ValueError(f"(lambda, alpha) = ({lam}, {alpha}) violates lambda*R(alpha) = 1 (residual {resid:.3g})")
    nu = lam * model.transform(alpha, 1)
    var = lam * model.transform(alpha, 2) - nu * nu
    return TiltedMoments(nu_bar=nu, sigma2_bar=max(var, 0.0))


def model_from_dict(d: dict) -> WeightModel:
    """Build a model from its tagged-record form (as used in config files)."""
    kind = d.get("kind")
    if kind == "exponential":
        return Exponential(float(d.get("rate", 1.0)))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "finite_support":
        return FiniteSupport(
            tuple((v, p) for v, p in d["support"]),
            declared_span=d.get("span"),
            max_denominator=int(d.get("max_denominator", 10**6)),
        )
    if kind == "zero_mix":
        return ZeroMix(float(d["q"]), model_from_dict(d["tail"]))
    raise ValueError(f"unknown weight model kind {kind!r}")


def parse_weights(text: str) -> WeightModel:
    """Parse the short command-line form.

    ``exp:RATE``, ``unif:LO:HI``, ``fs:V@P,V@P,...`` and ``zmix:Q:<tail>``.
    """
    head, _, rest = text.partition(":")
    if head in ("exp", "exponential"):
        return Exponential(float(rest or 1.0))
    if head in ("unif", "uniform"):
        lo, hi = rest.split(":")
        return Uniform(float(lo), float(hi))
    if head in ("fs", "finite"):
        pairs = [item.split("@") for item in rest.split(",")]
        return FiniteSupport(tuple((float(v), float(p)) for v, p in pairs))
    if head in ("zmix", "zero_mix"):
        q, _, tail = rest.partition(":")
        return ZeroMix(float(q), parse_weights(tail))
    raise ValueError(f"cannot parse weight model {text!r}")
