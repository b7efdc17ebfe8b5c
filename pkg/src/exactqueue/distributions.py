"""Interarrival and service laws, transforms, and exponentially tilted variants.

Every family supports ``tilt(theta)``, which returns the law with density
proportional to ``exp(theta * x) * f(x)``.  The walk engine uses negative tilts
of the interarrival law and positive tilts of the service law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Any, ClassVar, Mapping, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import (
    InvalidDriftConstant,
    InvalidParameters,
    MgfUnavailable,
    NoRoot,
    Unstable,
)

PHI_TOL = 1e-12
_QUAD_TOL = 1e-12


def _log_expm1_ratio(z: float) -> float:
    """log((exp(z) - 1) / z), stable for all real z."""
    if z == 0.0:
        return 0.0
    if z > 0.0:
        return z + math.log(-math.expm1(-z) / z)
    return math.log(math.expm1(z) / z)


def _log_box(k: float, lo: float, width: float) -> float:
    """log of the integral of exp(k x) over [lo, lo + width]."""
    if width <= 0.0:
        return -math.inf
    return k * lo + math.log(width) + _log_expm1_ratio(k * width)


class DistributionSpec:
    """Base class for a nonnegative law on the real line."""

    kind: ClassVar[str] = ""

    # -- to be provided by families ------------------------------------
    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        raise NotImplementedError

    @property
    def lower(self) -> float:
        raise NotImplementedError

    @property
    def upper(self) -> float:
        raise NotImplementedError

    @property
    def mgf_bound(self) -> float:
        """Supremum of eta with E exp(eta X) finite."""
        return math.inf if math.isfinite(self.upper) else 0.0

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def laplace(self, theta: float) -> float:
        """E exp(-theta X); +inf when the transform diverges."""
        raise NotImplementedError

    def tilt(self, theta: float) -> "DistributionSpec":
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    # -- generic machinery ---------------------------------------------
    def sf(self, x):
        return 1.0 - self.cdf(x)

    def mgf(self, eta: float) -> float:
        return self.laplace(-eta)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return ()

    def _quad(self, func, lo: float, hi: float) -> float:
        pts = [p for p in self.breakpoints if lo < p < hi]
        edges = [lo, *pts, hi]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(func, a, b, epsabs=_QUAD_TOL, epsrel=1e-11, limit=200)
            total += val
        return total

    def partial_mean(self, x: float) -> float:
        """E min(X, x) = integral of the survival function over [0, x]."""
        if x <= 0.0:
            return 0.0
        hi = min(x, self.upper)
        lo = min(self.lower, hi)
        val = lo + (self._quad(lambda y: float(self.sf(y)), lo, hi) if hi > lo else 0.0)
        return val + max(0.0, x - self.upper)

    def partial_laplace(self, theta: float, b: float) -> float:
        """Integral of exp(-theta x) f(x) over [0, b)."""
        hi = min(b, self.upper)
        if hi <= self.lower:
            return 0.0
        return self._quad(lambda y: math.exp(-theta * y) * float(self.pdf(y)), self.lower, hi)

    def sample_tail(self, b: float, rng: np.random.Generator) -> float:
        """One draw of X conditioned on X > b."""
        for _ in range(1_000_000):
            x = float(self.sample(rng))
            if x > b:
                return x
        raise InvalidParameters(f"tail beyond {b} is too thin to sample by rejection")

    def equilibrium_cdf(self, x: float) -> float:
        return self.partial_mean(x) / self.mean

    def quantile(self, q: float) -> float:
        hi = self.upper if math.isfinite(self.upper) else max(1.0, self.mean)
        while not math.isfinite(self.upper) and self.cdf(hi) < q:
            hi *= 2.0
        lo = self.lower
        if q <= 0.0:
            return lo
        return optimize.brentq(lambda y: float(self.cdf(y)) - q, lo, hi, xtol=1e-14)


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class Exponential(DistributionSpec):
    rate: float
    kind: ClassVar[str] = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidParameters("exponential rate must be positive")

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    mean = property(lambda self: 1.0 / self.rate)
    variance = property(lambda self: 1.0 / self.rate**2)
    lower = property(lambda self: 0.0)
    upper = property(lambda self: math.inf)
    mgf_bound = property(lambda self: self.rate)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)

    def laplace(self, theta):
        if self.rate + theta <= 0:
            return math.inf
        return self.rate / (self.rate + theta)

    def partial_mean(self, x):
        return 0.0 if x <= 0 else -math.expm1(-self.rate * x) / self.rate

    def partial_laplace(self, theta, b):
        k = self.rate + theta
        if b <= 0:
            return 0.0
        if k == 0:
            return self.rate * b
        return self.rate * -math.expm1(-k * b) / k

    def tilt(self, theta):
        if theta >= self.rate:
            raise MgfUnavailable(f"tilt {theta} outside the exponential's mgf domain")
        return Exponential(self.rate - theta)

    def sample_tail(self, b, rng):
        return max(b, 0.0) + rng.exponential(1.0 / self.rate)

    def to_config(self):
        return {"family": self.kind, "params": [self.rate]}


@dataclass(frozen=True)
class ShiftedExponential(DistributionSpec):
    shift: float
    rate: float
    kind: ClassVar[str] = "shifted-exponential"

    def __post_init__(self):
        if not (self.rate > 0 and self.shift >= 0):
            raise InvalidParameters("shifted exponential needs shift >= 0 and rate > 0")

    def sample(self, rng, size=None):
        return self.shift + rng.exponential(1.0 / self.rate, size)

    mean = property(lambda self: self.shift + 1.0 / self.rate)
    variance = property(lambda self: 1.0 / self.rate**2)
    lower = property(lambda self: self.shift)
    upper = property(lambda self: math.inf)
    mgf_bound = property(lambda self: self.rate)

    def pdf(self, x):
        y = np.asarray(x, dtype=float) - self.shift
        return np.where(y >= 0, self.rate * np.exp(-self.rate * np.maximum(y, 0.0)), 0.0)

    def cdf(self, x):
        y = np.asarray(x, dtype=float) - self.shift
        return np.where(y > 0, -np.expm1(-self.rate * np.maximum(y, 0.0)), 0.0)

    def laplace(self, theta):
        if self.rate + theta <= 0:
            return math.inf
        return math.exp(-theta * self.shift) * self.rate / (self.rate + theta)

    def partial_mean(self, x):
        if x <= self.shift:
            return max(x, 0.0)
        return self.shift - math.expm1(-self.rate * (x - self.shift)) / self.rate

    def tilt(self, theta):
        if theta >= self.rate:
            raise MgfUnavailable(f"tilt {theta} outside the mgf domain")
        return ShiftedExponential(self.shift, self.rate - theta)

    def sample_tail(self, b, rng):
        return max(b, self.shift) + rng.exponential(1.0 / self.rate)

    def to_config(self):
        return {"family": self.kind, "params": [self.shift, self.rate]}


@dataclass(frozen=True)
class Uniform(DistributionSpec):
    """Uniform on [low, high]; a nonzero ``theta`` exponentially tilts it."""

    low: float
    high: float
    theta: float = 0.0
    kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        if not (0 <= self.low < self.high < math.inf):
            raise InvalidParameters("uniform needs 0 <= low < high < inf")

    @property
    def width(self):
        return self.high - self.low

    @cached_property
    def _log_norm(self):
        return _log_box(self.theta, self.low, self.width)

    def sample(self, rng, size=None):
        u = rng.random(size)
        k, w = self.theta, self.width
        if abs(k * w) < 1e-12:
            return self.low + w * u
        if k > 0:
            return self.high + np.log(np.exp(-k * w) + u * -np.expm1(-k * w)) / k
        return self.low + np.log1p(u * np.expm1(k * w)) / k

    @property
    def mean(self):
        k, w = self.theta, self.width
        if abs(k * w) < 1e-6:
            return self.low + w / 2 + k * w * w / 12
        return self.low + w / -math.expm1(-k * w) - 1.0 / k

    @property
    def variance(self):
        k, w = self.theta, self.width
        z = k * w
        if abs(z) < 1e-3:
            return w * w / 12 - z * z * w * w / 720
        return 1.0 / k**2 - w * w / (4.0 * math.sinh(z / 2) ** 2)

    lower = property(lambda self: self.low)
    upper = property(lambda self: self.high)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, np.exp(self.theta * x - self._log_norm), 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.low, self.high)
        out = np.array([math.exp(_log_box(self.theta, self.low, float(v) - self.low) - self._log_norm)
                        if v > self.low else 0.0 for v in np.atleast_1d(x)])
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    def laplace(self, theta):
        return math.exp(_log_box(self.theta - theta, self.low, self.width) - self._log_norm)

    def partial_mean(self, x):
        if self.theta != 0.0:
            return super().partial_mean(x)
        if x <= self.low:
            return max(x, 0.0)
        if x >= self.high:
            return self.mean
        return self.low + (x - self.low) - (x - self.low) ** 2 / (2 * self.width)

    def tilt(self, theta):
        return Uniform(self.low, self.high, self.theta + theta)

    def sample_tail(self, b, rng):
        if b >= self.high:
            raise InvalidParameters(f"no mass beyond {b}")
        lo = max(b, self.low)
        return float(Uniform(lo, self.high, self.theta).sample(rng))

    def to_config(self):
        cfg = {"family": self.kind, "params": [self.low, self.high]}
        if self.theta:
            cfg["tilt"] = self.theta
        return cfg


@dataclass(frozen=True)
class Jitter(DistributionSpec):
    """A deterministic value with symmetric uniform jitter; width 0 is a point mass."""

    value: float
    width: float = 0.0
    kind: ClassVar[str] = "deterministic-plus-jitter"

    def __post_init__(self):
        if not (self.value > 0 and 0 <= self.width <= self.value):
            raise InvalidParameters("jitter needs value > 0 and 0 <= width <= value")

    @cached_property
    def _box(self):
        return Uniform(self.value - self.width, self.value + self.width) if self.width > 0 else None

    def sample(self, rng, size=None):
        if self._box is None:
            return np.full(size, self.value) if size is not None else self.value
        return self._box.sample(rng, size)

    mean = property(lambda self: self.value)
    variance = property(lambda self: self.width**2 / 3.0)
    lower = property(lambda self: self.value - self.width)
    upper = property(lambda self: self.value + self.width)

    def pdf(self, x):
        if self._box is None:
            return np.where(np.asarray(x) == self.value, np.inf, 0.0)
        return self._box.pdf(x)

    def cdf(self, x):
        if self._box is None:
            return np.where(np.asarray(x, dtype=float) >= self.value, 1.0, 0.0)
        return self._box.cdf(x)

    def laplace(self, theta):
        if self._box is None:
            return math.exp(-theta * self.value)
        return self._box.laplace(theta)

    def partial_mean(self, x):
        if self._box is None:
            return min(max(x, 0.0), self.value)
        return self._box.partial_mean(x)

    def partial_laplace(self, theta, b):
        if self._box is None:
            return math.exp(-theta * self.value) if self.value < b else 0.0
        return self._box.partial_laplace(theta, b)

    def tilt(self, theta):
        return self if self._box is None else self._box.tilt(theta)

    def sample_tail(self, b, rng):
        if self._box is None:
            if self.value <= b:
                raise InvalidParameters(f"no mass beyond {b}")
            return self.value
        return self._box.sample_tail(b, rng)

    def to_config(self):
        return {"family": self.kind, "params": [self.value, self.width]}


@dataclass(frozen=True)
class Table(DistributionSpec):
    """Piecewise-linear density given on a grid (normalized on construction)."""

    x: tuple
    density: tuple
    theta: float = 0.0
    kind: ClassVar[str] = "table"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        f = np.asarray(self.density, dtype=float)
        if x.ndim != 1 or x.shape != f.shape or len(x) < 2:
            raise InvalidParameters("table needs matching x and pdf arrays of length >= 2")
        if x[0] < 0 or np.any(np.diff(x) <= 0) or np.any(f < 0):
            raise InvalidParameters("table grid must be increasing, nonnegative, pdf >= 0")
        area = float(integrate.trapezoid(f, x))
        if not area > 0:
            raise InvalidParameters("table density has zero mass")
        object.__setattr__(self, "x", tuple(float(v) for v in x))
        object.__setattr__(self, "density", tuple(float(v) / area for v in f))

    @cached_property
    def _grid(self):
        x = np.asarray(self.x)
        f = np.asarray(self.density)
        h = np.diff(x)
        seg_mass = 0.5 * (f[:-1] + f[1:]) * h
        cum = np.concatenate([[0.0], np.cumsum(seg_mass)])
        return x, f, h, cum

    breakpoints = property(lambda self: self.x)
    lower = property(lambda self: self.x[0])
    upper = property(lambda self: self.x[-1])

    def _base_pdf(self, y):
        return np.interp(y, self.x, self.density, left=0.0, right=0.0)

    @lru_cache(maxsize=512)
    def _z(self, k: float) -> float:
        """Integral of exp(k x) f(x) for the untilted table density f."""
        if k == 0.0:
            return 1.0
        total = 0.0
        for a, b in zip(self.x[:-1], self.x[1:]):
            val, _ = integrate.quad(lambda y: math.exp(k * y) * float(self._base_pdf(y)),
                                    a, b, epsabs=1e-13, epsrel=1e-12)
            total += val
        return total

    def pdf(self, x):
        return self._base_pdf(np.asarray(x, dtype=float)) * np.exp(self.theta * np.asarray(x, dtype=float)) / self._z(self.theta)

    def cdf(self, x):
        if self.theta != 0.0:
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            out = np.array([self._quad(lambda y: float(self.pdf(y)), self.lower, min(max(v, self.lower), self.upper))
                            if v > self.lower else 0.0 for v in xs])
            return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])
        gx, f, h, cum = self._grid
        xv = np.clip(np.asarray(x, dtype=float), gx[0], gx[-1])
        k = np.clip(np.searchsorted(gx, xv, side="right") - 1, 0, len(h) - 1)
        d = xv - gx[k]
        s = (f[k + 1] - f[k]) / h[k]
        return cum[k] + f[k] * d + 0.5 * s * d * d

    def _sample_base(self, rng, size):
        gx, f, h, cum = self._grid
        r = rng.random(size) * cum[-1]
        k = np.clip(np.searchsorted(cum, r, side="right") - 1, 0, len(h) - 1)
        rem = r - cum[k]
        s = (f[k + 1] - f[k]) / h[k]
        disc = np.sqrt(np.maximum(f[k] ** 2 + 2.0 * s * rem, 0.0))
        denom = f[k] + disc
        d = np.where(denom > 0, 2.0 * rem / np.where(denom > 0, denom, 1.0), 0.0)
        return gx[k] + np.minimum(d, h[k])

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        if self.theta == 0.0:
            out = self._sample_base(rng, n)
        else:
            ref = self.upper if self.theta > 0 else self.lower
            chunks, have = [], 0
            while have < n:
                cand = self._sample_base(rng, max(2 * (n - have), 16))
                keep = cand[rng.random(cand.size) < np.exp(self.theta * (cand - ref))]
                chunks.append(keep)
                have += keep.size
            out = np.concatenate(chunks)[:n]
        return float(out[0]) if size is None else out.reshape(size)

    @property
    def mean(self):
        return self._quad(lambda y: y * float(self.pdf(y)), self.lower, self.upper)

    @property
    def variance(self):
        m = self.mean
        return self._quad(lambda y: (y - m) ** 2 * float(self.pdf(y)), self.lower, self.upper)

    def laplace(self, theta):
        return self._z(self.theta - theta) / self._z(self.theta)

    def tilt(self, theta):
        return Table(self.x, self.density, self.theta + theta)

    def to_config(self):
        cfg = {"family": self.kind, "table": {"x": list(self.x), "pdf": list(self.density)}}
        if self.theta:
            cfg["tilt"] = self.theta
        return cfg


@dataclass(frozen=True)
class Truncated(DistributionSpec):
    """The law of min(X, cap) for a base law X, optionally tilted."""

    base: DistributionSpec
    cap: float
    theta: float = 0.0
    kind: ClassVar[str] = "truncated"

    def __post_init__(self):
        if not self.cap > self.base.lower:
            raise InvalidParameters("truncation level must exceed the base lower bound")

    def _z(self, k: float) -> float:
        return self.base.partial_laplace(-k, self.cap) + math.exp(k * self.cap) * float(self.base.sf(self.cap))

    @cached_property
    def atom(self) -> float:
        """Probability of the value ``cap``."""
        return math.exp(self.theta * self.cap) * float(self.base.sf(self.cap)) / self._z(self.theta)

    @cached_property
    def _tilted_base(self):
        return self.base.tilt(self.theta) if self.theta else self.base

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = np.full(n, self.cap)
        cont = np.flatnonzero(rng.random(n) >= self.atom)
        todo = cont
        while todo.size:
            cand = np.asarray(self._tilted_base.sample(rng, todo.size), dtype=float)
            ok = cand < self.cap
            out[todo[ok]] = cand[ok]
            todo = todo[~ok]
        return float(out[0]) if size is None else out.reshape(size)

    lower = property(lambda self: self.base.lower)
    upper = property(lambda self: min(self.cap, self.base.upper))

    @property
    def breakpoints(self):
        return self.base.breakpoints

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.cap, np.exp(self.theta * x) * self.base.pdf(x) / self._z(self.theta), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        tb = self._tilted_base
        below = (1.0 - self.atom) * tb.cdf(np.minimum(x, self.cap)) / float(tb.cdf(self.cap))
        return np.where(x >= self.cap, 1.0, below)

    @property
    def mean(self):
        if self.theta == 0.0:
            return self.base.partial_mean(self.cap)
        return self._quad(lambda y: y * float(self.pdf(y)), self.lower, self.upper) + self.cap * self.atom

    @property
    def variance(self):
        m = self.mean
        cont = self._quad(lambda y: (y - m) ** 2 * float(self.pdf(y)), self.lower, self.upper)
        return cont + (self.cap - m) ** 2 * self.atom

    def laplace(self, theta):
        return self._z(self.theta - theta) / self._z(self.theta)

    def tilt(self, theta):
        return Truncated(self.base, self.cap, self.theta + theta)

    def to_config(self):
        return {"family": self.kind, "base": self.base.to_config(), "cap": self.cap}


_FAMILIES = {
    "exponential": lambda p: Exponential(*p),
    "exp": lambda p: Exponential(*p),
    "uniform": lambda p: Uniform(*p),
    "shifted-exponential": lambda p: ShiftedExponential(*p),
    "shifted_exponential": lambda p: ShiftedExponential(*p),
    "deterministic-plus-jitter": lambda p: Jitter(*p),
    "jitter": lambda p: Jitter(*p),
    "deterministic": lambda p: Jitter(p[0], 0.0),
}


def distribution_from_config(cfg: Mapping[str, Any] | DistributionSpec) -> DistributionSpec:
    """Build a law from ``{"family": ..., "params": [...]}`` or a table config."""
    if isinstance(cfg, DistributionSpec):
        return cfg
    family = str(cfg.get("family", "")).lower()
    try:
        if family in ("table", "user-table"):
            tab = cfg["table"]
            dist = Table(tuple(tab["x"]), tuple(tab["pdf"]))
        elif family == "truncated":
            dist = Truncated(distribution_from_config(cfg["base"]), float(cfg["cap"]))
        elif family in _FAMILIES:
            dist = _FAMILIES[family]([float(v) for v in cfg.get("params", [])])
        else:
            raise InvalidParameters(f"unknown distribution family {family!r}")
    except (KeyError, TypeError) as exc:
        raise InvalidParameters(f"malformed distribution config {dict(cfg)!r}") from exc
    if cfg.get("tilt"):
        dist = dist.tilt(float(cfg["tilt"]))
    return dist


# ---------------------------------------------------------------------------
# model and tilting context


@dataclass(frozen=True)
class ModelSpec:
    arrival: DistributionSpec
    service: DistributionSpec
    servers: int

    @property
    def arrival_rate(self) -> float:
        return 1.0 / self.arrival.mean

    @property
    def service_rate(self) -> float:
        return 1.0 / self.service.mean

    @property
    def rho(self) -> float:
        return self.service.mean / self.arrival.mean

    @property
    def emptiable(self) -> bool:
        return supports_allow_emptying(self.arrival, self.service)

    def to_config(self) -> dict:
        return {"arrival": self.arrival.to_config(), "service": self.service.to_config(),
                "servers": self.servers}


def supports_allow_emptying(arrival: DistributionSpec, service: DistributionSpec) -> bool:
    """Whether P(T > S) > 0, judged from the supports."""
    return arrival.upper > service.lower


def build_model(arrival, service, servers: int) -> ModelSpec:
    arrival = distribution_from_config(arrival)
    service = distribution_from_config(service)
    if int(servers) != servers or servers < 1:
        raise InvalidParameters("server count must be a positive integer")
    if not (arrival.mean > 0 and service.mean > 0):
        raise InvalidParameters("interarrival and service means must be positive")
    model = ModelSpec(arrival, service, int(servers))
    if not model.rho < model.servers:
        raise Unstable(f"rho = {model.rho:.6g} is not below c = {model.servers}")
    return model


def model_from_config(cfg: Mapping[str, Any]) -> ModelSpec:
    return build_model(cfg["arrival"], cfg["service"], cfg.get("servers", cfg.get("c", 1)))


def laplace(spec: DistributionSpec, theta: float) -> float:
    """E exp(-theta X) for theta >= 0."""
    if theta < 0:
        raise ValueError("laplace expects theta >= 0")
    return spec.laplace(theta)


def positive_root(func, upper: float = math.inf, start: float = 1.0, *, what: str = "root") -> float:
    """Root on (0, upper) of a convex function with func(0) = 0 and func'(0) < 0."""
    hi = None
    if math.isfinite(upper):
        for k in range(1, 80):
            cand = upper * (1.0 - 2.0 ** -k)
            val = func(cand)
            if math.isfinite(val) and val > 0:
                hi = cand
                break
            if not math.isfinite(val) and val > 0:
                hi = cand
                break
    else:
        cand = start
        for _ in range(200):
            val = func(cand)
            if val > 0:
                hi = cand
                break
            cand *= 2.0
    if hi is None:
        raise NoRoot(f"could not bracket the {what}")
    lo = hi / 2.0
    for _ in range(2000):
        if func(lo) < 0:
            break
        lo /= 2.0
    else:
        raise NoRoot(f"could not bracket the {what} from below")
    if not math.isfinite(func(hi)):
        # shrink toward lo until finite
        while not math.isfinite(func(hi)):
            hi = 0.5 * (lo + hi)
    root = optimize.brentq(func, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
    return root


def _log_routing_factor(theta_a: float, c: int) -> float:
    """log((exp(theta a) + c - 1) / c)."""
    if c == 1:
        return theta_a
    return float(np.logaddexp(theta_a, math.log(c - 1))) - math.log(c)


def phi(model: ModelSpec, a: float, theta: float) -> float:
    """log E exp(theta (a 1{U = i} - T)) for the routing/interarrival walk."""
    lt = model.arrival.laplace(theta)
    return _log_routing_factor(theta * a, model.servers) + math.log(lt)


def psi(service: DistributionSpec, a: float, eta: float) -> float:
    """log E exp(eta (S - a))."""
    mg = service.mgf(eta)
    if not math.isfinite(mg):
        return math.inf
    return math.log(mg) - eta * a


@dataclass(frozen=True)
class TiltContext:
    a: float
    theta: float
    m: float
    eta: float
    m_scalar: float
    down_mult: int
    servers: int
    tilted_arrival: DistributionSpec = field(repr=False)
    tilted_service: DistributionSpec = field(repr=False)

    @property
    def weights(self) -> tuple[float, ...]:
        return (1.0 / self.servers,) * self.servers

    @property
    def p_same(self) -> float:
        """Tilted probability that the routing mark equals the tilt direction."""
        c = self.servers
        if c == 1:
            return 1.0
        return 1.0 / (1.0 + (c - 1) * math.exp(-self.theta * self.a))


def drift_constant_at(model: ModelSpec, frac: float) -> float:
    """The point a fraction ``frac`` of the way across (E S, c E T)."""
    if not 0 < frac < 1:
        raise InvalidDriftConstant(f"fraction {frac} must lie in (0, 1)")
    lo, hi = model.service.mean, model.servers * model.arrival.mean
    return lo + frac * (hi - lo)


def default_drift_constant(model: ModelSpec) -> float:
    return drift_constant_at(model, 0.5)


def solve_tilt(model: ModelSpec, a: float | None = None, *, slack: float = 1.0,
               m_scalar: float | None = None, down_mult: int = 3,
               require_records: bool = False) -> TiltContext:
    """Drift constant, tilt roots, and milestone heights for ``model``.

    ``require_records`` additionally enforces P(T > a) > 0, without which the
    routing/interarrival walk has no record indices.
    """
    c = model.servers
    lo, hi = model.service.mean, c * model.arrival.mean
    if a is None:
        a = default_drift_constant(model)
    if not lo < a < hi:
        raise InvalidDriftConstant(f"a = {a} must lie in ({lo}, {hi})")
    if require_records and not model.arrival.upper > a:
        raise InvalidDriftConstant(f"P(T > {a}) = 0; record-based detection cannot terminate")
    if not model.arrival.lower < a:
        raise NoRoot("interarrival times never fall below a; the walk cannot increase")
    theta = positive_root(lambda t: phi(model, a, t), start=1.0 / a, what="interarrival tilt root")
    if abs(phi(model, a, theta)) > PHI_TOL:
        raise NoRoot(f"tilt root residual {phi(model, a, theta):.3g} exceeds tolerance")
    if model.service.mgf_bound <= 0:
        raise MgfUnavailable("service law needs a finite mgf near the origin")
    if not model.service.upper > a:
        raise NoRoot("service times never exceed a; the service walk cannot increase")
    eta = positive_root(lambda e: psi(model.service, a, e), upper=model.service.mgf_bound,
                        start=1.0 / a, what="service tilt root")
    if abs(psi(model.service, a, eta)) > PHI_TOL:
        raise NoRoot(f"service tilt residual {psi(model.service, a, eta):.3g} exceeds tolerance")
    return TiltContext(
        a=a,
        theta=theta,
        m=math.log(c) / theta + slack,
        eta=eta,
        m_scalar=(1.0 / eta) if m_scalar is None else m_scalar,
        down_mult=int(down_mult),
        servers=c,
        tilted_arrival=model.arrival.tilt(-theta),
        tilted_service=model.service.tilt(eta),
    )


def sample_tilted_step(ctx: TiltContext, direction: int, rng: np.random.Generator, size: int):
    """Routing marks (0-based) and interarrival times under the tilt toward ``direction``."""
    c = ctx.servers
    if c == 1:
        u = np.zeros(size, dtype=np.int64)
    else:
        other = rng.integers(0, c - 1, size)
        other = other + (other >= direction)
        u = np.where(rng.random(size) < ctx.p_same, direction, other)
    t = np.asarray(ctx.tilted_arrival.sample(rng, size), dtype=float)
    return u, t


def sample_equilibrium(spec: DistributionSpec, rng: np.random.Generator, size=None):
    """Draw from the integrated-tail law with density P(X > y) / E X."""
    n = 1 if size is None else int(np.prod(size))
    mean = spec.mean
    out = np.empty(n)
    for k, u in enumerate(rng.random(n)):
        target = u * mean
        hi = spec.upper if math.isfinite(spec.upper) else max(spec.mean, 1e-12)
        while spec.partial_mean(hi) < target:
            hi *= 2.0
        out[k] = optimize.brentq(lambda y: spec.partial_mean(y) - target, 0.0, hi, xtol=1e-12, rtol=1e-12)
    return float(out[0]) if size is None else out.reshape(size)
