"""Job-size laws and the load/threshold formulas built on them.

All sizes are in units of work; a unit-speed server finishes one unit of
work per unit of time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INFINITE = math.inf


class DistributionError(ValueError):
    pass


class NoConstraint(Exception):
    """Raised by the threshold solvers when rho < (n-1)/n.

    In that regime every threshold keeps the small-job servers stable, so
    there is no critical threshold to report.
    """


@dataclass(frozen=True)
class SizeDistribution:
    kind: str
    alpha: float = 0.0
    x_min: float = 0.0
    x_max: float = INFINITE
    rate: float = 0.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind in ("pareto", "bpareto"):
            if not self.alpha > 1:
                raise DistributionError(f"pareto tail index must exceed 1, got {self.alpha}")
            if not self.x_min > 0:
                raise DistributionError(f"pareto scale must be positive, got {self.x_min}")
            if self.kind == "bpareto" and not self.x_max > self.x_min:
                raise DistributionError("bounded pareto needs xmax > xmin")
        elif self.kind == "exp":
            if not self.rate > 0:
                raise DistributionError(f"exponential rate must be positive, got {self.rate}")
        elif self.kind == "det":
            if not self.value > 0:
                raise DistributionError(f"deterministic value must be positive, got {self.value}")
        else:
            raise DistributionError(f"unknown distribution kind {self.kind!r}")

    def __str__(self):
        return to_spec(self)


def pareto(alpha: float, x_min: float = 1.0) -> SizeDistribution:
    return SizeDistribution("pareto", alpha=alpha, x_min=x_min)


def bounded_pareto(alpha: float, x_min: float, x_max: float) -> SizeDistribution:
    return SizeDistribution("bpareto", alpha=alpha, x_min=x_min, x_max=x_max)


def exponential(rate: float) -> SizeDistribution:
    return SizeDistribution("exp", rate=rate)


def deterministic(value: float) -> SizeDistribution:
    return SizeDistribution("det", value=value)


_SPEC_KEYS = {
    "pareto": ("alpha", "xmin"),
    "bpareto": ("alpha", "xmin", "xmax"),
    "exp": ("rate",),
    "det": ("value",),
}


def parse_dist(text: str) -> SizeDistribution:
    """Parse ``pareto:alpha=1.5,xmin=1`` style strings (case-insensitive)."""
    text = text.strip().lower()
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind not in _SPEC_KEYS:
        raise DistributionError(f"unknown distribution {kind!r}")
    params = {}
    for token in filter(None, (t.strip() for t in rest.split(","))):
        key, eq, val = token.partition("=")
        key = key.strip()
        if not eq or key not in _SPEC_KEYS[kind]:
            raise DistributionError(f"bad distribution parameter {token!r}")
        try:
            params[key] = float(val)
        except ValueError:
            raise DistributionError(f"bad distribution parameter {token!r}") from None
    missing = [k for k in _SPEC_KEYS[kind] if k not in params and k != "xmin"]
    if missing:
        raise DistributionError(f"{kind} needs {', '.join(missing)}")
    if kind == "pareto":
        return pareto(params["alpha"], params.get("xmin", 1.0))
    if kind == "bpareto":
        return bounded_pareto(params["alpha"], params.get("xmin", 1.0), params["xmax"])
    if kind == "exp":
        return exponential(params["rate"])
    return deterministic(params["value"])


def to_spec(dist: SizeDistribution) -> str:
    if dist.kind == "pareto":
        return f"pareto:alpha={dist.alpha!r},xmin={dist.x_min!r}"
    if dist.kind == "bpareto":
        return f"bpareto:alpha={dist.alpha!r},xmin={dist.x_min!r},xmax={dist.x_max!r}"
    if dist.kind == "exp":
        return f"exp:rate={dist.rate!r}"
    return f"det:value={dist.value!r}"


def tail(dist: SizeDistribution, t: float) -> float:
    """P{S > t}, right-continuous."""
    if dist.kind == "pareto":
        if t < dist.x_min:
            return 1.0
        return (t / dist.x_min) ** -dist.alpha
    if dist.kind == "bpareto":
        if t < dist.x_min:
            return 1.0
        if t >= dist.x_max:
            return 0.0
        a, lo, hi = dist.alpha, dist.x_min, dist.x_max
        trunc = (hi / lo) ** -a
        return ((t / lo) ** -a - trunc) / (1.0 - trunc)
    if dist.kind == "exp":
        return math.exp(-dist.rate * max(t, 0.0))
    return 1.0 if t < dist.value else 0.0


def quantile(dist: SizeDistribution, p: float) -> float:
    """Smallest t with P{S <= t} >= p."""
    if not 0.0 <= p < 1.0:
        raise DistributionError(f"quantile level must lie in [0, 1), got {p}")
    if dist.kind == "pareto":
        return dist.x_min * (1.0 - p) ** (-1.0 / dist.alpha)
    if dist.kind == "bpareto":
        a, lo, hi = dist.alpha, dist.x_min, dist.x_max
        trunc = (hi / lo) ** -a
        return lo * ((1.0 - p) * (1.0 - trunc) + trunc) ** (-1.0 / a)
    if dist.kind == "exp":
        return -math.log1p(-p) / dist.rate
    return dist.value


def mean(dist: SizeDistribution) -> float:
    if dist.kind == "pareto":
        return dist.alpha * dist.x_min / (dist.alpha - 1.0)
    if dist.kind == "bpareto":
        return _bpareto_partial_moment(dist, 1, dist.x_min)
    if dist.kind == "exp":
        return 1.0 / dist.rate
    return dist.value


def second_moment(dist: SizeDistribution) -> float:
    """E[S^2]; ``math.inf`` for a Pareto tail with alpha <= 2."""
    if dist.kind == "pareto":
        if dist.alpha <= 2.0:
            return INFINITE
        return dist.alpha * dist.x_min**2 / (dist.alpha - 2.0)
    if dist.kind == "bpareto":
        return _bpareto_partial_moment(dist, 2, dist.x_min)
    if dist.kind == "exp":
        return 2.0 / dist.rate**2
    return dist.value**2


def _bpareto_partial_moment(dist: SizeDistribution, k: int, x: float) -> float:
    # E[S^k 1{S > x}] for the bounded Pareto, x >= x_min
    a, lo, hi = dist.alpha, dist.x_min, dist.x_max
    x = min(max(x, lo), hi)
    norm = a * lo**a / (1.0 - (hi / lo) ** -a)
    if a == k:
        return norm * math.log(hi / x)
    return norm * (hi ** (k - a) - x ** (k - a)) / (k - a)


def partial_mean_above(dist: SizeDistribution, x: float) -> float:
    """E[S * 1{S > x}]."""
    if dist.kind == "pareto":
        x = max(x, dist.x_min)
        # alpha x_min^alpha x^(1-alpha) / (alpha - 1)
        return dist.alpha * dist.x_min / (dist.alpha - 1.0) * (x / dist.x_min) ** (1.0 - dist.alpha)
    if dist.kind == "bpareto":
        if x >= dist.x_max:
            return 0.0
        return _bpareto_partial_moment(dist, 1, x)
    if dist.kind == "exp":
        x = max(x, 0.0)
        return (x + 1.0 / dist.rate) * math.exp(-dist.rate * x)
    return dist.value if x < dist.value else 0.0


def sample(dist: SizeDistribution, u):
    """Inverse-transform sample; ``u`` is a uniform draw (scalar or array) in [0, 1)."""
    if np.ndim(u) == 0:
        return quantile(dist, float(u))
    u = np.asarray(u, dtype=np.float64)
    if dist.kind == "pareto":
        return dist.x_min * (1.0 - u) ** (-1.0 / dist.alpha)
    if dist.kind == "bpareto":
        a, lo, hi = dist.alpha, dist.x_min, dist.x_max
        trunc = (hi / lo) ** -a
        return lo * ((1.0 - u) * (1.0 - trunc) + trunc) ** (-1.0 / a)
    if dist.kind == "exp":
        return -np.log1p(-u) / dist.rate
    return np.full(u.shape, dist.value)


@dataclass(frozen=True)
class SystemParams:
    n: int
    rho: float
    dist: SizeDistribution

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DistributionError(f"server count must be a positive integer, got {self.n}")
        if not 0.0 <= self.rho < 1.0:
            raise DistributionError(f"load must lie in [0, 1), got {self.rho}")

    @property
    def lam(self) -> float:
        return self.n * self.rho / mean(self.dist)

    @property
    def resource(self) -> float:
        return self.n * self.rho

    @property
    def critical(self) -> bool:
        """True in the rho >= (n-1)/n regime."""
        return self.rho * self.n >= self.n - 1


def resource_above(params: SystemParams, x: float) -> float:
    """Resource requirement lambda * E[S 1{S > x}] of jobs larger than x."""
    if x < 0:
        raise DistributionError("threshold must be non-negative")
    if params.rho == 0.0:
        return 0.0
    # exact below the support, where every job counts
    if tail(params.dist, x) == 1.0:
        return params.resource
    return params.lam * partial_mean_above(params.dist, x)


def tags_large_load(params: SystemParams, d: float) -> float:
    """Load lambda * P{S>d} * (E[S | S>d] - d) seen by the size-oblivious big server."""
    if not d > 0:
        raise DistributionError("threshold must be positive")
    return _tags_load(params, d)


def _tags_load(params: SystemParams, d: float) -> float:
    return max(0.0, params.lam * (partial_mean_above(params.dist, d) - d * tail(params.dist, d)))


def _bisect_decreasing(f, target: float, lo: float, rtol: float = 1e-15) -> float:
    """Smallest x >= lo with f(x) <= target for non-increasing f.

    Returns inf when f stays above a non-positive target on every finite x,
    which is how an unbounded support meets the rho = (n-1)/n boundary.
    """
    if f(lo) <= target:
        return lo
    hi = max(lo, 1.0) * 2.0
    while f(hi) > target:
        hi *= 2.0
        if hi > 1e300:
            if target <= 0.0:
                return math.inf
            raise ArithmeticError("failed to bracket threshold root")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def solve_dstar(params: SystemParams) -> float:
    """Threshold d* at which jobs above d* carry exactly n*rho - (n-1)."""
    if not params.critical:
        raise NoConstraint("rho < (n-1)/n: every threshold keeps the small servers stable")
    target = params.resource - (params.n - 1)
    return _bisect_decreasing(lambda x: resource_above(params, x), target, 0.0)


def solve_tags_dstar(params: SystemParams) -> float:
    """Threshold at which the size-oblivious big server carries n*rho - (n-1)."""
    if not params.critical:
        raise NoConstraint("rho < (n-1)/n: every threshold keeps the small servers stable")
    target = params.resource - (params.n - 1)
    return _bisect_decreasing(lambda x: _tags_load(params, x), target, 0.0)


def threshold_for_big_load(params: SystemParams, target: float) -> float:
    """Smallest d with resource_above(d) = target."""
    return _bisect_decreasing(lambda x: resource_above(params, x), target, 0.0)


def threshold_for_tags_load(params: SystemParams, target: float) -> float:
    return _bisect_decreasing(lambda x: _tags_load(params, x), target, 0.0)
