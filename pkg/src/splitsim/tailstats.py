"""Streaming response-time tails on a fixed log grid, plus the normalized
tail and the two probes (LJF promptness, packing idleness).

Raw samples are never stored: each completion bumps one histogram bin, and
exceedance counts are suffix sums of the histogram.  Counts are exact at
grid points, so percentiles are only as fine as the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import distributions as dists
from .distributions import SizeDistribution, SystemParams

MIN_DENOMINATOR = 1e-300


class EmptyEstimate(ValueError):
    pass


class OutOfGrid(ValueError):
    pass


def default_grid(dist: SizeDistribution, points: int = 400) -> np.ndarray:
    lo = dists.quantile(dist, 0.5)
    hi = dists.quantile(dist, 1.0 - 1e-8) * 10.0
    return np.geomspace(lo, hi, points)


def decile_edges(dist: SizeDistribution) -> np.ndarray:
    return np.array([dists.quantile(dist, k / 10.0) for k in range(1, 10)])


def default_ljf_floor(dist: SizeDistribution) -> float:
    return dists.quantile(dist, 0.9999)


def default_tag_threshold(dist: SizeDistribution) -> float:
    return dists.quantile(dist, 1.0 - 1e-4)


class TailEstimate:
    """Exceedance counts of response time T (and of size S, for the
    pathwise T >= S check) on a grid, optionally split by size class."""

    def __init__(self, grid, class_threshold: float | None = None, edges=None):
        self.grid = np.asarray(grid, dtype=np.float64)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        m = len(self.grid) + 1
        self.class_threshold = class_threshold
        self.edges = None if edges is None else np.asarray(edges, dtype=np.float64)
        self.hist_t = np.zeros(m, dtype=np.int64)
        self.hist_s = np.zeros(m, dtype=np.int64)
        # rows: small (S <= d), big (S > d), then ten size deciles
        self.hist_class = np.zeros((12, m), dtype=np.int64)
        self.sum_t = 0.0
        self.sum_t2 = 0.0

    @classmethod
    def for_config(cls, config) -> "TailEstimate":
        from .policies import parse_policy

        spec = parse_policy(config.policy)
        return cls(default_grid(config.dist, config.grid_points),
                   class_threshold=spec.d, edges=decile_edges(config.dist))

    @property
    def total(self) -> int:
        return int(self.hist_t.sum())

    @property
    def mean_response(self) -> float:
        n = self.total
        return self.sum_t / n if n else math.nan

    @property
    def second_moment(self) -> float:
        n = self.total
        return self.sum_t2 / n if n else math.nan

    def record(self, original_size: float, response_time: float) -> None:
        if response_time < 0:
            raise ValueError("negative response time")
        g = self.grid
        bt = np.searchsorted(g, response_time, "left")
        self.hist_t[bt] += 1
        self.hist_s[np.searchsorted(g, original_size, "left")] += 1
        if self.class_threshold is not None:
            self.hist_class[0 if original_size <= self.class_threshold else 1, bt] += 1
        if self.edges is not None:
            self.hist_class[2 + np.searchsorted(self.edges, original_size, "left"), bt] += 1
        self.sum_t += response_time
        self.sum_t2 += response_time * response_time

    def on_completion(self, job) -> None:
        self.record(job.original_size, job.response_time)

    @staticmethod
    def _exceed(hist) -> np.ndarray:
        # c_j = #{values > t_j} = sum of bins j+1 .. J
        return np.cumsum(hist[::-1])[::-1][1:]

    def counts(self) -> np.ndarray:
        return self._exceed(self.hist_t)

    def size_counts(self) -> np.ndarray:
        return self._exceed(self.hist_s)

    def class_counts(self, name: str) -> tuple[np.ndarray, int]:
        """(exceedance counts, class total) for ``small``, ``big`` or ``decileK``."""
        if name == "small":
            row = 0
        elif name == "big":
            row = 1
        elif name.startswith("decile"):
            row = 2 + int(name[6:])
        else:
            raise KeyError(name)
        h = self.hist_class[row]
        return self._exceed(h), int(h.sum())

    def _require_data(self):
        if self.total == 0:
            raise EmptyEstimate("no completions recorded")

    def ccdf_at_grid(self) -> np.ndarray:
        self._require_data()
        return self.counts() / self.total

    def ccdf(self, t: float) -> float:
        """P{T > t}; exact at grid points, step-evaluated between them."""
        self._require_data()
        j = np.searchsorted(self.grid, t, "right") - 1
        if j < 0:
            raise OutOfGrid(f"t={t} lies below the grid")
        return float(self.counts()[j] / self.total)

    def percentile(self, p: float) -> float:
        """Smallest grid point t_j with P{T > t_j} <= 1 - p."""
        if not 0.0 < p < 1.0:
            raise ValueError("percentile level must lie in (0, 1)")
        self._require_data()
        n = self.total
        allowed = (1.0 - p) * n
        c = self.counts()
        if allowed < 1.0 or c[-1] > allowed:
            raise OutOfGrid(f"level {p} is not resolvable with {n} samples on this grid")
        return float(self.grid[np.argmax(c <= allowed)])

    def merge(self, other: "TailEstimate") -> "TailEstimate":
        if not np.array_equal(self.grid, other.grid):
            raise ValueError("cannot merge estimates on different grids")
        out = TailEstimate(self.grid, self.class_threshold, self.edges)
        out.hist_t = self.hist_t + other.hist_t
        out.hist_s = self.hist_s + other.hist_s
        out.hist_class = self.hist_class + other.hist_class
        out.sum_t = self.sum_t + other.sum_t
        out.sum_t2 = self.sum_t2 + other.sum_t2
        return out

    def dominates_size(self) -> bool:
        """Pathwise T >= S implies the T exceedance counts dominate the S ones."""
        return bool(np.all(self.counts() >= self.size_counts()))


@dataclass
class NormalizedTail:
    t: np.ndarray
    ccdf: np.ndarray
    denominator: np.ndarray
    ratio: np.ndarray

    def __len__(self):
        return len(self.t)

    def at(self, t: float) -> float:
        """Ratio at the emitted grid point nearest ``t`` (in log scale)."""
        if len(self.t) == 0:
            raise EmptyEstimate("no resolvable rows")
        j = int(np.argmin(np.abs(np.log(self.t) - math.log(t))))
        return float(self.ratio[j])


def lower_bound_scale(params: SystemParams) -> float:
    """Scale c in the lower-bound denominator P{S > c t}."""
    if params.critical:
        return params.n * (1.0 - params.rho)
    return 1.0


def normalized_tail(estimate: TailEstimate, params: SystemParams, scale: float | None = None,
                    counts=None, total: int | None = None) -> NormalizedTail:
    """P{T>t} over P{S>t} (rho < (n-1)/n) or P{S>n(1-rho)t} otherwise.

    Rows with no exceedances or a vanishing denominator are dropped.
    ``scale`` overrides the regime's denominator scale.
    """
    if counts is None:
        counts, total = estimate.counts(), estimate.total
    if not total:
        raise EmptyEstimate("no completions recorded")
    if scale is None:
        scale = lower_bound_scale(params)
    grid = estimate.grid
    den = np.array([dists.tail(params.dist, scale * t) for t in grid])
    keep = (counts > 0) & (den >= MIN_DENOMINATOR)
    ccdf = counts[keep] / total
    return NormalizedTail(grid[keep], ccdf, den[keep], ccdf / den[keep])


class LjfProbe:
    """Fraction of large jobs whose first dedicated-server service starts
    within sqrt(size) of arrival."""

    def __init__(self, size_floor: float):
        self.size_floor = size_floor
        self.qualifying = 0
        self.prompt = 0

    def on_completion(self, job):
        x = job.original_size
        if x < self.size_floor:
            return
        self.qualifying += 1
        if job.dedicated_start is not None and job.dedicated_start - job.arrival_time <= math.sqrt(x):
            self.prompt += 1

    def merge(self, other: "LjfProbe") -> "LjfProbe":
        out = LjfProbe(self.size_floor)
        out.qualifying = self.qualifying + other.qualifying
        out.prompt = self.prompt + other.prompt
        return out


def ljf_promptness(probe: LjfProbe) -> float:
    if probe.qualifying == 0:
        raise EmptyEstimate("no job reached the size floor")
    return probe.prompt / probe.qualifying


class PackingProbe:
    """Idle capacity of the other servers while a tagged (very large) job
    is receiving service."""

    def __init__(self, tag_threshold: float, warmup: int = 0, keep_jobs: bool = False):
        self.tag_threshold = tag_threshold
        self.warmup = warmup
        self.service_time = 0.0
        self.idle_time = 0.0
        self.n_tagged = 0
        self.jobs = {} if keep_jobs else None

    def on_interval(self, state, alloc, rates, dt):
        n = state.n
        if n < 2:
            raise ValueError("packing probe needs at least two servers")
        busy = sum(1 for d in alloc.servers if d is not None and d != ())
        idle_frac = (n - busy) / (n - 1)
        for jid, r in rates.items():
            job = state.jobs[jid]
            if r > 0 and job.original_size >= self.tag_threshold and jid >= self.warmup:
                self.service_time += dt
                self.idle_time += dt * idle_frac
                if self.jobs is not None:
                    rec = self.jobs.setdefault(jid, [job.original_size, 0.0, 0.0])
                    rec[1] += dt
                    rec[2] += dt * idle_frac

    def on_completion(self, job):
        if job.original_size >= self.tag_threshold and job.id >= self.warmup:
            self.n_tagged += 1

    def merge(self, other: "PackingProbe") -> "PackingProbe":
        out = PackingProbe(self.tag_threshold, self.warmup)
        out.service_time = self.service_time + other.service_time
        out.idle_time = self.idle_time + other.idle_time
        out.n_tagged = self.n_tagged + other.n_tagged
        return out


def p_idle(probe: PackingProbe) -> float:
    if probe.service_time <= 0.0:
        raise EmptyEstimate("no tagged job received service")
    return probe.idle_time / probe.service_time
