"""Event-driven M/G/n engine with preempt-resume service.

The engine owns time and work; a policy only decides, after every event,
which job each server works on.  Between events every served job drains
at a constant rate (1 on its own server, 1/k when k jobs share a
processor-sharing server), so the next event time is known exactly.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .distributions import SizeDistribution, SystemParams

EPS = 1e-12

# event kinds; the numeric value is the processing order at equal times
COMPLETION, CHECKPOINT, ARRIVAL = 0, 1, 2


class ConfigError(ValueError):
    pass


class Stage(enum.Enum):
    QUEUED = "queued"
    IN_SERVICE = "in_service"
    MIGRATED_TO_PS = "migrated_to_ps"
    COMPLETED = "completed"


@dataclass
class Job:
    id: int
    arrival_time: float
    original_size: float
    remaining_size: float
    attained_service: float = 0.0
    stage: Stage = Stage.QUEUED
    server: int | None = None
    # first time the job ran on the policy's dedicated (large-job) server
    dedicated_start: float | None = None
    completion_time: float | None = None

    @property
    def response_time(self) -> float | None:
        if self.completion_time is None:
            return None
        return self.completion_time - self.arrival_time


@dataclass
class Allocation:
    """Per-server directives: ``None`` (idle), a job id, or a tuple of ids
    shared equally (processor sharing).

    ``checkpoints`` maps a served job id to an attained-service level at
    which the engine must stop and hand control back to the policy.
    """

    servers: list
    checkpoints: dict = field(default_factory=dict)

    def rates(self) -> dict:
        out = {}
        for d in self.servers:
            if d is None:
                continue
            if isinstance(d, tuple):
                if d:
                    share = 1.0 / len(d)
                    for jid in d:
                        out[jid] = share
            else:
                out[d] = 1.0
        return out


@dataclass
class SystemState:
    n: int
    clock: float = 0.0
    jobs: dict = field(default_factory=dict)
    next_arrival_time: float = math.inf
    arrivals: int = 0
    completions: int = 0
    work_arrived: float = 0.0
    work_served: float = 0.0
    events: int = 0

    def work_in_system(self) -> float:
        return sum(j.remaining_size for j in self.jobs.values())


@dataclass
class ExperimentConfig:
    n: int
    rho: float
    dist: SizeDistribution
    policy: str
    arrivals: int
    seed: int = 0
    warmup: int | None = None
    grid_points: int = 400
    probe: str | None = None

    def __post_init__(self):
        if self.arrivals < 1:
            raise ConfigError("arrivals must be positive")
        if self.warmup is None:
            self.warmup = self.arrivals // 100
        if not 0 <= self.warmup < self.arrivals:
            raise ConfigError("need arrivals > warmup >= 0")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"load must lie in (0, 1), got {self.rho}")
        if self.probe not in (None, "pidle", "ljf"):
            raise ConfigError(f"unknown probe {self.probe!r}")

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.n, self.rho, self.dist)


@dataclass
class SimResult:
    arrivals: int
    completions: int
    mean_response: float
    counters: dict
    estimate: object = None
    responses: dict | None = None
    probes: dict = field(default_factory=dict)
    events: int = 0
    wall_time: float = 0.0

    @property
    def median_response(self) -> float | None:
        if self.estimate is None or self.estimate.total == 0:
            return None
        return self.estimate.percentile(0.5)

    def summary(self) -> dict:
        out = {
            "arrivals": self.arrivals,
            "completions": self.completions,
            "mean_response": self.mean_response,
            "median_response": self.median_response,
            "events": self.events,
        }
        out.update(self.counters)
        return out


def poisson_workload(params: SystemParams, arrivals: int, seed: int, chunk: int = 1 << 20
                     ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (arrival_times, sizes) chunks of a Poisson stream.

    Inter-arrival gaps and sizes come from two independent substreams of
    the master seed, so changing the policy never changes the sample path.
    """
    gap_ss, size_ss = np.random.SeedSequence(seed).spawn(2)
    gaps = np.random.default_rng(gap_ss)
    sizes = np.random.default_rng(size_ss)
    lam = params.lam
    from .distributions import sample

    t = 0.0
    left = arrivals
    while left > 0:
        m = min(chunk, left)
        times = np.cumsum(gaps.standard_exponential(m) / lam) + t
        t = float(times[-1])
        yield times, sample(params.dist, sizes.random(m))
        left -= m


def read_trace(path) -> list[tuple[float, float]]:
    """Read ``arrival_time,size`` lines; a non-numeric first line is a header."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                a, s = float(parts[0]), float(parts[1])
            except (ValueError, IndexError):
                if lineno == 0 and not out:
                    continue
                raise ConfigError(f"bad trace line {lineno + 1}: {line!r}") from None
            out.append((a, s))
    check_trace(out)
    return out


def write_trace(path, trace: Sequence[tuple[float, float]]) -> None:
    with open(path, "w") as fh:
        fh.write("arrival_time,size\n")
        for a, s in trace:
            fh.write(f"{a!r},{s!r}\n")


def check_trace(trace: Sequence[tuple[float, float]]) -> None:
    prev = -math.inf
    for i, (a, s) in enumerate(trace):
        if a < prev:
            raise ConfigError(f"trace not sorted by arrival time at entry {i}")
        if not s > 0:
            raise ConfigError(f"trace entry {i} has non-positive size {s}")
        if a < 0:
            raise ConfigError(f"trace entry {i} arrives before time 0")
        prev = a


class Simulator:
    """Single-run engine.  ``sinks`` receive completed jobs via
    ``on_completion(job)`` and, when they define it, every inter-event
    interval via ``on_interval(state, allocation, rates, dt)``."""

    def __init__(self, n: int, policy, sinks: Iterable = (), warmup: int = 0):
        self.policy = policy
        self.state = SystemState(n=n)
        self.warmup = warmup
        self.sinks = list(sinks)
        self._interval_sinks = [s for s in self.sinks if hasattr(s, "on_interval")]
        self.policy.reset(n)
        self.allocation: Allocation | None = None

    def run(self, stream: Iterable[tuple[np.ndarray, np.ndarray]]) -> SystemState:
        """Feed every arrival of ``stream`` and drain the system."""
        pending = self._arrivals(stream)
        nxt = next(pending, None)
        st = self.state
        while True:
            st.next_arrival_time = nxt[0] if nxt is not None else math.inf
            if nxt is None and not st.jobs:
                break
            consumed = self.step(nxt)
            if consumed:
                nxt = next(pending, None)
        return st

    @staticmethod
    def _arrivals(stream):
        for times, sizes in stream:
            yield from zip(times.tolist(), sizes.tolist())

    def step(self, nxt) -> bool:
        """Process one event; returns True when it was the pending arrival."""
        st = self.state
        alloc = self.policy.allocate(st)
        rates = self._apply(alloc)
        self.allocation = alloc

        best_t, best_kind, best_id = math.inf, ARRIVAL, -1
        if nxt is not None:
            best_t = nxt[0]
        for jid, job in st.jobs.items():
            r = rates.get(jid, 0.0)
            if job.remaining_size <= EPS:
                t = st.clock
            elif r > 0.0:
                t = st.clock + job.remaining_size / r
            else:
                continue
            if (t, COMPLETION, jid) < (best_t, best_kind, best_id):
                best_t, best_kind, best_id = t, COMPLETION, jid
        for jid, level in alloc.checkpoints.items():
            job = st.jobs[jid]
            r = rates.get(jid, 0.0)
            if r <= 0.0 or level >= job.original_size:
                continue
            # a level reached during a tied event still fires, at once
            t = st.clock + max(0.0, level - job.attained_service) / r
            if (t, CHECKPOINT, jid) < (best_t, best_kind, best_id):
                best_t, best_kind, best_id = t, CHECKPOINT, jid

        if best_t == math.inf:
            raise RuntimeError("engine stalled: live jobs but no service and no arrivals")

        dt = best_t - st.clock
        if dt > 0.0:
            for sink in self._interval_sinks:
                sink.on_interval(st, alloc, rates, dt)
            for jid, r in rates.items():
                job = st.jobs[jid]
                work = min(r * dt, job.remaining_size)
                job.remaining_size -= work
                job.attained_service += work
                st.work_served += work
            st.clock = best_t
        st.events += 1

        if best_kind == COMPLETION:
            job = st.jobs.pop(best_id)
            st.work_served += job.remaining_size
            job.remaining_size = 0.0
            job.attained_service = job.original_size
            job.stage = Stage.COMPLETED
            job.completion_time = st.clock
            st.completions += 1
            self.policy.on_completion(job, st)
            if job.id >= self.warmup:
                for sink in self.sinks:
                    sink.on_completion(job)
            return False
        if best_kind == CHECKPOINT:
            job = st.jobs[best_id]
            level = alloc.checkpoints[best_id]
            job.attained_service = level
            job.remaining_size = job.original_size - level
            self.policy.on_checkpoint(job, st)
            return False

        arr_t, size = nxt
        job = Job(id=st.arrivals, arrival_time=arr_t, original_size=size, remaining_size=size)
        st.jobs[job.id] = job
        st.arrivals += 1
        st.work_arrived += size
        self.policy.on_arrival(job, st)
        return True

    def _apply(self, alloc: Allocation) -> dict:
        st = self.state
        if len(alloc.servers) != st.n:
            raise RuntimeError(f"allocation lists {len(alloc.servers)} servers, system has {st.n}")
        seen = set()
        ps = getattr(self.policy, "ps_server", None)
        dedicated = getattr(self.policy, "dedicated_server", None)
        for job in st.jobs.values():
            job.server = None
        for s, d in enumerate(alloc.servers):
            if d is None:
                continue
            ids = d if isinstance(d, tuple) else (d,)
            if isinstance(d, tuple) and s != ps:
                raise RuntimeError(f"server {s} is not a processor-sharing server")
            for jid in ids:
                if jid in seen or jid not in st.jobs:
                    raise RuntimeError(f"job {jid} allocated twice or not live")
                seen.add(jid)
                job = st.jobs[jid]
                job.server = s
                if s == dedicated and job.dedicated_start is None:
                    job.dedicated_start = st.clock
        for jid in alloc.checkpoints:
            if jid not in seen:
                raise RuntimeError(f"checkpoint on unserved job {jid}")
        for job in st.jobs.values():
            if job.stage is not Stage.MIGRATED_TO_PS:
                job.stage = Stage.QUEUED if job.server is None else Stage.IN_SERVICE
        return alloc.rates()


class ConservationAudit:
    """Checks, on every inter-event interval, that the total service rate
    equals min(live jobs, n) and that work is accounted for."""

    def __init__(self, work_tol: float = 1e-9):
        self.intervals = 0
        self.rate_violations = 0
        self.first_violation = None
        self.work_tol = work_tol
        self.max_work_gap = 0.0

    def on_interval(self, state, alloc, rates, dt):
        self.intervals += 1
        total = sum(rates.values())
        want = min(len(state.jobs), state.n)
        if abs(total - want) > 1e-9:
            self.rate_violations += 1
            if self.first_violation is None:
                self.first_violation = (state.clock, total, want)
        gap = abs(state.work_arrived - state.work_in_system() - state.work_served)
        self.max_work_gap = max(self.max_work_gap, gap)

    def on_completion(self, job):
        pass

    @property
    def ok(self) -> bool:
        return self.rate_violations == 0


class TagAudit:
    """Watches a migrating policy: the most service any job gets before it
    reaches the PS server, and the smallest job ever seen there."""

    def __init__(self, ps_server: int):
        self.ps_server = ps_server
        self.max_stage1_attained = 0.0
        self.min_ps_size = math.inf

    def on_interval(self, state, alloc, rates, dt):
        for jid, r in rates.items():
            job = state.jobs[jid]
            if job.server == self.ps_server:
                self.min_ps_size = min(self.min_ps_size, job.original_size)
            elif job.stage is not Stage.MIGRATED_TO_PS:
                reached = job.attained_service + min(r * dt, job.remaining_size)
                self.max_stage1_attained = max(self.max_stage1_attained, reached)

    def on_completion(self, job):
        pass


class ResponseLog:
    """Keeps every post-warmup (size, response) pair; for traces and tests."""

    def __init__(self):
        self.responses = {}
        self.sizes = {}
        self.jobs = {}

    def on_completion(self, job):
        self.responses[job.id] = job.response_time
        self.sizes[job.id] = job.original_size
        self.jobs[job.id] = job


def simulate_python(config: ExperimentConfig, policy=None, sinks: Iterable = (),
                    estimate=None) -> SimResult:
    """Run ``config`` on the pure-Python engine."""
    from . import policies, tailstats

    if policy is None:
        policy = policies.make_policy(config.policy, config.n)
    sinks = list(sinks)
    if estimate is None:
        estimate = tailstats.TailEstimate.for_config(config)
    sinks.append(estimate)
    probes = {}
    if config.probe == "ljf":
        p = tailstats.LjfProbe(tailstats.default_ljf_floor(config.dist))
        sinks.append(p)
        probes["ljf"] = p
    elif config.probe == "pidle":
        p = tailstats.PackingProbe(tailstats.default_tag_threshold(config.dist), warmup=config.warmup)
        sinks.append(p)
        probes["pidle"] = p
    t0 = time.perf_counter()
    sim = Simulator(config.n, policy, sinks, warmup=config.warmup)
    st = sim.run(poisson_workload(config.params, config.arrivals, config.seed))
    return SimResult(
        arrivals=st.arrivals,
        completions=estimate.total,
        mean_response=estimate.mean_response,
        counters=dict(policy.counters),
        estimate=estimate,
        probes=probes,
        events=st.events,
        wall_time=time.perf_counter() - t0,
    )


def run_trace(trace: Sequence[tuple[float, float]], n: int, policy, sinks: Iterable = ()
              ) -> SimResult:
    """Run an explicit arrival list; every job is reported (no warmup)."""
    from . import policies

    check_trace(trace)
    if isinstance(policy, str):
        policy = policies.make_policy(policy, n)
    log = ResponseLog()
    sim = Simulator(n, policy, [log, *sinks], warmup=0)
    if trace:
        arr = np.array([a for a, _ in trace], dtype=np.float64)
        siz = np.array([s for _, s in trace], dtype=np.float64)
        stream = [(arr, siz)]
    else:
        stream = []
    st = sim.run(stream)
    resp = log.responses
    mean_t = sum(resp.values()) / len(resp) if resp else math.nan
    return SimResult(
        arrivals=st.arrivals,
        completions=st.completions,
        mean_response=mean_t,
        counters=dict(policy.counters),
        responses=resp,
        events=st.events,
        probes={"jobs": log.jobs},
    )
