"""Scheduling policies behind the engine's Allocation contract.

Server indices 0..n-2 are the "regular" servers; index n-1 is the
dedicated server for the split policies (LJF, big-job SRPT or PS).
Every ``allocate`` call recomputes the allocation from the live jobs plus
a little private state, so policies stay easy to audit.
"""
from __future__ import annotations

from dataclasses import dataclass

from .engine import Allocation, ConfigError, Stage


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    d: float | None = None
    eps: float | None = None
    small: str = "fcfs"
    steal: bool = False
    sek_size: str = "remaining"

    def __str__(self):
        return format_policy(self)

    @property
    def label(self) -> str:
        """Short filesystem-friendly name."""
        if self.kind == "sek":
            return f"sek_eps{self.eps:g}" + ("_orig" if self.sek_size == "original" else "")
        if self.kind == "splitthresh":
            return f"splitthresh_d{self.d:.6g}_{self.small}" + ("_steal" if self.steal else "")
        if self.kind == "tagsplit":
            return f"tagsplit_d{self.d:.6g}"
        return self.kind


_KEYS = {
    "fcfs": (),
    "srpt": (),
    "ps": (),
    "split": (),
    "sek": ("eps", "size"),
    "splitthresh": ("d", "small", "steal"),
    "tagsplit": ("d",),
}

_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def parse_policy(text: str) -> PolicySpec:
    text = text.strip().lower()
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind not in _KEYS:
        raise ConfigError(f"unknown policy {kind!r}")
    raw = {}
    for token in filter(None, (t.strip() for t in rest.split(","))):
        key, eq, val = token.partition("=")
        key, val = key.strip(), val.strip()
        if not eq or key not in _KEYS[kind]:
            raise ConfigError(f"bad policy parameter {token!r}")
        raw[key] = val

    def num(key):
        if key not in raw:
            raise ConfigError(f"policy {kind} needs {key}=")
        try:
            v = float(raw[key])
        except ValueError:
            raise ConfigError(f"bad policy parameter '{key}={raw[key]}'") from None
        if not v > 0:
            raise ConfigError(f"policy parameter {key} must be positive")
        return v

    if kind == "sek":
        size = raw.get("size", "remaining")
        if size not in ("remaining", "original"):
            raise ConfigError(f"bad policy parameter 'size={size}'")
        return PolicySpec("sek", eps=num("eps"), sek_size=size)
    if kind == "splitthresh":
        small = raw.get("small", "fcfs")
        if small not in ("fcfs", "srpt"):
            raise ConfigError(f"bad policy parameter 'small={small}'")
        steal = raw.get("steal", "false")
        if steal not in _BOOL:
            raise ConfigError(f"bad policy parameter 'steal={steal}'")
        return PolicySpec("splitthresh", d=num("d"), small=small, steal=_BOOL[steal])
    if kind == "tagsplit":
        return PolicySpec("tagsplit", d=num("d"))
    return PolicySpec(kind)


def format_policy(spec: PolicySpec) -> str:
    if spec.kind == "sek":
        out = f"sek:eps={spec.eps!r}"
        return out + (",size=original" if spec.sek_size == "original" else "")
    if spec.kind == "splitthresh":
        return f"splitthresh:d={spec.d!r},small={spec.small},steal={'true' if spec.steal else 'false'}"
    if spec.kind == "tagsplit":
        return f"tagsplit:d={spec.d!r}"
    return spec.kind


def check_compatible(spec: PolicySpec, n: int) -> None:
    if spec.kind in ("split", "splitthresh", "tagsplit") and n < 2:
        raise ConfigError(f"{spec.kind} needs at least 2 servers")
    if spec.kind == "ps" and n != 1:
        raise ConfigError("ps is a single-server policy")


def make_policy(spec, n: int):
    if isinstance(spec, str):
        spec = parse_policy(spec)
    check_compatible(spec, n)
    if spec.kind == "fcfs":
        return FCFS()
    if spec.kind == "srpt":
        return SRPT()
    if spec.kind == "ps":
        return ProcessorSharing()
    if spec.kind == "sek":
        return SEK(spec.eps, original=spec.sek_size == "original")
    if spec.kind == "split":
        return Split()
    if spec.kind == "splitthresh":
        return SplitThresh(spec.d, spec.small, spec.steal)
    return TagSplit(spec.d)


def _srpt_key(job):
    return (job.remaining_size, job.id)


def _place(jobs, servers, out):
    """Put ``jobs`` on ``servers``; a job already on one of them stays put."""
    free = [s for s in servers]
    rest = []
    for job in jobs:
        if job.server in free:
            out[job.server] = job.id
            free.remove(job.server)
        else:
            rest.append(job)
    for job, s in zip(rest, free):
        out[s] = job.id


def _fill_fcfs(candidates, servers, out):
    """Non-preemptive FCFS: jobs keep their server, free ones take the
    lowest-id waiting candidates."""
    busy = {}
    waiting = []
    for job in candidates:
        if job.server in servers and job.server not in busy:
            busy[job.server] = job
        else:
            waiting.append(job)
    it = iter(waiting)
    for s in servers:
        if s in busy:
            out[s] = busy[s].id
        else:
            job = next(it, None)
            if job is not None:
                out[s] = job.id
    return [out[s] for s in servers if out[s] is not None]


class Policy:
    name = ""
    ps_server = None
    dedicated_server = None
    work_conserving = True

    def __init__(self):
        self.n = 0
        self.counters = {}

    def reset(self, n: int) -> None:
        self.n = n
        self.counters = {}

    def on_arrival(self, job, state) -> None:
        pass

    def on_completion(self, job, state) -> None:
        pass

    def on_checkpoint(self, job, state) -> None:
        pass

    def allocate(self, state) -> Allocation:
        raise NotImplementedError


class FCFS(Policy):
    name = "fcfs"

    def allocate(self, state):
        out = [None] * self.n
        _fill_fcfs(state.jobs.values(), list(range(self.n)), out)
        return Allocation(out)


class SRPT(Policy):
    name = "srpt"

    def allocate(self, state):
        out = [None] * self.n
        chosen = sorted(state.jobs.values(), key=_srpt_key)[: self.n]
        _place(chosen, list(range(self.n)), out)
        return Allocation(out)


class ProcessorSharing(Policy):
    name = "ps"
    ps_server = 0

    def allocate(self, state):
        return Allocation([tuple(state.jobs) if state.jobs else None])


class SEK(Policy):
    """SRPT-n, except that with exactly n+1 jobs, one above ``eps`` and the
    rest below, the largest runs in place of the second-largest."""

    name = "sek"

    def __init__(self, eps: float, original: bool = False):
        super().__init__()
        self.eps = eps
        self.original = original
        self._active = False

    def reset(self, n):
        super().reset(n)
        self._active = False
        self.counters = {"sek_exceptions": 0}

    def _above(self, job):
        if self.original:
            return job.original_size > self.eps
        return job.attained_service < job.original_size - self.eps

    def _below(self, job):
        if self.original:
            return job.original_size < self.eps
        return job.attained_service > job.original_size - self.eps

    def allocate(self, state):
        out = [None] * self.n
        jobs = list(state.jobs.values())
        key = (lambda j: (j.original_size, j.id)) if self.original else _srpt_key
        ordered = sorted(jobs, key=key)
        checkpoints = {}
        active = False
        if len(jobs) == self.n + 1:
            largest, others = ordered[-1], ordered[:-1]
            if self._above(largest) and all(self._below(j) for j in others):
                active = True
                chosen = ordered[:-2] + [largest]
                chosen.sort(key=_srpt_key)
                if not self.original:
                    checkpoints[largest.id] = largest.original_size - self.eps
        if active and not self._active:
            self.counters["sek_exceptions"] += 1
        self._active = active
        if not active:
            chosen = sorted(jobs, key=_srpt_key)[: self.n]
        _place(chosen, list(range(self.n)), out)
        return Allocation(out, checkpoints)


class Split(Policy):
    """n-1 SRPT servers plus one non-preemptive largest-job-first server."""

    name = "split"

    def reset(self, n):
        super().reset(n)
        self.dedicated_server = n - 1
        self.committed = None
        self.counters = {"ljf_fetches": 0}

    def on_completion(self, job, state):
        if job.id == self.committed:
            self.committed = None

    def allocate(self, state):
        n = self.n
        out = [None] * n
        if self.committed is None and state.jobs:
            big = max(state.jobs.values(), key=lambda j: (j.original_size, -j.id))
            self.committed = big.id
            self.counters["ljf_fetches"] += 1
        rest = [j for j in state.jobs.values() if j.id != self.committed]
        if self.committed is not None:
            out[n - 1] = self.committed
        rest.sort(key=_srpt_key)
        _place(rest[: n - 1], list(range(n - 1)), out)
        return Allocation(out)


class SplitThresh(Policy):
    """Size threshold d: jobs above d are served SRPT on the big server,
    the rest FCFS or SRPT on n-1 small servers.  With ``steal`` the big
    server takes a small job while no big job is present."""

    name = "splitthresh"
    work_conserving = False

    def __init__(self, d: float, small: str = "fcfs", steal: bool = False):
        super().__init__()
        self.d = d
        self.small = small
        self.steal = steal

    def reset(self, n):
        super().reset(n)
        self.dedicated_server = n - 1
        self.counters = {"steals": 0, "steal_preemptions": 0}

    def on_arrival(self, job, state):
        if job.original_size > self.d and self.steal:
            others = [j for j in state.jobs.values() if j is not job]
            if self.small == "srpt":
                # the SRPT pool rebalances, so with no big job present the big
                # server is busy iff n small jobs are live
                hit = (not any(j.original_size > self.d for j in others)
                       and sum(1 for j in others if j.original_size <= self.d) >= self.n)
            else:
                hit = any(j.server == self.n - 1 and j.original_size <= self.d for j in others)
            if hit:
                self.counters["steal_preemptions"] += 1

    def allocate(self, state):
        n, d = self.n, self.d
        out = [None] * n
        big = [j for j in state.jobs.values() if j.original_size > d]
        small = [j for j in state.jobs.values() if j.original_size <= d]
        small_servers = list(range(n - 1))
        if big:
            out[n - 1] = min(big, key=_srpt_key).id
        if self.small == "srpt":
            small.sort(key=_srpt_key)
            if self.steal and not big:
                _place(small[:n], list(range(n)), out)
            else:
                _place(small[: n - 1], small_servers, out)
            return Allocation(out)
        kept = None
        if self.steal and not big:
            kept = next((j for j in small if j.server == n - 1), None)
        pool = [j for j in small if j is not kept]
        served = set(_fill_fcfs(pool, small_servers, out))
        if self.steal and not big:
            if kept is None:
                kept = next((j for j in pool if j.id not in served), None)
                if kept is not None:
                    self.counters["steals"] += 1
            if kept is not None:
                out[n - 1] = kept.id
        return Allocation(out)


class TagSplit(Policy):
    """Size-oblivious split: FCFS on n-1 servers until d units of service,
    then the job moves to a processor-sharing server."""

    name = "tagsplit"
    work_conserving = False

    def __init__(self, d: float):
        super().__init__()
        self.d = d

    def reset(self, n):
        super().reset(n)
        self.ps_server = n - 1
        self.dedicated_server = n - 1
        self.shared = {}
        self.counters = {"migrations": 0}

    def on_checkpoint(self, job, state):
        job.stage = Stage.MIGRATED_TO_PS
        self.shared[job.id] = None
        self.counters["migrations"] += 1

    def on_completion(self, job, state):
        self.shared.pop(job.id, None)

    def allocate(self, state):
        n = self.n
        out = [None] * n
        fcfs = [j for j in state.jobs.values() if j.id not in self.shared]
        served = _fill_fcfs(fcfs, list(range(n - 1)), out)
        if self.shared:
            out[n - 1] = tuple(self.shared)
        return Allocation(out, {jid: self.d for jid in served})
