"""Closed-form queueing results and a brute-force reference simulator.

The reference simulator is deliberately naive and self-contained: it
re-derives every allocation from the rule text on each event using plain
lists, and imports nothing from the engine or the policy module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import distributions as dists


class Unstable(ValueError):
    pass


class Inapplicable(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    name: str
    value: float
    units: str = "time"


def mm1_mean_response(lam: float, mu: float) -> OracleResult:
    if lam >= mu:
        raise Unstable(f"M/M/1 unstable: lambda={lam} >= mu={mu}")
    return OracleResult("mm1_mean_response", 1.0 / (mu - lam))


def pk_mean_wait(lam: float, dist) -> OracleResult:
    """Pollaczek-Khinchine mean waiting time of the M/G/1 FCFS queue."""
    es2 = dists.second_moment(dist)
    if math.isinf(es2):
        raise Inapplicable("size distribution has an infinite second moment")
    rho = lam * dists.mean(dist)
    if rho >= 1:
        raise Unstable(f"M/G/1 unstable: rho={rho}")
    return OracleResult("pk_mean_wait", lam * es2 / (2.0 * (1.0 - rho)))


def ps_mean_response(lam: float, dist) -> OracleResult:
    rho = lam * dists.mean(dist)
    if rho >= 1:
        raise Unstable(f"M/G/1-PS unstable: rho={rho}")
    return OracleResult("ps_mean_response", dists.mean(dist) / (1.0 - rho))


# ---------------------------------------------------------------------------
# reference simulator

_TOL = 1e-12


def _parse(policy: str):
    name, _, rest = policy.strip().lower().partition(":")
    opts = {}
    for tok in rest.split(","):
        if "=" in tok:
            k, v = tok.split("=", 1)
            opts[k.strip()] = v.strip()
    return name, opts


def reference_simulate(trace, policy: str, n: int) -> list[float]:
    """Response times, in arrival order, of every job in ``trace``.

    ``trace`` is a list of (arrival_time, size) sorted by time.
    """
    name, opts = _parse(policy)
    d = float(opts["d"]) if "d" in opts else None
    eps = float(opts["eps"]) if "eps" in opts else None
    sek_original = opts.get("size") == "original"
    small_srpt = opts.get("small", "fcfs") == "srpt"
    steal = opts.get("steal", "false") in ("true", "1", "yes", "on")

    clock = 0.0
    nxt = 0
    live = []  # dicts
    out = [None] * len(trace)
    mem = {"ljf": None}

    def decide():
        """Return (server -> list of job dicts, checkpoint dict id -> attained level)."""
        srv = [[] for _ in range(n)]
        ck = {}
        by_rem = sorted(live, key=lambda j: (j["rem"], j["id"]))

        def fcfs_fill(cands, servers):
            taken = set()
            holders = {}
            for j in cands:
                if j["srv"] in servers and j["srv"] not in holders:
                    holders[j["srv"]] = j
            for s in servers:
                if s in holders:
                    srv[s].append(holders[s])
                    taken.add(holders[s]["id"])
            for s in servers:
                if s in holders:
                    continue
                for j in cands:
                    if j["id"] not in taken:
                        srv[s].append(j)
                        taken.add(j["id"])
                        break
            return taken

        def srpt_fill(cands, servers):
            cands = sorted(cands, key=lambda j: (j["rem"], j["id"]))[: len(servers)]
            for s, j in zip(servers, cands):
                srv[s].append(j)

        if name == "fcfs":
            fcfs_fill(live, list(range(n)))
        elif name == "srpt":
            srpt_fill(live, list(range(n)))
        elif name == "ps":
            srv[0] = list(live)
        elif name == "sek":
            chosen = by_rem[:n]
            if len(live) == n + 1:
                if sek_original:
                    order = sorted(live, key=lambda j: (j["size"], j["id"]))
                    big, rest = order[-1], order[:-1]
                    hit = big["size"] > eps and all(j["size"] < eps for j in rest)
                else:
                    big, rest = by_rem[-1], by_rem[:-1]
                    hit = big["rem"] > eps and all(j["rem"] < eps for j in rest)
                if hit:
                    chosen = [j for j in live if j is not order_second(rest)]
                    if not sek_original:
                        ck[big["id"]] = big["size"] - eps
            for s, j in enumerate(chosen):
                srv[s].append(j)
        elif name == "split":
            if mem["ljf"] is not None and all(j["id"] != mem["ljf"] for j in live):
                mem["ljf"] = None
            if mem["ljf"] is None and live:
                best = live[0]
                for j in live:
                    if j["size"] > best["size"]:
                        best = j
                mem["ljf"] = best["id"]
            others = [j for j in live if j["id"] != mem["ljf"]]
            for j in live:
                if j["id"] == mem["ljf"]:
                    srv[n - 1].append(j)
            srpt_fill(others, list(range(n - 1)))
        elif name == "splitthresh":
            bigs = [j for j in live if j["size"] > d]
            smalls = [j for j in live if j["size"] <= d]
            if bigs:
                srv[n - 1].append(min(bigs, key=lambda j: (j["rem"], j["id"])))
            if small_srpt:
                if steal and not bigs:
                    srpt_fill(smalls, list(range(n)))
                else:
                    srpt_fill(smalls, list(range(n - 1)))
            else:
                keep = None
                if steal and not bigs:
                    for j in smalls:
                        if j["srv"] == n - 1:
                            keep = j
                pool = [j for j in smalls if j is not keep]
                taken = fcfs_fill(pool, list(range(n - 1)))
                if steal and not bigs:
                    if keep is None:
                        for j in pool:
                            if j["id"] not in taken:
                                keep = j
                                break
                    if keep is not None:
                        srv[n - 1].append(keep)
        elif name == "tagsplit":
            stage1 = [j for j in live if not j["ps"]]
            taken = fcfs_fill(stage1, list(range(n - 1)))
            for j in stage1:
                if j["id"] in taken:
                    ck[j["id"]] = d
            srv[n - 1] = [j for j in live if j["ps"]]
        else:
            raise ValueError(f"reference engine does not know policy {name!r}")
        return srv, ck

    def order_second(rest):
        # the second-largest overall is the largest of the rest
        if sek_original:
            return max(rest, key=lambda j: (j["size"], j["id"]))
        return max(rest, key=lambda j: (j["rem"], j["id"]))

    while nxt < len(trace) or live:
        srv, ck = decide()
        rate = {}
        for s in range(n):
            for j in srv[s]:
                j["srv"] = s
                rate[j["id"]] = 1.0 / len(srv[s])
        for j in live:
            if j["id"] not in rate:
                j["srv"] = None

        # candidate events as (time, kind, id); kind 0 completion, 1 checkpoint, 2 arrival
        cands = []
        if nxt < len(trace):
            cands.append((trace[nxt][0], 2, nxt))
        for j in live:
            r = rate.get(j["id"], 0.0)
            if j["rem"] <= _TOL:
                cands.append((clock, 0, j["id"]))
            elif r > 0:
                cands.append((clock + j["rem"] / r, 0, j["id"]))
            if j["id"] in ck and r > 0:
                lvl = ck[j["id"]]
                if lvl < j["size"]:
                    cands.append((clock + max(0.0, lvl - j["att"]) / r, 1, j["id"]))
        t, kind, jid = min(cands)
        dt = t - clock
        if dt > 0:
            for j in live:
                r = rate.get(j["id"], 0.0)
                if r > 0:
                    w = min(r * dt, j["rem"])
                    j["rem"] -= w
                    j["att"] += w
            clock = t
        if kind == 2:
            a, s = trace[nxt]
            live.append({"id": nxt, "arr": a, "size": s, "rem": s, "att": 0.0,
                         "srv": None, "ps": False})
            nxt += 1
        elif kind == 1:
            j = next(j for j in live if j["id"] == jid)
            j["att"] = ck[jid]
            j["rem"] = j["size"] - ck[jid]
            if name == "tagsplit":
                j["ps"] = True
            else:
                j["rem"] = eps
        else:
            j = next(j for j in live if j["id"] == jid)
            live.remove(j)
            out[jid] = clock - j["arr"]
    return out
