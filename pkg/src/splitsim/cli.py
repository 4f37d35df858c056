"""Command-line experiment runner.

    splitsim run --preset exp1 --arrivals 1e6 --reps 2 --out results/
    splitsim run --n 3 --rho 0.5 --dist pareto:alpha=1.5 --policy split --out results/
    splitsim presets
    splitsim threshold --n 3 --rho 0.8 --mode big_load --target 0.45

Each (setting, policy, replication) writes a CSV of the normalized tail and
a JSON sidecar; after all replications finish, their histograms are summed
into a ``_merged`` CSV per policy.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import distributions as dists
from . import tailstats
from .distributions import DistributionError, NoConstraint, SizeDistribution, SystemParams
from .engine import ConfigError, ExperimentConfig
from .fast import simulate
from .policies import PolicySpec, check_compatible, format_policy, parse_policy

log = logging.getLogger("splitsim")

DEFAULT_ARRIVALS = 10_000_000
DEFAULT_WARMUP_FRAC = 0.01
CSV_HEADER = ("t", "ccdf_T", "denominator", "normalized")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


# ---------------------------------------------------------------------------
# thresholds

THRESHOLD_MODES = ("quantile", "big_load", "tags_load")


def threshold_helper(params: SystemParams, mode: str, target: float) -> float:
    """Threshold d from a size quantile or a target big-server load."""
    if mode == "quantile":
        if not 0.0 < target < 1.0:
            raise ConfigError("quantile target must lie in (0, 1)")
        return dists.quantile(params.dist, target)
    if mode not in ("big_load", "tags_load"):
        raise ConfigError(f"unknown threshold mode {mode!r}")
    if not 0.0 < target < params.resource:
        raise ConfigError(f"load target must lie in (0, {params.resource:g})")
    if params.critical:
        floor = params.resource - (params.n - 1)
        if target < floor:
            dstar = (dists.solve_dstar if mode == "big_load" else dists.solve_tags_dstar)(params)
            raise ConfigError(
                f"target {target:g} is below {floor:g}, the least load the big server must carry "
                f"to keep the small servers stable; any d above d*={dstar:.6g} is unstable")
    if mode == "big_load":
        return dists.threshold_for_big_load(params, target)
    return dists.threshold_for_tags_load(params, target)


def threshold_audit(params: SystemParams, spec: PolicySpec) -> dict:
    """Loads implied by a policy's threshold, for the metadata sidecar."""
    if spec.d is None:
        return {}
    out = {"d": spec.d, "r_above_d": dists.resource_above(params, spec.d)}
    if spec.kind == "tagsplit":
        out["rho_tags_large"] = dists.tags_large_load(params, spec.d)
        out["small_load"] = params.resource - out["rho_tags_large"]
    else:
        out["small_load"] = params.resource - out["r_above_d"]
    try:
        for key, solve in (("d_star", dists.solve_dstar), ("d_star_tags", dists.solve_tags_dstar)):
            dstar = solve(params)
            # on the rho = (n-1)/n boundary d* is infinite; JSON has no inf
            out[key] = dstar if math.isfinite(dstar) else None
    except NoConstraint:
        pass
    return out


def warn_if_unstable(params: SystemParams, spec: PolicySpec) -> bool:
    audit = threshold_audit(params, spec)
    if not audit:
        return False
    if audit["small_load"] >= params.n - 1:
        log.warning("%s: small-job servers carry load %.4g >= n-1 = %d; that subsystem is "
                    "unstable, running anyway", format_policy(spec), audit["small_load"], params.n - 1)
        return True
    return False


# ---------------------------------------------------------------------------
# presets

@dataclass(frozen=True)
class Setting:
    n: int
    rho: float
    dist: SizeDistribution

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.n, self.rho, self.dist)

    @property
    def label(self) -> str:
        return f"n{self.n}_rho{self.rho:g}_{dists.to_spec(self.dist).split(',')[0].replace(':', '-').replace('=', '')}"


@dataclass(frozen=True)
class SweepPoint:
    setting: Setting
    policy: str
    # how the threshold was chosen, e.g. {"mode": "quantile", "target": 0.99}
    provenance: dict = field(default_factory=dict, hash=False, compare=False)


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    points: tuple


PARETO_15 = dists.pareto(1.5, 1.0)
LOW = Setting(3, 0.5, PARETO_15)
EXP2 = Setting(3, 0.8, PARETO_15)
EXP3 = Setting(10, 0.94, PARETO_15)
ALPHA14 = Setting(3, 0.5, dists.pareto(1.4, 1.0))
ALPHA20 = Setting(3, 0.5, dists.pareto(2.0, 1.0))

QUANTILES = (0.99, 0.999, 0.9999)
BIG_LOADS = (0.45, 0.5, 0.6)
SEK_EPS = (1.0, 10.0, 50.0, 200.0)


def _thresh_points(setting, mode, targets, small, steal=True, kind="splitthresh"):
    out = []
    for target in targets:
        d = threshold_helper(setting.params, mode, target)
        if kind == "tagsplit":
            spec = PolicySpec("tagsplit", d=d)
        else:
            spec = PolicySpec("splitthresh", d=d, small=small, steal=steal)
        out.append(SweepPoint(setting, format_policy(spec), {"mode": mode, "target": target}))
    return out


def _baselines(setting, split=True):
    pols = ["fcfs", "srpt", "sek:eps=200"] + (["split"] if split else [])
    return [SweepPoint(setting, p) for p in pols]


def _figure_set(setting):
    if setting.params.critical:
        return _baselines(setting, split=False) + _thresh_points(setting, "big_load", BIG_LOADS, "srpt")
    return _baselines(setting) + _thresh_points(setting, "quantile", QUANTILES, "fcfs")


def _sek_sweep(setting):
    pts = [SweepPoint(setting, "srpt")]
    pts += [SweepPoint(setting, format_policy(PolicySpec("sek", eps=e))) for e in SEK_EPS]
    return pts


def build_presets() -> dict[str, Preset]:
    presets = [
        Preset("exp1", "n=3, rho=0.5, Pareto alpha=1.5: baselines, SPLIT and SplitThresh at "
               "size quantiles 0.99/0.999/0.9999 (low-load figure)", tuple(_figure_set(LOW))),
        Preset("exp1-thresh", "n=3, rho=0.5, alpha=1.5: SplitThresh (FCFS small servers, stealing) "
               "at size quantiles 0.99/0.999/0.9999",
               tuple(_thresh_points(LOW, "quantile", QUANTILES, "fcfs"))),
        Preset("exp2", "n=3, rho=0.8, alpha=1.5: baselines and SplitThresh (SRPT small servers) "
               "with big-server load 0.45/0.5/0.6 (high-load figure)", tuple(_figure_set(EXP2))),
        Preset("exp3", "n=10, rho=0.94, alpha=1.5: as exp2 (higher-load figure)",
               tuple(_figure_set(EXP3))),
        Preset("alpha14", "n=3, rho=0.5, Pareto alpha=1.4: exp1 policy set (tail-index figure)",
               tuple(_figure_set(ALPHA14))),
        Preset("alpha20", "n=3, rho=0.5, Pareto alpha=2.0: exp1 policy set (tail-index figure)",
               tuple(_figure_set(ALPHA20))),
        Preset("tags-low", "n=3, rho=0.5, alpha=1.5: TAG-SPLIT at size quantiles 0.99/0.999/0.9999",
               tuple(_thresh_points(LOW, "quantile", QUANTILES, None, kind="tagsplit"))),
        Preset("tags-high", "n=3, rho=0.8, alpha=1.5: TAG-SPLIT with big-server load 0.45/0.5/0.6",
               tuple(_thresh_points(EXP2, "tags_load", BIG_LOADS, None, kind="tagsplit"))),
        Preset("appendix-fcfs-vs-srpt", "SplitThresh with FCFS vs SRPT small servers in the "
               "exp1, exp2 and exp3 settings",
               tuple(_thresh_points(LOW, "quantile", QUANTILES, "fcfs")
                     + _thresh_points(LOW, "quantile", QUANTILES, "srpt")
                     + _thresh_points(EXP2, "big_load", BIG_LOADS, "fcfs")
                     + _thresh_points(EXP2, "big_load", BIG_LOADS, "srpt")
                     + _thresh_points(EXP3, "big_load", BIG_LOADS, "fcfs")
                     + _thresh_points(EXP3, "big_load", BIG_LOADS, "srpt"))),
        Preset("appendix-sek-sweep", "SEK-eps for eps in {1, 10, 50, 200} against SRPT-n in the "
               "exp1, exp2, exp3, alpha14 and alpha20 settings",
               tuple(p for s in (LOW, EXP2, EXP3, ALPHA14, ALPHA20) for p in _sek_sweep(s))),
    ]
    return {p.name: p for p in presets}


def list_presets() -> list[tuple[str, str]]:
    return [(p.name, p.description) for p in build_presets().values()]


# ---------------------------------------------------------------------------
# running

def write_tail_csv(path: Path, table: tailstats.NormalizedTail) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(table.t.tolist(), table.ccdf.tolist(), table.denominator.tolist(),
                       table.ratio.tolist()):
            w.writerow([repr(x) for x in row])


def _write_tables(stem: Path, est: tailstats.TailEstimate, params: SystemParams, spec: PolicySpec):
    written = []
    if est.total == 0:
        return written
    path = stem.with_name(stem.name + ".csv")
    write_tail_csv(path, tailstats.normalized_tail(est, params))
    written.append(path)
    if spec.d is not None:
        for cls in ("small", "big"):
            counts, total = est.class_counts(cls)
            if total == 0:
                continue
            path = stem.with_name(f"{stem.name}_{cls}.csv")
            write_tail_csv(path, tailstats.normalized_tail(est, params, counts=counts, total=total))
            written.append(path)
    return written


def _config_meta(cfg: ExperimentConfig, warmup_frac: float) -> dict:
    return {
        "n": cfg.n,
        "rho": cfg.rho,
        "dist": dists.to_spec(cfg.dist),
        "policy": cfg.policy,
        "arrivals": cfg.arrivals,
        "warmup": cfg.warmup,
        "warmup_frac": warmup_frac,
        "grid_points": cfg.grid_points,
        "probe": cfg.probe,
    }


def _probe_meta(probes: dict) -> dict:
    out = {}
    for name, p in probes.items():
        if name == "ljf":
            out["ljf"] = {"size_floor": p.size_floor, "qualifying": p.qualifying, "prompt": p.prompt,
                          "fraction": p.prompt / p.qualifying if p.qualifying else None}
        elif name == "pidle":
            out["pidle"] = {"tag_threshold": p.tag_threshold, "tagged_jobs": p.n_tagged,
                            "service_time": p.service_time,
                            "p_idle": p.idle_time / p.service_time if p.service_time > 0 else None}
    return out


def _run_replication(task: dict) -> dict:
    """Worker body: one simulation, its CSVs and sidecar.  Returns the raw
    histograms so the parent can merge replications."""
    cfg = task["config"]
    result = simulate(cfg, backend=task["backend"])
    spec = parse_policy(cfg.policy)
    stem = Path(task["stem"])
    files = _write_tables(stem, result.estimate, cfg.params, spec)
    meta = {
        "version": __version__,
        "preset": task["preset"],
        "replication": task["rep"],
        "seed": cfg.seed,
        "config": _config_meta(cfg, task["warmup_frac"]),
        "thresholds": dict(threshold_audit(cfg.params, spec), **task["provenance"]),
        "completions": result.completions,
        "events": result.events,
        "mean_response": result.mean_response,
        "wall_time": result.wall_time,
        "counters": result.counters,
        "probes": _probe_meta(result.probes),
        "files": [f.name for f in files],
    }
    with open(stem.with_name(stem.name + ".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return {"estimate": result.estimate, "probes": result.probes, "meta": meta}


@dataclass
class RunRequest:
    points: list
    out: Path
    arrivals: int = DEFAULT_ARRIVALS
    warmup_frac: float = DEFAULT_WARMUP_FRAC
    seed: int = 0
    reps: int = 1
    grid_points: int = 400
    probe: str | None = None
    preset: str | None = None
    jobs: int = 1
    backend: str = "fast"


def _merge_probes(parts: list[dict]) -> dict:
    out = {}
    for part in parts:
        for name, p in part.items():
            out[name] = p if name not in out else out[name].merge(p)
    return out


def run_experiment(req: RunRequest) -> list[Path]:
    """Run every sweep point ``reps`` times; returns the merged CSV paths."""
    if req.reps < 1:
        raise ConfigError("reps must be at least 1")
    if not 0.0 <= req.warmup_frac < 1.0:
        raise ConfigError("warmup fraction must lie in [0, 1)")
    warmup = int(req.arrivals * req.warmup_frac)
    tasks = []
    groups = []
    for point in req.points:
        spec = parse_policy(point.policy)
        check_compatible(spec, point.setting.n)
        warn_if_unstable(point.setting.params, spec)
        folder = req.out / point.setting.label
        idx = []
        for rep in range(1, req.reps + 1):
            cfg = ExperimentConfig(n=point.setting.n, rho=point.setting.rho, dist=point.setting.dist,
                                   policy=point.policy, arrivals=req.arrivals, seed=req.seed + rep,
                                   warmup=warmup, grid_points=req.grid_points, probe=req.probe)
            idx.append(len(tasks))
            tasks.append({"config": cfg, "stem": str(folder / f"{spec.label}_rep{rep}"),
                          "rep": rep, "preset": req.preset, "warmup_frac": req.warmup_frac,
                          "provenance": dict(point.provenance), "backend": req.backend})
        groups.append((point, spec, folder, idx))
    for _, _, folder, _ in groups:
        folder.mkdir(parents=True, exist_ok=True)

    if req.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=req.jobs) as pool:
            results = list(pool.map(_run_replication, tasks))
    else:
        results = []
        for task in tasks:
            log.info("running %s seed=%d", task["config"].policy, task["config"].seed)
            results.append(_run_replication(task))

    merged_paths = []
    for point, spec, folder, idx in groups:
        parts = [results[i] for i in idx]
        est = parts[0]["estimate"]
        for p in parts[1:]:
            est = est.merge(p["estimate"])
        stem = folder / f"{spec.label}_merged"
        files = _write_tables(stem, est, point.setting.params, spec)
        merged_paths.extend(files)
        probes = _merge_probes([p["probes"] for p in parts])
        meta = {
            "version": __version__,
            "preset": req.preset,
            "seeds": [p["meta"]["seed"] for p in parts],
            "config": dict(parts[0]["meta"]["config"]),
            "thresholds": parts[0]["meta"]["thresholds"],
            "completions": est.total,
            "mean_response": est.mean_response,
            "wall_time": sum(p["meta"]["wall_time"] for p in parts),
            "probes": _probe_meta(probes),
            "files": [f.name for f in files],
        }
        with open(stem.with_name(stem.name + ".json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    return merged_paths


# ---------------------------------------------------------------------------
# argument handling

RUN_KEYS = {
    "preset": str, "n": int, "rho": float, "dist": str, "policy": str, "arrivals": None,
    "warmup_frac": float, "seed": int, "reps": int, "out": str, "grid_points": int,
    "probe": str, "jobs": int, "backend": str,
}


def _count(text) -> int:
    """Accepts 10000000, 1e7 or 10_000_000."""
    try:
        v = float(str(text).replace("_", ""))
    except ValueError:
        raise ConfigError(f"bad count {text!r}") from None
    if v != int(v) or v < 1:
        raise ConfigError(f"bad count {text!r}")
    return int(v)


def _count_arg(text) -> int:
    try:
        return _count(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def read_config_file(path) -> dict:
    """key=value lines mirroring the run flags; ``policy`` may repeat."""
    out: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, val = line.partition("=")
            key = key.strip().lstrip("-").replace("-", "_")
            val = val.strip()
            if not eq or key not in RUN_KEYS:
                raise ConfigError(f"{path}:{lineno}: bad config line {line!r}")
            if key == "policy":
                out.setdefault("policy", []).append(val)
            elif key == "arrivals":
                out[key] = _count(val)
            else:
                try:
                    out[key] = RUN_KEYS[key](val)
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
    return out


class _Parser(argparse.ArgumentParser):
    # usage mistakes are config errors; argparse's own status 2 means I/O here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="splitsim", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"splitsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or a single setting")
    r.add_argument("--config", help="key=value file; flags given here override it")
    r.add_argument("--preset")
    r.add_argument("--n", type=int)
    r.add_argument("--rho", type=float)
    r.add_argument("--dist")
    r.add_argument("--policy", action="append", help="repeatable")
    r.add_argument("--arrivals", type=_count_arg)
    r.add_argument("--warmup-frac", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--out")
    r.add_argument("--grid-points", type=int)
    r.add_argument("--probe", choices=("pidle", "ljf"))
    r.add_argument("--jobs", type=int, help="worker processes for replications and sweep points")
    r.add_argument("--backend", choices=("fast", "python"))

    sub.add_parser("presets", help="list presets")

    t = sub.add_parser("threshold", help="resolve a threshold d")
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--rho", type=float, required=True)
    t.add_argument("--dist", default="pareto:alpha=1.5,xmin=1")
    t.add_argument("--mode", choices=THRESHOLD_MODES, required=True)
    t.add_argument("--target", type=float, required=True)
    return p


def _request_from_args(args) -> RunRequest:
    opts = read_config_file(args.config) if args.config else {}
    for key in RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    if "out" not in opts:
        raise ConfigError("--out is required")
    preset = opts.get("preset")
    if preset:
        presets = build_presets()
        if preset not in presets:
            raise ConfigError(f"unknown preset {preset!r}; see `splitsim presets`")
        points = list(presets[preset].points)
        if opts.get("policy"):
            wanted = {format_policy(parse_policy(p)) for p in opts["policy"]}
            points = [pt for pt in points if pt.policy in wanted]
            if not points:
                raise ConfigError("none of the requested policies is part of the preset")
    else:
        missing = [k for k in ("n", "rho", "dist", "policy") if not opts.get(k)]
        if missing:
            raise ConfigError("without --preset, need " + ", ".join("--" + m for m in missing))
        setting = Setting(opts["n"], opts["rho"], dists.parse_dist(opts["dist"]))
        setting.params  # validates n and rho
        points = [SweepPoint(setting, format_policy(parse_policy(p))) for p in opts["policy"]]
    return RunRequest(
        points=points,
        out=Path(opts["out"]),
        arrivals=opts.get("arrivals", DEFAULT_ARRIVALS),
        warmup_frac=opts.get("warmup_frac", DEFAULT_WARMUP_FRAC),
        seed=opts.get("seed", 0),
        reps=opts.get("reps", 1),
        grid_points=opts.get("grid_points", 400),
        probe=opts.get("probe"),
        preset=preset,
        jobs=opts.get("jobs", 1),
        backend=opts.get("backend", "fast"),
    )


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "presets":
            for name, desc in list_presets():
                print(f"{name:24s} {desc}")
            return EXIT_OK
        if args.command == "threshold":
            params = SystemParams(args.n, args.rho, dists.parse_dist(args.dist))
            d = threshold_helper(params, args.mode, args.target)
            print(repr(d))
            return EXIT_OK
        req = _request_from_args(args)
        t0 = time.perf_counter()
        paths = run_experiment(req)
        for path in paths:
            print(path)
        log.info("done in %.1fs", time.perf_counter() - t0)
        return EXIT_OK
    except (ConfigError, DistributionError, NoConstraint) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
