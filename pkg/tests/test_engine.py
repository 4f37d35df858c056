import math

import numpy as np
import pytest

from splitsim import distributions as dists
from splitsim.engine import (Allocation, ConfigError, ConservationAudit, ExperimentConfig, TagAudit,
                             check_trace, poisson_workload, read_trace, run_trace, simulate_python,
                             write_trace)
from splitsim.fast import FastRun, run_trace_fast, simulate, simulate_fast
from splitsim.policies import make_policy, parse_policy

POLICIES = [
    (3, "fcfs"), (3, "srpt"), (3, "sek:eps=10"), (3, "sek:eps=10,size=original"), (3, "split"),
    (3, "splitthresh:d=20,small=fcfs,steal=false"), (3, "splitthresh:d=20,small=fcfs,steal=true"),
    (3, "splitthresh:d=20,small=srpt,steal=false"), (3, "splitthresh:d=20,small=srpt,steal=true"),
    (3, "tagsplit:d=8"), (1, "ps"),
]


def test_single_job():
    r = run_trace([(0.0, 5.0)], 1, "fcfs")
    assert r.responses == {0: 5.0}
    assert r.completions == 1


def test_empty_trace():
    r = run_trace([], 2, "srpt")
    assert r.completions == 0 and r.responses == {}
    assert len(run_trace_fast([], 2, "srpt")) == 0


def test_arrival_tied_with_completion():
    # the completion at t=1 is processed first, so the second job never waits
    r = run_trace([(0.0, 1.0), (1.0, 1.0)], 1, "fcfs")
    assert r.responses == {0: 1.0, 1: 1.0}


def test_allocation_rates():
    a = Allocation([3, None, (4, 5)])
    assert a.rates() == {3: 1.0, 4: 0.5, 5: 0.5}
    assert Allocation([None, ()]).rates() == {}


def test_trace_roundtrip(tmp_path, rng):
    t = np.cumsum(rng.exponential(1.0, 50))
    trace = list(zip(t.tolist(), (1.0 + rng.random(50)).tolist()))
    path = tmp_path / "trace.csv"
    write_trace(path, trace)
    assert read_trace(path) == trace


@pytest.mark.parametrize("trace", [
    [(1.0, 1.0), (0.5, 1.0)],
    [(0.0, 0.0)],
    [(0.0, -2.0)],
    [(-1.0, 1.0)],
])
def test_check_trace_rejects(trace):
    with pytest.raises(ConfigError):
        check_trace(trace)


def test_bad_trace_line(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("arrival_time,size\n0,1\nzero,1\n")
    with pytest.raises(ConfigError, match="line 3"):
        read_trace(path)


@pytest.mark.parametrize("kwargs", [
    dict(arrivals=0), dict(rho=1.2), dict(rho=0.0), dict(probe="bogus"), dict(warmup=100),
])
def test_config_validation(kwargs, pareto15):
    base = dict(n=2, rho=0.5, dist=pareto15, policy="srpt", arrivals=100)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        ExperimentConfig(**base)


def test_default_warmup(pareto15):
    assert ExperimentConfig(2, 0.5, pareto15, "srpt", arrivals=10_000).warmup == 100


def test_workload_is_chunk_invariant(pareto15):
    p = dists.SystemParams(3, 0.5, pareto15)
    a = [np.concatenate(x) for x in zip(*poisson_workload(p, 5000, 11, chunk=5000))]
    b = [np.concatenate(x) for x in zip(*poisson_workload(p, 5000, 11, chunk=777))]
    assert np.array_equal(a[1], b[1])
    assert np.allclose(a[0], b[0], rtol=1e-13)


def test_workload_rate(pareto15):
    p = dists.SystemParams(3, 0.5, pareto15)
    times, _ = next(poisson_workload(p, 200_000, 3))
    assert times[-1] / 200_000 == pytest.approx(1.0 / p.lam, rel=0.01)


@pytest.mark.parametrize("n, policy", POLICIES)
def test_python_and_compiled_runs_agree(n, policy, pareto15):
    cfg = ExperimentConfig(n, 0.7, pareto15, policy, arrivals=4000, seed=5)
    a = simulate_python(cfg)
    b = simulate_fast(cfg)
    assert a.completions == b.completions == 4000 - cfg.warmup
    assert np.array_equal(a.estimate.hist_t, b.estimate.hist_t)
    assert np.array_equal(a.estimate.hist_s, b.estimate.hist_s)
    assert np.array_equal(a.estimate.hist_class, b.estimate.hist_class)
    assert a.mean_response == pytest.approx(b.mean_response, rel=1e-9)
    for k, v in a.counters.items():
        assert b.counters[k] == v


@pytest.mark.parametrize("n, policy", POLICIES)
def test_work_accounting(n, policy, pareto15):
    audit = ConservationAudit()
    cfg = ExperimentConfig(n, 0.8, pareto15, policy, arrivals=2000, seed=2)
    simulate_python(cfg, sinks=[audit])
    assert audit.max_work_gap < 1e-6


@pytest.mark.parametrize("n, policy", [(3, "fcfs"), (3, "srpt"), (3, "sek:eps=10"), (3, "split"),
                                       (1, "ps")])
def test_work_conserving_policies(n, policy, pareto15):
    audit = ConservationAudit()
    simulate_python(ExperimentConfig(n, 0.8, pareto15, policy, arrivals=3000, seed=4), sinks=[audit])
    assert audit.intervals > 3000
    assert audit.ok


def test_thresh_without_steal_idles(pareto15):
    audit = ConservationAudit()
    cfg = ExperimentConfig(3, 0.8, pareto15, "splitthresh:d=20,small=fcfs,steal=false",
                           arrivals=3000, seed=4)
    simulate_python(cfg, sinks=[audit])
    assert not audit.ok


@pytest.mark.parametrize("d", [1.5, 8.0, 50.0])
def test_tag_discipline(d, pareto15):
    audit = TagAudit(ps_server=2)
    cfg = ExperimentConfig(3, 0.8, pareto15, f"tagsplit:d={d}", arrivals=3000, seed=6)
    r = simulate_python(cfg, sinks=[audit])
    assert audit.max_stage1_attained <= d + 1e-9
    assert audit.min_ps_size > d
    fr = simulate_fast(cfg)
    assert fr.counters["min_migrated_size"] > d
    assert fr.counters["migrations"] == r.counters["migrations"]


def test_deterministic(pareto15):
    cfg = ExperimentConfig(3, 0.5, pareto15, "split", arrivals=20_000, seed=9)
    a, b = simulate_fast(cfg), simulate_fast(cfg)
    assert np.array_equal(a.estimate.hist_t, b.estimate.hist_t)
    assert a.estimate.sum_t == b.estimate.sum_t
    c = simulate_fast(ExperimentConfig(3, 0.5, pareto15, "split", arrivals=20_000, seed=10))
    assert not np.array_equal(a.estimate.hist_t, c.estimate.hist_t)


def test_job_store_grows():
    # 3000 jobs all at t=0 on one FCFS server: the store must grow from 16
    trace = [(0.0, 1.0)] * 3000
    out = run_trace_fast(trace, 1, "fcfs")
    assert np.allclose(out, np.arange(1, 3001))


def test_chunked_feeding_matches_single_feed(pareto15, rng):
    p = dists.SystemParams(3, 0.8, pareto15)
    times, sizes = next(poisson_workload(p, 5000, 1))
    spec = parse_policy("split")
    grid = np.geomspace(1, 1e4, 50)
    one = FastRun(spec, 3, grid, capacity=8)
    one.feed(times, sizes)
    one.drain()
    many = FastRun(spec, 3, grid, capacity=8)
    for part in np.array_split(np.arange(5000), 7):
        many.feed(times[part], sizes[part])
    many.drain()
    assert np.array_equal(one.S[1], many.S[1])


def test_simulate_backends(pareto15):
    cfg = ExperimentConfig(2, 0.5, pareto15, "srpt", arrivals=2000, seed=1)
    assert simulate(cfg).completions == simulate(cfg, backend="python").completions
    with pytest.raises(ConfigError):
        simulate(cfg, backend="gpu")


def test_summary_fields(pareto15):
    r = simulate_fast(ExperimentConfig(2, 0.5, pareto15, "split", arrivals=5000, seed=1))
    s = r.summary()
    assert s["completions"] == 4950
    assert s["ljf_fetches"] > 0
    assert math.isfinite(s["median_response"])


def test_unknown_policy_for_engine():
    with pytest.raises(ConfigError):
        make_policy("lifo", 2)
