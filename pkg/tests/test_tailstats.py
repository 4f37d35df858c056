import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitsim import distributions as dists
from splitsim.engine import ExperimentConfig, run_trace
from splitsim.fast import simulate_fast
from splitsim.tailstats import (EmptyEstimate, LjfProbe, OutOfGrid, PackingProbe, TailEstimate,
                                default_grid, ljf_promptness, normalized_tail, p_idle)


def _est(values, grid=(1, 2, 3, 4, 8)):
    e = TailEstimate(grid)
    for v in values:
        e.record(v, v)
    return e


def test_ccdf_counting():
    e = _est([1, 2, 4, 8])
    assert e.ccdf(3) == 0.5


def test_ccdf_is_step_between_grid_points():
    e = _est([1, 2, 4, 8])
    assert e.ccdf(3.9) == e.ccdf(3)
    with pytest.raises(OutOfGrid):
        e.ccdf(0.5)


def test_empty_estimate():
    e = TailEstimate([1.0, 2.0])
    with pytest.raises(EmptyEstimate):
        e.ccdf(1.0)
    with pytest.raises(EmptyEstimate):
        e.percentile(0.5)
    with pytest.raises(EmptyEstimate):
        normalized_tail(e, dists.SystemParams(3, 0.5, dists.pareto(1.5)))


def test_exponential_ccdf(rng):
    x = rng.exponential(1.0, 10**6)
    e = TailEstimate(np.sort(np.append(np.geomspace(0.01, 20, 300), 1.0)))
    for v in x:
        e.record(v, v)
    p = math.exp(-1)
    se = math.sqrt(p * (1 - p) / len(x))
    assert abs(e.ccdf(1.0) - p) <= 3 * se


def test_percentile_on_uniform_grid():
    e = _est(range(1, 101), grid=range(1, 101))
    assert e.percentile(0.99) == 99


def test_percentile_grid_convention():
    # smallest grid point with ccdf <= 1 - p: the lower median here
    e = _est([1, 2, 4, 8])
    assert e.percentile(0.5) == 2
    assert e.percentile(0.6) == 4


def test_percentile_out_of_grid(rng):
    e = _est(rng.random(1000) + 1, grid=np.linspace(1, 3, 20))
    with pytest.raises(OutOfGrid):
        e.percentile(0.999999)
    with pytest.raises(ValueError):
        e.percentile(1.0)


def test_percentile_beyond_last_grid_point():
    e = _est([1, 2, 50, 60], grid=(1, 2, 3))
    with pytest.raises(OutOfGrid):
        e.percentile(0.75)


def test_negative_response_rejected():
    with pytest.raises(ValueError):
        TailEstimate([1.0]).record(1.0, -1.0)


def test_grid_must_increase():
    with pytest.raises(ValueError):
        TailEstimate([1.0, 1.0])


def test_default_grid_range():
    d = dists.pareto(1.5)
    g = default_grid(d)
    assert len(g) == 400
    assert g[0] == pytest.approx(dists.quantile(d, 0.5))
    assert g[-1] == pytest.approx(dists.quantile(d, 1 - 1e-8) * 10)


def test_normalized_tail_example():
    params = dists.SystemParams(3, 0.5, dists.pareto(1.5))
    e = TailEstimate([10.0])
    for v in [11.0] * 2 + [5.0] * 98:
        e.record(v, v)
    nt = normalized_tail(e, params)
    assert nt.denominator[0] == pytest.approx(10 ** -1.5)
    assert nt.ratio[0] == pytest.approx(0.6325, abs=1e-4)


def test_normalized_tail_critical_scale():
    d = dists.pareto(1.5)
    params = dists.SystemParams(3, 0.8, d)
    e = _est([20.0], grid=[10.0])
    nt = normalized_tail(e, params)
    assert nt.denominator[0] == pytest.approx(dists.tail(d, 6.0))
    assert normalized_tail(e, params, scale=0.55).denominator[0] == pytest.approx(dists.tail(d, 5.5))


def test_normalized_tail_drops_empty_rows():
    params = dists.SystemParams(3, 0.5, dists.pareto(1.5))
    nt = normalized_tail(_est([2.5, 3.5], grid=(1, 2, 3, 4, 8)), params)
    assert list(nt.t) == [1, 2, 3]
    assert np.all(np.isfinite(nt.ratio)) and np.all(nt.ratio > 0)


def test_normalized_tail_drops_vanishing_denominator():
    params = dists.SystemParams(3, 0.5, dists.bounded_pareto(1.5, 1, 10))
    nt = normalized_tail(_est([20.0, 30.0], grid=(5, 10, 15)), params)
    assert list(nt.t) == [5]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 1e4), min_size=1, max_size=60),
       st.lists(st.floats(0.5, 1e4), min_size=1, max_size=60))
def test_merge_equals_concatenation(a, b):
    grid = np.geomspace(1, 1e4, 30)
    ea, eb, ec = TailEstimate(grid, 5.0), TailEstimate(grid, 5.0), TailEstimate(grid, 5.0)
    for v in a:
        ea.record(v / 2, v)
        ec.record(v / 2, v)
    for v in b:
        eb.record(v / 2, v)
        ec.record(v / 2, v)
    m = ea.merge(eb)
    assert np.array_equal(m.counts(), ec.counts())
    assert np.array_equal(m.hist_class, ec.hist_class)
    assert m.total == ec.total


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0, 100)), min_size=1, max_size=80))
def test_estimate_invariants(pairs):
    grid = np.geomspace(0.1, 1000, 40)
    e = TailEstimate(grid, 3.0, edges=np.arange(1, 10) * 10.0)
    for s, w in pairs:
        e.record(s, s + w)
    c = e.counts()
    assert np.all(np.diff(c) <= 0) and c[0] <= e.total
    assert np.all((0 <= e.ccdf_at_grid()) & (e.ccdf_at_grid() <= 1))
    assert e.class_counts("small")[1] + e.class_counts("big")[1] == e.total
    assert sum(e.class_counts(f"decile{k}")[1] for k in range(10)) == e.total
    assert e.dominates_size()


def test_merge_rejects_other_grid():
    with pytest.raises(ValueError):
        TailEstimate([1.0, 2.0]).merge(TailEstimate([1.0, 3.0]))


def test_unknown_class():
    with pytest.raises(KeyError):
        TailEstimate([1.0]).class_counts("medium")


def test_ljf_single_job():
    probe = LjfProbe(1.0)
    run_trace([(0.0, 4.0)], 3, "split", sinks=[probe])
    assert ljf_promptness(probe) == 1.0


def test_ljf_late_start_counts_zero():
    # LJF is busy on 100 until t=100; the size-16 job arrives at t=1 and
    # SRPT servers take it, so its LJF start never happens within sqrt(16)
    probe = LjfProbe(16.0)
    run_trace([(0.0, 100.0), (1.0, 16.0), (1.0, 1.0), (1.0, 1.0)], 3, "split", sinks=[probe])
    assert probe.qualifying == 2 and probe.prompt == 1


def test_ljf_empty():
    with pytest.raises(EmptyEstimate):
        ljf_promptness(LjfProbe(10.0))


def test_pidle_single_job():
    probe = PackingProbe(1.0)
    run_trace([(0.0, 5.0)], 2, "srpt", sinks=[probe])
    assert p_idle(probe) == 1.0
    assert probe.n_tagged == 1


def test_pidle_half_packed():
    probe = PackingProbe(10.0)
    run_trace([(0.0, 10.0), (0.0, 5.0)], 2, "srpt", sinks=[probe])
    assert p_idle(probe) == pytest.approx(0.5)


def test_pidle_empty_and_single_server():
    with pytest.raises(EmptyEstimate):
        p_idle(PackingProbe(10.0))
    with pytest.raises(ValueError):
        run_trace([(0.0, 5.0)], 1, "srpt", sinks=[PackingProbe(1.0)])


def test_pidle_between_zero_and_one(pareto15):
    cfg = ExperimentConfig(2, 0.5, pareto15, "split", arrivals=200_000, seed=1, probe="pidle")
    r = simulate_fast(cfg)
    assert 0.0 <= p_idle(r.probes["pidle"]) <= 1.0


def test_split_ratio_near_one_at_p999(pareto15):
    params = dists.SystemParams(3, 0.5, pareto15)
    r = simulate_fast(ExperimentConfig(3, 0.5, pareto15, "split", arrivals=10**6, seed=1))
    t = r.estimate.percentile(0.999)
    assert normalized_tail(r.estimate, params).at(t) >= 0.9
