import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splitsim import distributions as dists
from splitsim.distributions import DistributionError, NoConstraint, SystemParams


def test_pareto_tail_and_quantile(pareto15):
    assert dists.tail(pareto15, 0.5) == 1.0
    assert dists.tail(pareto15, 100.0) == pytest.approx(1e-3)
    assert dists.quantile(pareto15, 0.999) == pytest.approx(100.0)
    assert dists.quantile(pareto15, 0.99) == pytest.approx(21.5443469, rel=1e-8)
    assert dists.mean(pareto15) == pytest.approx(3.0)
    assert math.isinf(dists.second_moment(pareto15))


def test_quantile_domain(pareto15):
    with pytest.raises(DistributionError):
        dists.quantile(pareto15, 1.0)
    with pytest.raises(DistributionError):
        dists.quantile(pareto15, -0.1)


@pytest.mark.parametrize("text, kind", [
    ("pareto:alpha=1.5", "pareto"),
    ("PARETO:alpha=1.5,xmin=2", "pareto"),
    ("bpareto:alpha=1.2,xmin=1,xmax=1e6", "bpareto"),
    ("exp:rate=2", "exp"),
    ("det:value=5", "det"),
])
def test_parse_roundtrip(text, kind):
    d = dists.parse_dist(text)
    assert d.kind == kind
    assert dists.parse_dist(dists.to_spec(d)) == d


@pytest.mark.parametrize("text", [
    "pareto:alpha=0.9", "pareto:beta=2", "weibull:k=1", "exp:rate=-1",
    "bpareto:alpha=1.5,xmin=2,xmax=1", "pareto:alpha=abc", "det:value=0",
])
def test_parse_rejects(text):
    with pytest.raises(DistributionError):
        dists.parse_dist(text)


def test_bounded_pareto_moments():
    d = dists.bounded_pareto(1.5, 1.0, 1e4)
    u = np.random.default_rng(1).random(2_000_000)
    x = dists.sample(d, u)
    assert x.min() >= 1.0 and x.max() <= 1e4
    assert x.mean() == pytest.approx(dists.mean(d), rel=0.02)
    assert dists.tail(d, 1e4) == 0.0


def test_exponential_and_deterministic():
    e = dists.exponential(2.0)
    assert dists.mean(e) == 0.5
    assert dists.second_moment(e) == pytest.approx(0.5)
    assert dists.partial_mean_above(e, 0.0) == pytest.approx(0.5)
    d = dists.deterministic(5.0)
    assert dists.tail(d, 4.999) == 1.0 and dists.tail(d, 5.0) == 0.0
    assert np.all(dists.sample(d, np.array([0.1, 0.9])) == 5.0)


def test_resource_above(pareto15):
    p = SystemParams(3, 0.8, pareto15)
    assert p.lam == pytest.approx(0.8)
    assert dists.resource_above(p, 0.5) == pytest.approx(2.4)
    assert dists.resource_above(p, 36.0) == pytest.approx(0.4)
    # nrho * d^(-1/2) for Pareto(1.5, 1)
    for d in (2.0, 10.0, 1000.0):
        assert dists.resource_above(p, d) == pytest.approx(2.4 / math.sqrt(d))


def test_tags_large_load(pareto15):
    p = SystemParams(3, 0.8, pareto15)
    assert dists.tags_large_load(p, 1.0) == pytest.approx(1.6)
    assert dists.tags_large_load(p, 16.0) == pytest.approx(0.4)
    with pytest.raises(DistributionError):
        dists.tags_large_load(p, 0.0)


def test_dstar_examples(pareto15):
    p = SystemParams(3, 0.8, pareto15)
    assert dists.solve_dstar(p) == pytest.approx(36.0, rel=1e-8)
    assert dists.solve_tags_dstar(p) == pytest.approx(16.0, rel=1e-8)
    p10 = SystemParams(10, 0.94, pareto15)
    # (9.4 / 0.4)^2
    assert dists.solve_dstar(p10) == pytest.approx(552.25, rel=1e-8)


def test_dstar_needs_critical_load(pareto15):
    with pytest.raises(NoConstraint):
        dists.solve_dstar(SystemParams(3, 0.5, pareto15))
    with pytest.raises(NoConstraint):
        dists.solve_tags_dstar(SystemParams(3, 0.5, pareto15))


def test_tags_dstar_other_alpha():
    p = SystemParams(2, 0.75, dists.pareto(2.5, 1.0))
    # lam d^(1-a)/(a-1) with lam = 0.9 must equal 1.5 - 1
    assert dists.solve_tags_dstar(p) == pytest.approx(1.2 ** (2 / 3), rel=1e-8)


def test_system_params_validation(pareto15):
    with pytest.raises(DistributionError):
        SystemParams(0, 0.5, pareto15)
    with pytest.raises(DistributionError):
        SystemParams(3, 1.0, pareto15)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(1.05, 4.0), xmin=st.floats(0.1, 10.0), p=st.floats(0.0, 0.999999))
def test_quantile_inverts_tail(alpha, xmin, p):
    d = dists.pareto(alpha, xmin)
    q = dists.quantile(d, p)
    assert dists.tail(d, q) == pytest.approx(1.0 - p, rel=1e-9, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(1.05, 3.0), x=st.floats(1.0, 1e6), y=st.floats(1.0, 1e6))
def test_resource_above_monotone(alpha, x, y):
    p = SystemParams(3, 0.7, dists.pareto(alpha, 1.0))
    lo, hi = min(x, y), max(x, y)
    assert dists.resource_above(p, hi) <= dists.resource_above(p, lo) + 1e-15
    assert dists.tags_large_load(p, hi) <= dists.tags_large_load(p, lo) + 1e-15
    assert dists.tags_large_load(p, lo) <= dists.resource_above(p, lo) + 1e-15


def test_sampling_matches_tail(pareto15):
    x = dists.sample(pareto15, np.random.default_rng(7).random(1_000_000))
    for t in (2.0, 10.0, 50.0):
        p = dists.tail(pareto15, t)
        se = math.sqrt(p * (1 - p) / len(x))
        assert abs(np.mean(x > t) - p) < 4 * se
