import pytest

from conftest import VARIANTS, worst_gaps


@pytest.mark.parametrize("family", sorted(VARIANTS))
def test_engines_match_reference(family, rng):
    gap_engine, gap_fast = worst_gaps(rng, family, traces=24, max_events=400)
    assert gap_engine <= 1e-9
    assert gap_fast <= 1e-9
