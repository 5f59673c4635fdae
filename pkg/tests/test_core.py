import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamscreen.core import Observation, TimePoint, WeightSpec, weight, weight_mass_limit


@pytest.mark.parametrize(
    "lam,gap,expected",
    [(0.5, 1.0, 0.5), (0.9, 0.0, 1.0), (0.9, 2.0, 0.81)],
)
def test_weight_direct_powers(lam, gap, expected):
    spec = WeightSpec(lam)
    w = weight(spec, TimePoint(1, 10.0), TimePoint(0, 10.0 - gap))
    assert w == pytest.approx(expected, rel=1e-12)


def test_weight_rejects_reversed_order():
    spec = WeightSpec(0.5)
    with pytest.raises(ValueError, match="reversed"):
        weight(spec, TimePoint(0, 1.0), TimePoint(1, 2.0))


@pytest.mark.parametrize(
    "lam,gap,expected",
    [(0.9, 1.0, 10.0), (0.5, 1.0, 2.0), (0.5, 2.0, 4.0 / 3.0)],
)
def test_weight_mass_limit(lam, gap, expected):
    assert weight_mass_limit(WeightSpec(lam), gap) == pytest.approx(expected, rel=1e-12)


def test_weight_mass_limit_requires_positive_gap():
    with pytest.raises(ValueError):
        weight_mass_limit(WeightSpec(0.5), 0.0)


@given(
    lam=st.floats(0.01, 0.999),
    t0=st.floats(0.0, 100.0),
    g1=st.floats(0.0, 50.0),
    g2=st.floats(0.0, 50.0),
)
@settings(max_examples=200, deadline=None)
def test_weight_multiplicative_across_gaps(lam, t0, g1, g2):
    spec = WeightSpec(lam)
    a = TimePoint(2, t0 + g1 + g2)
    b = TimePoint(1, t0 + g2)
    c = TimePoint(0, t0)
    whole = weight(spec, a, c)
    split = weight(spec, a, b) * weight(spec, b, c)
    assert whole == pytest.approx(split, rel=1e-12, abs=1e-300)


@given(st.lists(st.floats(0.05, 3.0), min_size=1, max_size=60), st.floats(0.05, 0.99))
@settings(max_examples=100, deadline=None)
def test_phi_recursion_matches_direct_sum(gaps, lam):
    spec = WeightSpec(lam)
    times = np.cumsum(gaps)
    phi = 0.0
    for i, t in enumerate(times):
        w = 1.0 if i == 0 else math.exp(-spec.neg_log_lambda * (times[i] - times[i - 1]))
        phi = w * phi + 1.0
    direct = float(np.sum(lam ** (times[-1] - times)))
    assert phi == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.5, 1.5])
def test_weight_spec_domain(bad):
    with pytest.raises(ValueError):
        WeightSpec(bad)


def test_half_life_scale():
    spec = WeightSpec(math.exp(-0.25))
    assert spec.half_life_scale == pytest.approx(4.0, rel=1e-12)


def test_observation_validation():
    t = TimePoint(0, 1.0)
    obs = Observation(stream_id=3, t=t, y=1.5, x=[1.0, 2.0])
    assert obs.d == 2
    with pytest.raises(ValueError):
        Observation(stream_id=0, t=t, y=1.0, x=[1.0])
    with pytest.raises(ValueError):
        Observation(stream_id=1, t=t, y=np.inf, x=[1.0])
    with pytest.raises(ValueError):
        Observation(stream_id=1, t=t, y=1.0, x=[[1.0, 2.0]])


def test_timepoint_ordering_and_validation():
    assert TimePoint(0, 1.0) < TimePoint(1, 2.0)
    with pytest.raises(ValueError):
        TimePoint(-1, 0.0)
    with pytest.raises(ValueError):
        TimePoint(0, math.nan)
