import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poresim.drainage import drain_to_saturation, drain_with_threshold, saturation_curve
from poresim.errors import DomainError
from poresim.network import PoreNetwork
from poresim.synthetic import random_tangent


def _balls(radii):
    n = len(radii)
    return PoreNetwork(centers=[[0, 0, 10.0 * k] for k in range(n)], radii=radii)


def test_single_node_fully_selected():
    res = drain_to_saturation(_balls([2.0]), 0.5)
    assert res.n_water == 1
    assert res.achieved_saturation == 1.0


def test_full_saturation_selects_all():
    net = random_tangent(100, seed=0)
    assert drain_to_saturation(net, 1.0).water_mask.all()


def test_minimal_threshold_rule():
    # volumes scale with r^3: 1, 8, 27 -> cumulative saturation 1/36, 9/36, 1
    net = _balls([1.0, 2.0, 3.0])
    assert drain_to_saturation(net, 0.02).threshold == 1.0
    assert drain_to_saturation(net, 0.25).threshold == 2.0
    assert drain_to_saturation(net, 0.26).threshold == 3.0
    assert drain_to_saturation(net, 0.25).water_ids().tolist() == [0, 1]


@pytest.mark.parametrize("target", [0.0, -0.1, 1.01])
def test_bad_target(target):
    with pytest.raises(DomainError):
        drain_to_saturation(_balls([1.0]), target)


def test_curve_is_monotone():
    thr, sat = saturation_curve(random_tangent(300, seed=5))
    assert np.all(np.diff(thr) > 0) and np.all(np.diff(sat) > 0) and sat[-1] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 5.0), min_size=1, max_size=40),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_monotone_and_idempotent(radii, t1, t2):
    net = _balls(radii)
    lo, hi = sorted((t1, t2))
    a, b = drain_to_saturation(net, lo), drain_to_saturation(net, hi)
    assert not np.any(a.water_mask & ~b.water_mask)
    assert a.achieved_saturation >= lo * (1 - 1e-12)
    again = drain_to_saturation(net, a.achieved_saturation)
    assert np.array_equal(again.water_mask, a.water_mask)
    assert np.array_equal(drain_with_threshold(net, a.threshold).water_mask, a.water_mask)
