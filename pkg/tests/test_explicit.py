import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from poresim.biology import CO2, DOM, SECONDS_PER_DAY, BioParams, transform_all
from poresim.errors import BacktrackRequired, DomainError, RepairOverdraw, StepCollapse
from poresim.explicit import (Coupling, ExplicitConfig, ExplicitScheme, GraphDiffusion,
                              diffusion_step_explicit, fick_flow, negativity, police,
                              reallocate_negatives, run_with_backtracking, step_asynchronous,
                              step_synchronous)
from poresim.network import PoreNetwork
from poresim.synthetic import chain, random_tangent

from conftest import path_net, two_ball_net

P = BioParams()


def test_fick_flow_examples():
    assert fick_flow(0.7, 0.7, 1, 1, 1, 0.1) == 0.0
    assert fick_flow(1, 0, 1, 1, 1, 0.1) == pytest.approx(-0.1)
    assert fick_flow(0, 1, 1, 1, 1, 0.1) == pytest.approx(0.1)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 5), st.floats(0.1, 5))
def test_fick_flow_antisymmetric(ci, cj, s, d):
    assert fick_flow(ci, cj, s, d, 3.0, 0.01) == -fick_flow(cj, ci, s, d, 3.0, 0.01)


def test_two_ball_step():
    out = diffusion_step_explicit([1.0, 0.0], two_ball_net(), None, 1.0, 0.1)
    assert out == pytest.approx([0.9, 0.1], abs=1e-15)


def test_uniform_concentration_unchanged():
    net = random_tangent(100, seed=0)
    m = 0.3 * net.volumes
    out = diffusion_step_explicit(m, net, None, 40000.0, 1e-5)
    assert np.allclose(out, m, rtol=1e-13, atol=0)


def test_isolated_node_unchanged():
    net = PoreNetwork(centers=[[0, 0, 0]], radii=[1.0])
    assert diffusion_step_explicit([5.0], net, None, 1.0, 1.0).tolist() == [5.0]


def test_air_balls_excluded():
    net = chain(3)
    out = diffusion_step_explicit([1.0, 0.0, 0.0], net, [True, True, False], 1.0, 0.01)
    assert out[2] == 0.0 and out.sum() == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 12, elements=st.floats(0, 100)), st.floats(1e-6, 10.0))
def test_diffusion_conserves_even_when_unstable(m, dt):
    net = path_net(12, seed=1)
    out = diffusion_step_explicit(m, net, None, 5.0, dt)
    tot = math.fsum(m)
    assert abs(math.fsum(out) - tot) <= 1e-12 * max(tot, 1.0)


def test_negativity_examples():
    H, M = negativity([-0.02, 0.5, 0.5])
    assert H == pytest.approx(0.02) and M == pytest.approx(0.98)
    assert negativity([-0.01, -0.03, 1.0])[0] == pytest.approx(0.04)
    assert negativity(np.ones((3, 5)))[0].tolist() == [0.0] * 5


def test_reallocation_example():
    y = np.array([-0.02, 0.49, 0.51])
    out = reallocate_negatives(y, np.ones(3))
    assert out[0] == 0.0
    assert out[1] == pytest.approx(0.49 - 0.02 * 0.49, abs=1e-15)
    assert out[2] == pytest.approx(0.51 - 0.02 * 0.51, abs=1e-15)
    assert abs(out.sum() - 0.98) <= 1e-12
    assert np.array_equal(reallocate_negatives(np.array([0.1, 0.2]), np.ones(2)), [0.1, 0.2])


def test_reallocation_weights_by_concentration():
    y = np.array([-0.1, 1.0, 1.0])
    out = reallocate_negatives(y, np.array([1.0, 1.0, 4.0]))
    # concentrations 1 and 0.25 -> debits 0.08 and 0.02
    assert out[1:] == pytest.approx([0.92, 0.98])


def test_reallocation_overdraw():
    with pytest.raises(RepairOverdraw):
        reallocate_negatives(np.array([-0.5]), np.ones(1))
    with pytest.raises(RepairOverdraw):
        reallocate_negatives(np.array([-1.0, 0.01, 0.5]), np.array([1.0, 0.01, 1.0]))


def test_police_accepts_small_and_rejects_large():
    small = np.array([-0.001, 0.5, 0.5])
    assert police(small, np.ones(3), 0.01).min() >= 0
    with pytest.raises(BacktrackRequired):
        police(np.array([-0.2, 0.5, 0.5]), np.ones(3), 0.01)


def test_config_validation():
    with pytest.raises(DomainError):
        ExplicitConfig(dt_diffusion=0.3, dt_transform=10.1)
    with pytest.raises(DomainError):
        ExplicitConfig(dt_diffusion=-1)
    with pytest.warns(UserWarning):
        ExplicitConfig(p_neg=0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ExplicitConfig(dt_diffusion=1.0, dt_transform=2.5, coupling="sync")


def _mixed_state(n, rng):
    x = np.zeros((n, 5))
    x[:, 0] = rng.uniform(0, 1e-3, n)
    x[:, 1] = rng.uniform(0, 1e-2, n)
    x[:, 2] = rng.uniform(0, 1e-2, n)
    x[:, 3] = rng.uniform(0, 1e-2, n)
    return x


def test_sync_without_dom_is_biology_alone(rng):
    net = chain(10)
    x = _mixed_state(10, rng)
    x[:, DOM] = 0.0
    cfg = ExplicitConfig(coupling="sync")
    out = step_synchronous(x, net, None, P, cfg, 1e-3)
    assert np.array_equal(out, transform_all(x, net.volumes, P, 1e-3))


def test_sync_without_rates_is_diffusion_alone(rng):
    net = chain(10)
    x = _mixed_state(10, rng)
    p = BioParams.zero_rates(d_c=0.5)
    out = step_synchronous(x, net, None, p, ExplicitConfig(coupling="sync"), 1e-3)
    expect = x.copy()
    expect[:, DOM] = diffusion_step_explicit(x[:, DOM], net, None, 0.5, 1e-3)
    assert np.allclose(out, expect, rtol=1e-15, atol=1e-18)


def test_async_without_rates_is_diffusion_alone(rng):
    net = chain(10)
    x = _mixed_state(10, rng)
    p = BioParams.zero_rates(d_c=0.5)
    cfg = ExplicitConfig(dt_diffusion=0.5, dt_transform=1.0)
    out = step_asynchronous(x, net, None, p, cfg)
    dom = x[:, DOM]
    for _ in range(2):
        dom = diffusion_step_explicit(dom, net, None, 0.5, 0.5 / SECONDS_PER_DAY)
    assert np.allclose(out[:, DOM], dom, rtol=1e-14, atol=1e-20)
    assert np.array_equal(np.delete(out, DOM, 1), np.delete(x, DOM, 1))


def test_sync_matches_async_for_tiny_dt(rng):
    net = chain(10)
    x = _mixed_state(10, rng)
    dt_s = 1e-6 * SECONDS_PER_DAY
    sync = step_synchronous(x, net, None, P, ExplicitConfig(coupling="sync"), 1e-6)
    asyn = step_asynchronous(x, net, None, P, ExplicitConfig(dt_diffusion=dt_s, dt_transform=dt_s))
    assert np.max(np.abs(sync - asyn)) <= 1e-8 * np.abs(x).max()


def _split_gap(dt_days, x, net):
    s = ExplicitScheme(net, None, P, ExplicitConfig(dt_diffusion=dt_days * SECONDS_PER_DAY,
                                                    coupling="sync"))
    a = ExplicitScheme(net, None, P, ExplicitConfig(dt_diffusion=dt_days * SECONDS_PER_DAY,
                                                    dt_transform=dt_days * SECONDS_PER_DAY))
    return np.abs(s.advance(x, 0.01) - a.advance(x, 0.01)).max()


def test_splitting_error_is_first_order(rng):
    net = chain(10, radius=3.0)
    x = _mixed_state(10, rng)
    x[:, DOM] = net.volumes * 1e-8 * (1 + np.arange(10))
    gaps = [_split_gap(1e-4 / 2 ** k, x, net) for k in range(3)]
    orders = np.log2(np.array(gaps[:-1]) / gaps[1:])
    assert np.all(orders >= 0.9)


def test_stable_run_has_no_backtracks(rng):
    net = chain(10, radius=3.0)
    x = _mixed_state(10, rng)
    cfg = ExplicitConfig(dt_diffusion=1.0, dt_transform=10.0)
    t_end = 80 * 10.0 / SECONDS_PER_DAY
    traj = run_with_backtracking(x, net, None, P, cfg, t_end)
    assert traj.backtracks == 0
    plain = x
    for _ in range(80):
        plain = step_asynchronous(plain, net, None, P, cfg)
    # the remaining-time arithmetic can shift the last step by an ulp
    assert np.allclose(traj.state, plain, rtol=1e-13, atol=0)


def _steep_two_ball():
    net = two_ball_net()
    x = np.zeros((2, 5))
    x[0, DOM] = 1.0
    return net, x


def test_oversized_step_triggers_backtrack():
    net, x = _steep_two_ball()
    p = BioParams.zero_rates(d_c=1.0)
    # theta = 1.6 moves 1.6 units out of a ball holding 1: (-0.6, 1.6)
    cfg = ExplicitConfig(dt_diffusion=1.6 * SECONDS_PER_DAY, coupling="sync")
    with pytest.raises(BacktrackRequired):
        step_synchronous(x, net, None, p, cfg, 1.6)
    traj = run_with_backtracking(x, net, None, p, cfg, 3.2)
    assert traj.backtracks >= 1
    assert math.fsum(traj.state.ravel()) == pytest.approx(1.0, abs=1e-12)
    assert traj.state.min() >= 0


def test_zero_backtracks_allowed_collapses():
    net, x = _steep_two_ball()
    p = BioParams.zero_rates(d_c=1.0)
    cfg = ExplicitConfig(dt_diffusion=1.6 * SECONDS_PER_DAY, coupling="sync", max_backtracks=0)
    with pytest.raises(StepCollapse):
        run_with_backtracking(x, net, None, p, cfg, 3.2)


def test_async_backtrack_refines_diffusion_substeps():
    net, x = _steep_two_ball()
    p = BioParams.zero_rates(d_c=1.0)
    day = SECONDS_PER_DAY
    scheme = ExplicitScheme(net, None, p, ExplicitConfig(dt_diffusion=1.6 * day,
                                                         dt_transform=3.2 * day))
    out = scheme.advance(x, 3.2)
    assert scheme.backtracks >= 1 and scheme.n_sub > 2
    assert out.min() >= 0 and math.fsum(out.ravel()) == pytest.approx(1.0, abs=1e-12)


def test_recovery_restores_step():
    net, x = _steep_two_ball()
    p = BioParams.zero_rates(d_c=1.0)
    cfg = ExplicitConfig(dt_diffusion=1.6 * SECONDS_PER_DAY, coupling="sync", recover_after=2)
    scheme = ExplicitScheme(net, None, p, cfg)
    scheme.advance(x, 20.0)
    assert scheme.backtracks >= 1
    assert scheme.dt <= 1.6


def test_per_step_conservation_and_co2(rng):
    net = random_tangent(150, seed=4)
    x = _mixed_state(150, rng)
    cfg = ExplicitConfig(dt_diffusion=1.0, dt_transform=10.0)
    worst = []

    def check(before, after, h):
        t0 = math.fsum(before.ravel())
        worst.append(abs(math.fsum(after.ravel()) - t0) / t0)
        assert after.min() >= 0
        assert after[:, CO2].sum() >= before[:, CO2].sum()

    run_with_backtracking(x, net, None, P, cfg, 0.02, on_step=check)
    assert max(worst) <= 1e-10


def test_stability_limit_matches_two_ball_bound():
    net = two_ball_net()
    assert GraphDiffusion(net, None, 1.0).stability_limit(net.volumes) == pytest.approx(1.0)
