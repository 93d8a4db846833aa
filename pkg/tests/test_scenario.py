import csv
import json
import math

import numpy as np
import pytest

from poresim.biology import SPECIES, BioParams
from poresim.errors import ConfigError, NoWaterError, TooManySpots, ValidationError
from poresim.network import PoreNetwork, save_network
from poresim.placement import (balls_in_slab, place_dom_single_ball, place_dom_slab,
                               place_dom_uniform, place_explicit, place_mb_spots)
from poresim.scenario import (CSV_HEADER, PRESETS, Scenario, load_scenario, read_state_csv,
                              run_scenario)
from poresim.synthetic import chain, random_tangent


def _two(volumes=(1.0, 3.0)):
    return PoreNetwork(centers=[[0, 0, 0], [0, 0, 5]], radii=[1.0, 1.0], volumes=list(volumes))


def test_uniform_placement():
    assert place_dom_uniform(_two(), None, 4.0).tolist() == [1.0, 3.0]
    assert place_dom_uniform(_two(), None, 0.0).tolist() == [0.0, 0.0]
    with pytest.raises(NoWaterError):
        place_dom_uniform(_two(), [False, False], 1.0)


def test_preset_dom_total_is_distributed():
    net = random_tangent(300, seed=0)
    assert place_dom_uniform(net, None, 0.2895).sum() == pytest.approx(0.2895, rel=1e-14)


def test_spots():
    net = chain(20)
    every = place_mb_spots(net, None, 20, 2.0, seed=1)
    assert np.all(every == 0.1)
    a = place_mb_spots(net, None, 5, 1.0, seed=7)
    b = place_mb_spots(net, None, 5, 1.0, seed=7)
    assert np.array_equal(a, b) and np.count_nonzero(a) == 5
    with pytest.raises(TooManySpots):
        place_mb_spots(net, None, 21, 1.0, seed=0)
    water = np.arange(20) % 2 == 0
    assert np.all(place_mb_spots(net, water, 10, 1.0, seed=0)[~water] == 0)


def test_single_ball_and_explicit():
    net = chain(5)
    m = place_dom_single_ball(net, None, 3.0, ball=2)
    assert m.tolist() == [0, 0, 3.0, 0, 0]
    with pytest.raises(ValidationError):
        place_dom_single_ball(net, [True] * 4 + [False], 1.0, ball=4)
    r = place_dom_single_ball(net, None, 1.0, rng=np.random.default_rng(0))
    assert r.sum() == 1.0 and np.count_nonzero(r) == 1
    assert place_explicit(net, None, {1: 0.5, "3": 0.25}).tolist() == [0, 0.5, 0, 0.25, 0]
    with pytest.raises(ValidationError):
        place_explicit(net, None, {99: 1.0})


def test_slab():
    net = chain(5)  # centers z = 1, 3, 5, 7, 9 with radius 1
    assert balls_in_slab(net, 0.0, 2.0).tolist() == [0]
    assert balls_in_slab(net, 0.0, 2.5).tolist() == [0, 1]
    assert place_dom_slab(net, None, 5.0, 0.0, 2.5).tolist() == [2.5, 2.5, 0, 0, 0]
    with pytest.raises(NoWaterError):
        place_dom_slab(net, None, 1.0, 50.0, 52.0)


def _scenario(net, **kw):
    doc = {"preset": "paper-2021", "network": net, "t_end_hours": 6,
           "mb": {"kind": "spots", "count": 50, "bacteria": 5.2e6}}
    doc.update(kw)
    return Scenario.from_dict(doc)


def test_presets_resolve():
    for name in PRESETS:
        scn = Scenario.from_dict({"preset": name, "network": "x.txt", "t_end_days": 1})
        scn.scheme_config()
    assert PRESETS["paper-2021"]["dom"]["total"] == 0.2895


def test_spot_mass_matches_bacteria_count():
    net = random_tangent(1000, seed=0)
    from poresim.scenario import initial_state
    scn = Scenario.from_dict({"preset": "paper-2021", "network": net, "t_end_days": 1})
    x0 = initial_state(scn, net, np.ones(1000, bool))
    # 5.2e7 bacteria of 2e-12 g, in mg, over 1000 spots
    assert np.unique(x0[x0[:, 0] > 0, 0]) == pytest.approx([1.04e-4], rel=1e-12)
    assert np.count_nonzero(x0[:, 0]) == 1000


@pytest.mark.parametrize("doc, msg", [
    ({"network": "n.txt", "t_end_days": 1, "bogus": 1}, "unknown"),
    ({"network": "n.txt", "t_end_days": 1, "preset": "nope"}, "preset"),
    ({"network": "n.txt", "t_end_days": -1}, "t_end"),
    ({"network": "n.txt", "t_end_days": 1, "scheme": "implicit", "coupling": "sync"}, "implicit"),
    ({"network": "n.txt", "t_end_days": 1, "saturation": 0}, "saturation"),
    ({"network": "n.txt", "t_end_days": 1, "bio": {"rho": -1}}, "rho"),
    ({"network": "n.txt", "t_end_days": 1, "bio": {"nope": 1}}, "bio"),
    ({"network": "n.txt", "t_end_days": 1, "mass_unit": "lb"}, "unit"),
    ({"network": "n.txt", "t_end_days": 1, "dom": {"kind": "uniform", "total": -2}}, "total"),
    ({"network": "n.txt", "t_end_days": 1, "scheme": "explicit", "dt_diffusion_s": 0.3,
      "dt_transform_s": 10.0}, "multiple"),
    ({"t_end_days": 1}, "network"),
])
def test_config_errors(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        Scenario.from_dict(doc)


def test_load_scenario_relative_paths(tmp_path):
    save_network(chain(10), tmp_path / "net.txt")
    (tmp_path / "s.json").write_text(json.dumps({
        "preset": "blank", "network": "net.txt", "t_end_hours": 1,
        "dom": {"kind": "uniform", "total": 1.0},
        "output": {"trajectory_csv": "traj.csv", "final_state_csv": "state.csv",
                   "profile": {"path": "prof.txt", "planes": 25}}}))
    scn = load_scenario(tmp_path / "s.json")
    res = run_scenario(scn)
    assert (tmp_path / "traj.csv").exists() and (tmp_path / "prof.txt").exists()
    state = read_state_csv(res.network, tmp_path / "state.csv")
    assert np.array_equal(state, res.state)
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")


def test_csv_format_and_determinism(tmp_path):
    net = random_tangent(200, seed=3)
    paths = []
    for k in range(2):
        p = tmp_path / f"t{k}.csv"
        run_scenario(_scenario(net, output={"trajectory_csv": str(p)}))
        paths.append(p)
    a, b = (p.read_bytes() for p in paths)
    assert a == b
    rows = list(csv.reader(a.decode().splitlines()))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 1 + 7
    assert all(len(v.split("e")[0].replace("-", "").replace(".", "")) == 17 for v in rows[1])
    assert float(rows[-1][0]) == 6.0


@pytest.mark.parametrize("scheme", ["explicit", "implicit"])
def test_end_to_end_conservation_and_co2(scheme):
    net = random_tangent(200, seed=4)
    extra = {"dt_diffusion_s": 1.0, "dt_transform_s": 10.0} if scheme == "explicit" else {}
    res = run_scenario(_scenario(net, scheme=scheme, **extra))
    assert res.max_drift <= 1e-9
    co2 = [r.totals[4] for r in res.records]
    assert np.all(np.diff(co2) >= 0)
    assert res.records[0].percent.sum() == pytest.approx(100.0)
    assert res.records[-1].percent.sum() == pytest.approx(100.0, rel=1e-9)
    assert res.state.min() >= 0


def test_fixed_point_without_carbon():
    res = run_scenario(Scenario.from_dict({"preset": "blank", "network": chain(5),
                                           "t_end_hours": 2}))
    assert not res.state.any()


def test_air_balls_keep_zero_state():
    net = random_tangent(300, seed=8)
    res = run_scenario(_scenario(net, saturation=0.5, t_end_hours=2))
    assert not res.state[~res.water_mask].any()
    assert res.water_mask.sum() < 300


def test_failure_writes_error_marker(tmp_path):
    net = chain(3)
    p = tmp_path / "t.csv"
    scn = Scenario.from_dict({
        "preset": "blank", "network": net, "t_end_hours": 1, "scheme": "explicit",
        "coupling": "sync", "dt_diffusion_s": 3600.0, "max_backtracks": 0,
        "bio": {"d_c": 1e6}, "dom": {"kind": "single_ball", "ball": 0, "total": 1.0},
        "output": {"trajectory_csv": str(p)}})
    from poresim.errors import StepCollapse
    with pytest.raises(StepCollapse):
        run_scenario(scn)
    assert p.read_text().splitlines()[-1].startswith("# ERROR: StepCollapse")
