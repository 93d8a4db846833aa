"""Scenario configuration, initial conditions and the top-level scheduler.

A scenario is a JSON document; a named preset supplies defaults and the
document overrides them key by key. Times in the document are in seconds
(time steps) and hours or days (durations); the engine works in days.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biology import (DIFFUSION_PRESETS, HOURS_PER_DAY, SPECIES, BioParams, grams_to,
                      kappa_from_mass_ratio, REF_KAPPA_RATIO, REF_VOXEL_UM)
from .drainage import drain_to_saturation
from .errors import ConfigError, NumericalError
from .explicit import Coupling, ExplicitConfig, ExplicitScheme
from .implicit import ImplicitConfig, ImplicitScheme
from .network import DEFAULT_CONTACT_FACTOR, PoreNetwork, load_network
from .placement import (place_dom_single_ball, place_dom_slab, place_dom_uniform,
                        place_explicit, place_mb_spots)
from .calibration import plane_profile, write_profile

logger = logging.getLogger(__name__)

_REFERENCE = {
    "scheme": "implicit",
    "coupling": "async",
    "saturation": 1.0,
    "contact_factor": DEFAULT_CONTACT_FACTOR,
    "mass_unit": "mg",
    "voxel_size_um": REF_VOXEL_UM,
    "bio": {},
    "dt_diffusion_s": 10.0,
    "dt_transform_s": 10.0,
    "t_end_days": 5.0,
    "sample_every_hours": 1.0,
    "p_neg": 0.01,
    "max_backtracks": 30,
    "cg_tol": 1e-10,
    "dom": {"kind": "uniform", "total": 0.2895},
    "mb": {"kind": "spots", "count": 1000, "bacteria": 5.2e7, "bacterium_mass_g": 2e-12},
    "seed": 0,
}

PRESETS = {
    "paper-2021": _REFERENCE,
    "paper-2021-explicit": {**_REFERENCE, "scheme": "explicit", "dt_diffusion_s": 0.3,
                            "dt_transform_s": 9.0},
    "paper-2021-long": {**_REFERENCE, "t_end_days": 30.0,
                        "dom": {"kind": "single_ball", "ball": "random", "total": 0.2895}},
    "blank": {"scheme": "implicit", "coupling": "async", "saturation": 1.0,
              "contact_factor": DEFAULT_CONTACT_FACTOR, "mass_unit": "mg", "bio": {},
              "dt_diffusion_s": 10.0, "dt_transform_s": 10.0, "sample_every_hours": 1.0,
              "p_neg": 0.01, "max_backtracks": 30, "cg_tol": 1e-10, "seed": 0},
}

_KNOWN_KEYS = {
    "preset", "network", "network_format", "derive_arcs", "contact_factor", "saturation",
    "scheme", "coupling", "mass_unit", "voxel_size_um", "bio", "diffusion_preset",
    "dt_diffusion_s", "dt_transform_s", "t_end_hours", "t_end_days", "sample_every_hours",
    "p_neg", "max_backtracks", "recover_after", "diffusion_first", "cg_tol", "cg_max_iter",
    "dom", "mb", "som", "fom", "seed", "output",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k in ("bio", "output"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    """Resolved scenario settings. Build with :meth:`from_dict` or :func:`load_scenario`."""

    network: object = None  # path or PoreNetwork
    network_format: str = "text"
    derive_arcs: bool | None = None
    contact_factor: float = DEFAULT_CONTACT_FACTOR
    saturation: float = 1.0
    scheme: str = "implicit"
    coupling: str = "async"
    mass_unit: str = "mg"
    bio: BioParams = field(default_factory=BioParams)
    dt_diffusion_s: float = 10.0
    dt_transform_s: float = 10.0
    t_end_days: float = 5.0
    sample_every_hours: float = 1.0
    p_neg: float = 0.01
    max_backtracks: int = 30
    recover_after: int | None = None
    diffusion_first: bool = True
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None
    dom: dict | None = None
    mb: dict | None = None
    som: dict | None = None
    fom: dict | None = None
    seed: int | None = 0
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "Scenario":
        unknown = set(doc) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        preset = doc.get("preset", "blank")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        d = _merge(PRESETS[preset], doc)
        d.pop("preset", None)

        bio_over = dict(d.pop("bio", {}) or {})
        if "kappa_b_ratio" in bio_over:
            ratio = bio_over.pop("kappa_b_ratio")
            bio_over["kappa_b"] = kappa_from_mass_ratio(
                ratio, float(d.get("voxel_size_um", REF_VOXEL_UM)), d.get("mass_unit", "mg"))
        elif "kappa_b" not in bio_over and d.get("mass_unit", "mg") != "mg":
            bio_over["kappa_b"] = kappa_from_mass_ratio(
                REF_KAPPA_RATIO, float(d.get("voxel_size_um", REF_VOXEL_UM)), d["mass_unit"])
        dp = d.pop("diffusion_preset", None)
        if dp is not None:
            if dp not in DIFFUSION_PRESETS:
                raise ConfigError(f"unknown diffusion preset {dp!r}")
            bio_over.setdefault("d_c", DIFFUSION_PRESETS[dp])
        d.pop("voxel_size_um", None)
        try:
            bio = BioParams(**bio_over)
        except TypeError as e:
            raise ConfigError(f"bad bio parameters: {e}") from None

        if "t_end_hours" in d and "t_end_days" in doc:
            raise ConfigError("give t_end_hours or t_end_days, not both")
        if "t_end_hours" in d:
            d["t_end_days"] = float(d.pop("t_end_hours")) / HOURS_PER_DAY
        if "t_end_days" not in d:
            raise ConfigError("scenario needs t_end_hours or t_end_days")
        try:
            scn = cls(bio=bio, base_dir=Path(base_dir or Path.cwd()), **d)
        except TypeError as e:
            raise ConfigError(str(e)) from None
        scn.validate()
        return scn

    def validate(self):
        if self.network is None:
            raise ConfigError("scenario has no network")
        if not self.t_end_days > 0:
            raise ConfigError("t_end must be positive")
        if not self.sample_every_hours > 0:
            raise ConfigError("sample interval must be positive")
        if not 0 < self.saturation <= 1:
            raise ConfigError("saturation must lie in (0, 1]")
        if self.scheme not in ("explicit", "implicit"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.coupling not in ("sync", "async"):
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.scheme == "implicit" and self.coupling == "sync":
            raise ConfigError("the implicit scheme only supports asynchronous coupling")
        grams_to(self.mass_unit, 1.0)
        for name in ("dom", "mb", "som", "fom"):
            spec = getattr(self, name)
            if spec is not None and spec.get("kind", "none") != "none":
                total = spec.get("total", 0.0)
                if total is not None and total < 0:
                    raise ConfigError(f"{name}: total mass must be >= 0")
                if spec.get("kind") == "spots" and spec.get("count", 1) < 1:
                    raise ConfigError(f"{name}: spot count must be >= 1")
        self.scheme_config()

    def scheme_config(self):
        try:
            if self.scheme == "explicit":
                return ExplicitConfig(self.dt_diffusion_s, self.dt_transform_s, self.p_neg,
                                      self.max_backtracks, Coupling(self.coupling),
                                      self.diffusion_first, self.recover_after)
            return ImplicitConfig(self.dt_diffusion_s, self.dt_transform_s, self.cg_tol,
                                  self.cg_max_iter, self.p_neg, self.max_backtracks)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read scenario {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario file must hold a JSON object")
    return Scenario.from_dict(doc, base_dir=path.parent)


@dataclass(frozen=True)
class TrajectoryRecord:
    time_h: float
    totals: np.ndarray  # species masses, SPECIES order
    percent: np.ndarray  # of the total initial carbon

    def as_row(self):
        return [self.time_h, *self.totals, *self.percent]


CSV_HEADER = ["time_h", *SPECIES, *(f"{s}_pct" for s in SPECIES)]


def _fmt(x: float) -> str:
    return f"{x:.16e}"


@dataclass
class ScenarioResult:
    network: PoreNetwork
    water_mask: np.ndarray
    initial_state: np.ndarray
    state: np.ndarray
    records: list = field(default_factory=list)
    backtracks: int = 0
    steps: int = 0
    max_drift: float = 0.0
    error: str | None = None
    cg_iterations: int = 0

    def write_csv(self, path):
        write_trajectory_csv(self.records, path, self.error)

    def write_state(self, path):
        write_state_csv(self.network, self.water_mask, self.state, path)


def write_trajectory_csv(records, path, error: str | None = None):
    """Write the sampled totals to ``path`` (a file name or an open text stream)."""
    if hasattr(path, "write"):
        _write_trajectory(records, path, error)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_trajectory(records, fh, error)


def _write_trajectory(records, fh, error):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow([_fmt(v) for v in rec.as_row()])
    if error is not None:
        fh.write(f"# ERROR: {error}\n")


def write_state_csv(net: PoreNetwork, water_mask, state, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ball_id", "water", *SPECIES])
        for k in range(net.n_nodes):
            w.writerow([int(net.external_ids[k]), int(bool(water_mask[k])),
                        *(_fmt(v) for v in state[k])])


def read_state_csv(net: PoreNetwork, path) -> np.ndarray:
    state = np.zeros((net.n_nodes, len(SPECIES)))
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            k = net.index_of(int(row["ball_id"]))
            state[k] = [float(row[s]) for s in SPECIES]
    return state


def _place(kind_spec, net, water, rng, unit, pool):
    if kind_spec is None:
        return np.zeros(net.n_nodes)
    kind = kind_spec.get("kind", "none")
    total = kind_spec.get("total")
    if kind == "none":
        return np.zeros(net.n_nodes)
    if kind == "uniform":
        return place_dom_uniform(net, water, float(total))
    if kind == "single_ball":
        ball = kind_spec.get("ball", "random")
        if ball != "random":
            ball = net.index_of(int(ball))
        return place_dom_single_ball(net, water, float(total), ball, rng)
    if kind == "plane_slab":
        return place_dom_slab(net, water, float(total), float(kind_spec.get("z_min", 0.0)),
                              float(kind_spec.get("z_max", 2.0)))
    if kind == "spots":
        if total is None:
            grams = float(kind_spec["bacteria"]) * float(kind_spec.get("bacterium_mass_g", 2e-12))
            total = grams_to(unit, grams)
        return place_mb_spots(net, water, int(kind_spec["count"]), float(total), rng)
    if kind == "explicit":
        return place_explicit(net, water, kind_spec["masses"])
    raise ConfigError(f"{pool}: unknown placement kind {kind!r}")


def initial_state(scn: Scenario, net: PoreNetwork, water) -> np.ndarray:
    # one generator, fixed draw order: mb spots first, then pools in SPECIES order
    rng = np.random.default_rng(scn.seed)
    state = np.zeros((net.n_nodes, len(SPECIES)))
    state[:, 0] = _place(scn.mb, net, water, rng, scn.mass_unit, "mb")
    for col, name in ((1, "dom"), (2, "som"), (3, "fom")):
        state[:, col] = _place(getattr(scn, name), net, water, rng, scn.mass_unit, name)
    return state


def build_scheme(scn: Scenario, net: PoreNetwork, water):
    cfg = scn.scheme_config()
    if scn.scheme == "explicit":
        return ExplicitScheme(net, water, scn.bio, cfg)
    return ImplicitScheme(net, water, scn.bio, cfg)


def load_scenario_network(scn: Scenario) -> PoreNetwork:
    if isinstance(scn.network, PoreNetwork):
        return scn.network.with_contact_factor(scn.contact_factor)
    return load_network(scn.resolve(scn.network), scn.network_format,
                        contact_factor=scn.contact_factor, derive=scn.derive_arcs)


def run_scenario(scn: Scenario, on_step=None, write_outputs: bool = True) -> ScenarioResult:
    """Drain, place, integrate to ``t_end`` and sample global totals.

    On a numerical failure the records gathered so far are written with an
    error marker before the exception propagates.
    """
    net = load_scenario_network(scn)
    water = drain_to_saturation(net, scn.saturation).water_mask
    x0 = initial_state(scn, net, water)
    total0 = math.fsum(x0.ravel())
    scale = 100.0 / total0 if total0 > 0 else 0.0
    scheme = build_scheme(scn, net, water)
    res = ScenarioResult(net, water, x0, x0)

    def record(t_days, x):
        tot = x.sum(axis=0)
        res.records.append(TrajectoryRecord(t_days * HOURS_PER_DAY, tot, tot * scale))
        if total0 > 0:
            res.max_drift = max(res.max_drift, abs(math.fsum(x.ravel()) - total0) / total0)

    t_end = scn.t_end_days
    every = scn.sample_every_hours / HOURS_PER_DAY
    n_samples = max(1, math.ceil(t_end / every - 1e-9))
    x = x0
    record(0.0, x)
    t_prev = 0.0
    try:
        for k in range(1, n_samples + 1):
            t_next = min(k * every, t_end)
            x = scheme.advance(x, t_next - t_prev, on_step)
            t_prev = t_next
            record(t_next, x)
    except NumericalError as e:
        res.error = f"{type(e).__name__}: {e}"
        raise
    finally:
        res.state = x
        res.backtracks = scheme.backtracks
        res.steps = scheme.steps
        if isinstance(scheme, ImplicitScheme):
            res.cg_iterations = scheme.diffuser.stats.iterations
        if write_outputs:
            _write_outputs(scn, res)
    if res.max_drift > 1e-10:
        logger.warning("global mass drift %.3e exceeds 1e-10", res.max_drift)
    return res


def _write_outputs(scn: Scenario, res: ScenarioResult):
    out = scn.output or {}
    if out.get("trajectory_csv"):
        res.write_csv(scn.resolve(out["trajectory_csv"]))
    if out.get("final_state_csv"):
        res.write_state(scn.resolve(out["final_state_csv"]))
    prof = out.get("profile")
    if prof and prof.get("path"):
        p = plane_profile(res.network, res.state[:, 1], int(prof.get("planes", 300)),
                          binning=prof.get("binning", "center"))
        write_profile(p, scn.resolve(prof["path"]))
