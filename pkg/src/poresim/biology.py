"""Node-local microbial decomposition: MB, DOM, SOM, FOM and CO2 pools.

Per-node states are rows of an ``(n, 5)`` array with columns ordered as
:data:`SPECIES`. Time is in days; masses share one unit per scenario; DOM
concentration is ``dom / volume`` with volumes in voxel^3.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import DomainError

SPECIES = ("mb", "dom", "som", "fom", "co2")
MB, DOM, SOM, FOM, CO2 = range(5)

SECONDS_PER_DAY = 86400.0
HOURS_PER_DAY = 24.0

_MASS_UNITS_PER_GRAM = {"g": 1.0, "mg": 1e3, "ug": 1e6, "µg": 1e6}


def grams_to(unit: str, grams):
    try:
        return grams * _MASS_UNITS_PER_GRAM[unit]
    except KeyError:
        raise DomainError(f"unknown mass unit {unit!r}") from None


def kappa_from_mass_ratio(ratio_g_per_g: float, voxel_size_um: float,
                          mass_unit: str = "mg", water_density_g_cm3: float = 1.0) -> float:
    """Convert a half-saturation constant in gC per g of water to mass per voxel^3.

    Assumes the water-filled pore volume holds water at ``water_density_g_cm3``.
    """
    voxel_cm3 = (voxel_size_um * 1e-4) ** 3
    return grams_to(mass_unit, ratio_g_per_g * water_density_g_cm3 * voxel_cm3)


def diffusion_from_cm2_per_s(d_cm2_s: float, voxel_size_um: float) -> float:
    """Molecular diffusion coefficient in cm^2/s expressed in voxel^2/day."""
    return d_cm2_s * SECONDS_PER_DAY / (voxel_size_um * 1e-4) ** 2


# Reference setup: 24 µm voxels, masses in mg, water density 1 g/cm^3.
REF_VOXEL_UM = 24.0
REF_KAPPA_RATIO = 0.001  # gC / g
REF_DC_CALIBRATED = 40000.0  # voxel^2 / day
REF_DC_LBM = 100000.0  # voxel^2 / day
REF_DC_MOLECULAR_CM2_S = 6.73e-6

DIFFUSION_PRESETS = {
    "calibrated": REF_DC_CALIBRATED,
    "lbm": REF_DC_LBM,
    "molecular": diffusion_from_cm2_per_s(REF_DC_MOLECULAR_CM2_S, REF_VOXEL_UM),
}


@dataclass(frozen=True)
class BioParams:
    """Rate constants (per day) of the decomposition model plus DOM diffusivity.

    Defaults are the reference parameter set; ``kappa_b`` is
    the 0.001 gC/g half-saturation expressed in mg per 24 µm voxel.
    """

    rho: float = 0.2
    mu: float = 0.5
    rho_m: float = 0.55
    v_fom: float = 0.3
    v_som: float = 0.01
    v_dom: float = 9.6
    kappa_b: float = kappa_from_mass_ratio(REF_KAPPA_RATIO, REF_VOXEL_UM, "mg")
    d_c: float = REF_DC_CALIBRATED

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise DomainError(f"{f.name} must be finite")
        for name in ("rho", "mu", "v_fom", "v_som", "v_dom", "d_c"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if not 0.0 <= self.rho_m <= 1.0:
            raise DomainError("rho_m must lie in [0, 1]")
        if self.kappa_b <= 0:
            raise DomainError("kappa_b must be > 0")

    def replace(self, **kw) -> "BioParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def zero_rates(cls, **kw) -> "BioParams":
        base = dict(rho=0.0, mu=0.0, rho_m=0.0, v_fom=0.0, v_som=0.0, v_dom=0.0)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class BioState:
    mb: float = 0.0
    dom: float = 0.0
    som: float = 0.0
    fom: float = 0.0
    co2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.mb, self.dom, self.som, self.fom, self.co2], dtype=float)

    @classmethod
    def from_array(cls, a) -> "BioState":
        return cls(*(float(x) for x in a))

    def total(self) -> float:
        return math.fsum(self.as_array())


def transform_delta(states: np.ndarray, volumes: np.ndarray, params: BioParams,
                    dt: float) -> np.ndarray:
    """Mass changes of one explicit Euler biology step, shape ``(n, 5)``.

    Every row sums to zero up to rounding: each process moves mass from one
    pool to another.
    """
    x = np.asarray(states, dtype=float)
    mb, dom, som, fom = x[:, MB], x[:, DOM], x[:, SOM], x[:, FOM]
    # transient negative DOM must not flip the sign of the uptake
    c = np.maximum(dom, 0.0) / volumes
    resp = params.rho * mb * dt
    mort = params.mu * mb * dt
    mort_dom = params.rho_m * mort
    mort_som = mort - mort_dom
    growth = params.v_dom * c / (params.kappa_b + c) * mb * dt
    som_dec = params.v_som * som * dt
    fom_dec = params.v_fom * fom * dt

    d = np.empty_like(x)
    d[:, MB] = growth - resp - mort
    d[:, DOM] = mort_dom - growth + som_dec + fom_dec
    d[:, SOM] = mort_som - som_dec
    d[:, FOM] = -fom_dec
    d[:, CO2] = resp
    return d


def transform_node(state: BioState, volume: float, params: BioParams, dt: float) -> BioState:
    if dt <= 0 or volume <= 0:
        raise DomainError("dt and volume must be positive")
    x = state.as_array()[None, :]
    return BioState.from_array((x + transform_delta(x, np.array([volume]), params, dt))[0])


def transform_all(states: np.ndarray, volumes: np.ndarray, params: BioParams, dt: float,
                  water_mask: np.ndarray | None = None) -> np.ndarray:
    """Apply the biology step independently at every water-filled node.

    ``volumes`` may also be a :class:`~poresim.network.PoreNetwork`.
    """
    volumes = getattr(volumes, "volumes", volumes)
    states = np.asarray(states, dtype=float)
    out = states.copy()
    if water_mask is None:
        out += transform_delta(states, volumes, params, dt)
    else:
        idx = np.flatnonzero(water_mask)
        out[idx] += transform_delta(states[idx], volumes[idx], params, dt)
    return out

