"""Initial distribution of carbon pools over water-filled balls."""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NoWaterError, TooManySpots, ValidationError
from .network import PoreNetwork


def _water_ids(net: PoreNetwork, water_mask) -> np.ndarray:
    ids = np.arange(net.n_nodes) if water_mask is None else np.flatnonzero(water_mask)
    if not len(ids):
        raise NoWaterError("no water-filled ball to place mass in")
    return ids


def _spread_by_volume(net, ids, total):
    out = np.zeros(net.n_nodes)
    if total == 0:
        return out
    v = net.volumes[ids]
    out[ids] = total * v / v.sum()
    return out


def place_dom_uniform(net: PoreNetwork, water_mask, total: float) -> np.ndarray:
    """Same concentration in every water ball; masses sum to ``total``."""
    if total < 0:
        raise DomainError("total mass must be >= 0")
    return _spread_by_volume(net, _water_ids(net, water_mask), total)


def place_dom_single_ball(net: PoreNetwork, water_mask, total: float, ball="random",
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """All mass in one water ball, given by dense index or drawn at random."""
    if total < 0:
        raise DomainError("total mass must be >= 0")
    ids = _water_ids(net, water_mask)
    if ball == "random":
        rng = rng or np.random.default_rng()
        k = int(rng.choice(ids))
    else:
        k = int(ball)
        if k not in set(ids.tolist()):
            raise ValidationError(f"ball {k} is not a water-filled ball")
    out = np.zeros(net.n_nodes)
    out[k] = total
    return out


def balls_in_slab(net: PoreNetwork, z_min: float, z_max: float, water_mask=None) -> np.ndarray:
    """Balls whose z-extent ``[z - r, z + r]`` meets the slab ``[z_min, z_max)``."""
    z, r = net.centers[:, 2], net.radii
    hit = (z - r < z_max) & (z + r >= z_min)
    if water_mask is not None:
        hit &= np.asarray(water_mask, dtype=bool)
    return np.flatnonzero(hit)


def place_dom_slab(net: PoreNetwork, water_mask, total: float, z_min: float = 0.0,
                   z_max: float = 2.0) -> np.ndarray:
    """Mass split over the balls crossing a z-slab, proportionally to their volumes."""
    if total < 0:
        raise DomainError("total mass must be >= 0")
    _water_ids(net, water_mask)
    ids = balls_in_slab(net, z_min, z_max, water_mask)
    if not len(ids):
        raise NoWaterError(f"no water ball intersects planes [{z_min}, {z_max})")
    return _spread_by_volume(net, ids, total)


def place_mb_spots(net: PoreNetwork, water_mask, n_spots: int, total: float,
                   seed=None) -> np.ndarray:
    """``n_spots`` distinct water balls drawn uniformly, each getting ``total / n_spots``."""
    if n_spots < 1:
        raise DomainError("n_spots must be >= 1")
    if total < 0:
        raise DomainError("total mass must be >= 0")
    ids = _water_ids(net, water_mask)
    if n_spots > len(ids):
        raise TooManySpots(f"{n_spots} spots requested, only {len(ids)} water-filled balls")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = rng.choice(ids, size=n_spots, replace=False)
    out = np.zeros(net.n_nodes)
    out[chosen] = total / n_spots
    return out


def place_explicit(net: PoreNetwork, water_mask, masses: dict) -> np.ndarray:
    """Masses keyed by external ball id (as in the network file)."""
    out = np.zeros(net.n_nodes)
    water = np.ones(net.n_nodes, bool) if water_mask is None else np.asarray(water_mask, bool)
    for ext, m in masses.items():
        try:
            k = net.index_of(int(ext))
        except KeyError:
            raise ValidationError(f"unknown ball id {ext}") from None
        if m < 0:
            raise DomainError(f"negative mass for ball {ext}")
        if not water[k]:
            raise ValidationError(f"ball {ext} is air-filled")
        out[k] += float(m)
    return out
