"""Morphological drainage by radius thresholding.

Balls with radius above the threshold are emptied (air-filled); the rest stay
water-filled. The threshold is picked on the discrete set of ball radii.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyNetworkError
from .network import PoreNetwork

# saturation comparisons tolerate accumulated rounding in the volume sums
_SAT_RTOL = 1e-12


@dataclass(frozen=True)
class DrainageResult:
    threshold: float
    water_mask: np.ndarray
    achieved_saturation: float

    @property
    def n_water(self) -> int:
        return int(np.count_nonzero(self.water_mask))

    def water_ids(self) -> np.ndarray:
        return np.flatnonzero(self.water_mask)


def saturation_curve(net: PoreNetwork):
    """Candidate thresholds (sorted unique radii) and the saturation each one gives."""
    if net.n_nodes == 0:
        raise EmptyNetworkError("network has no balls")
    order = np.argsort(net.radii, kind="stable")
    r = net.radii[order]
    cum = np.cumsum(net.volumes[order])
    last = np.flatnonzero(np.r_[r[1:] != r[:-1], True])
    return r[last], cum[last] / cum[-1]


def drain_with_threshold(net: PoreNetwork, threshold: float) -> DrainageResult:
    mask = net.radii <= threshold
    total = net.volumes.sum()
    sat = float(net.volumes[mask].sum() / total) if total > 0 else 0.0
    return DrainageResult(float(threshold), mask, sat)


def drain_to_saturation(net: PoreNetwork, target: float) -> DrainageResult:
    """Smallest radius threshold whose water-filled volume fraction reaches ``target``."""
    if not 0.0 < target <= 1.0:
        raise DomainError(f"target saturation must lie in (0, 1], got {target}")
    thresholds, sats = saturation_curve(net)
    if target >= 1.0:
        k = len(thresholds) - 1
    else:
        k = int(np.searchsorted(sats, target * (1.0 - _SAT_RTOL), side="left"))
        k = min(k, len(thresholds) - 1)
    return drain_with_threshold(net, thresholds[k])
