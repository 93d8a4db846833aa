"""Plane-wise DOM mass profiles and contact-factor calibration.

A profile holds, for each z-plane, the total DOM mass found there. Two
profiles are compared with the cosine of the angle between them, and the
contact-area factor is picked on a grid by maximising that cosine.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .biology import SECONDS_PER_DAY
from .errors import DomainError, ParseError, ZeroProfile
from .implicit import ImplicitDiffuser, run_pure_diffusion
from .linsolve import DEFAULT_TOL
from .network import PoreNetwork

logger = logging.getLogger(__name__)

DEFAULT_PLANES = 300


@dataclass(frozen=True)
class MassProfile:
    values: np.ndarray
    plane_thickness: float = 1.0
    dropped: float = 0.0

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _sphere_slab_volume(zc, r, a, b):
    """Volume of the ball (center height zc, radius r) between heights a and b."""
    lo = np.clip(a - zc, -r, r)
    hi = np.clip(b - zc, -r, r)
    return math.pi * (r * r * (hi - lo) - (hi ** 3 - lo ** 3) / 3.0)


def plane_profile(net: PoreNetwork, dom, planes: int = DEFAULT_PLANES,
                  plane_thickness: float = 1.0, binning: str = "center") -> MassProfile:
    """Total mass per z-plane ``[k t, (k+1) t)`` for ``k = 0 .. planes-1``.

    ``binning="center"`` puts each ball's mass in the plane holding its
    center; ``"overlap"`` splits it by the ball volume lying in each plane.
    Mass outside the covered planes is reported as ``dropped``.
    """
    if planes < 1:
        raise DomainError("planes must be >= 1")
    if plane_thickness <= 0:
        raise DomainError("plane_thickness must be positive")
    dom = np.asarray(dom, dtype=float)
    z = net.centers[:, 2]
    if binning == "center":
        k = np.floor(z / plane_thickness).astype(np.int64)
        ok = (k >= 0) & (k < planes)
        values = np.bincount(k[ok], dom[ok], minlength=planes)
    elif binning == "overlap":
        r = net.radii
        first = np.floor((z - r) / plane_thickness).astype(np.int64)
        last = np.floor((z + r) / plane_thickness).astype(np.int64)
        vol = 4.0 / 3.0 * math.pi * r ** 3
        values = np.zeros(planes)
        for off in range(int((last - first).max()) + 1 if len(z) else 0):
            k = first + off
            ok = (k <= last) & (k >= 0) & (k < planes)
            frac = _sphere_slab_volume(z[ok], r[ok], k[ok] * plane_thickness,
                                       (k[ok] + 1) * plane_thickness) / vol[ok]
            values += np.bincount(k[ok], dom[ok] * frac, minlength=planes)
    else:
        raise DomainError(f"unknown binning {binning!r}")
    dropped = float(dom.sum() - values.sum())
    return MassProfile(values, plane_thickness, dropped)


def cosine_similarity(L, M) -> float:
    a = np.asarray(L, dtype=float)
    b = np.asarray(M, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"profiles differ in length: {a.shape} vs {b.shape}")
    sa, sb = np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)
    if sa == 0 or sb == 0:
        raise ZeroProfile("cosine of a zero profile is undefined")
    a, b = a / sa, b / sb
    # sqrt(x*x) == x in binary floating point, so cos(L, L) is exactly 1
    cos = float(a @ b) / math.sqrt(float(a @ a) * float(b @ b))
    return min(1.0, max(-1.0, cos))


def read_profile(path) -> MassProfile:
    vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                vals.append(float(s.split()[0].rstrip(",")))
            except ValueError:
                raise ParseError(f"not a number: {s!r}", lineno) from None
    return MassProfile(np.array(vals))


def write_profile(profile, path):
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(profile, dtype=float):
            fh.write(f"{v:.17e}\n")


def alpha_grid(alpha_min: float = 0.55, alpha_max: float = 1.0, step: float = 0.05) -> np.ndarray:
    """Grid ``alpha_min, alpha_min + step, ...`` up to ``alpha_max`` (inclusive)."""
    if step <= 0:
        raise DomainError("alpha step must be positive")
    n = int(math.floor((alpha_max - alpha_min) / step + 1e-9)) + 1
    grid = np.round(alpha_min + step * np.arange(n), 12)
    if np.any(grid <= 0.5) or np.any(grid > 1.0):
        raise DomainError("alpha candidates must lie in (0.5, 1]")
    return grid


@dataclass
class FitResult:
    alpha: float
    cosine: float
    table: list = field(default_factory=list)  # (alpha, cosine) per candidate


def simulate_profile(net: PoreNetwork, dom0, alpha: float, d_c: float, t_end: float,
                     water_mask=None, dt: float = 10.0 / SECONDS_PER_DAY,
                     planes: int = DEFAULT_PLANES, binning: str = "center",
                     tol: float = DEFAULT_TOL) -> MassProfile:
    """Pure implicit diffusion at contact factor ``alpha`` for ``t_end`` days, then profile."""
    net_a = net.with_contact_factor(alpha)
    diffuser = ImplicitDiffuser(net_a, water_mask, d_c, tol)
    m = run_pure_diffusion(dom0, net_a, water_mask, d_c, dt, t_end, diffuser=diffuser)
    return plane_profile(net_a, m, planes, binning=binning)


def fit_alpha(net: PoreNetwork, dom0, reference, d_c: float, t_end: float,
              alpha_candidates=None, water_mask=None, dt: float = 10.0 / SECONDS_PER_DAY,
              binning: str = "center", workers: int | None = None) -> FitResult:
    """Grid search for the contact factor whose profile best matches ``reference``.

    Ties (within 1e-12) go to the larger factor.
    """
    grid = alpha_grid() if alpha_candidates is None else np.asarray(alpha_candidates, float)
    if np.any(grid <= 0.5) or np.any(grid > 1.0):
        raise DomainError("alpha candidates must lie in (0.5, 1]")
    ref = np.asarray(reference, dtype=float)
    planes = len(ref)
    workers = workers or int(os.environ.get("PORESIM_THREADS", "1"))

    def score(a):
        prof = simulate_profile(net, dom0, float(a), d_c, t_end, water_mask, dt, planes, binning)
        return float(a), cosine_similarity(ref, prof)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            table = list(pool.map(score, grid))
    else:
        table = [score(a) for a in grid]
    best_a, best_c = table[0]
    for a, c in table[1:]:
        if c > best_c + 1e-12 or (abs(c - best_c) <= 1e-12 and a > best_a):
            best_a, best_c = a, c
    for a, c in table:
        logger.info("alpha=%.3f cosine=%.6f", a, c)
    return FitResult(best_a, best_c, table)
