"""Synthetic tangent-ball networks used as fixtures and desk-scale test beds."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .network import DEFAULT_CONTACT_FACTOR, PoreNetwork, derive_arcs

KINDS = ("chain", "grid3d", "random_tangent")


def chain(n: int, radius: float = 1.0, contact_factor=DEFAULT_CONTACT_FACTOR) -> PoreNetwork:
    """``n`` equal balls stacked along z, each tangent to the next."""
    if n < 1:
        raise DomainError("size must be >= 1")
    z = radius + 2.0 * radius * np.arange(n)
    centers = np.column_stack([np.full(n, radius), np.full(n, radius), z])
    radii = np.full(n, float(radius))
    return PoreNetwork(centers, radii, derive_arcs(centers, radii),
                       contact_factor=contact_factor)


def grid3d(shape, radius: float = 1.0, contact_factor=DEFAULT_CONTACT_FACTOR) -> PoreNetwork:
    """Cubic lattice of equal tangent balls; arcs join axis neighbours only."""
    if np.isscalar(shape):
        shape = (int(shape),) * 3
    nx, ny, nz = (int(s) for s in shape)
    if min(nx, ny, nz) < 1:
        raise DomainError("grid dimensions must be >= 1")
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    centers = radius + 2.0 * radius * np.column_stack([ix.ravel(), iy.ravel(), iz.ravel()])
    radii = np.full(len(centers), float(radius))
    return PoreNetwork(centers, radii, derive_arcs(centers, radii),
                       contact_factor=contact_factor)


def random_tangent(n: int, seed: int = 0, r_min: float = 1.0, r_max: float = 3.0,
                   contact_factor=DEFAULT_CONTACT_FACTOR, max_tries: int = 10_000) -> PoreNetwork:
    """Random cluster grown by attaching each new ball tangent to an existing one.

    Balls never overlap (pairwise disjoint or tangent), so the cluster is a
    connected set of tangent primitives. The bounding box is shifted to start
    at the origin.
    """
    if n < 1:
        raise DomainError("size must be >= 1")
    if not 0 < r_min <= r_max:
        raise DomainError("need 0 < r_min <= r_max")
    rng = np.random.default_rng(seed)
    radii = rng.uniform(r_min, r_max, size=n)
    centers = np.zeros((n, 3))
    for k in range(1, n):
        r = radii[k]
        for _ in range(max_tries):
            parent = rng.integers(k)
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            c = centers[parent] + (radii[parent] + r) * u
            gap = np.linalg.norm(centers[:k] - c, axis=1) - (radii[:k] + r)
            gap[parent] = 0.0
            if gap.min() >= -1e-9:
                centers[k] = c
                break
        else:
            raise RuntimeError(f"could not place ball {k} after {max_tries} tries")
    centers -= (centers - radii[:, None]).min(axis=0)
    return PoreNetwork(centers, radii, derive_arcs(centers, radii),
                       contact_factor=contact_factor)


def generate_synthetic_network(kind: str, size, seed: int = 0, **kw) -> PoreNetwork:
    if kind == "chain":
        return chain(int(size), **kw)
    if kind == "grid3d":
        return grid3d(size, **kw)
    if kind == "random_tangent":
        return random_tangent(int(size), seed=seed, **kw)
    raise DomainError(f"unknown network kind {kind!r}; choose from {', '.join(KINDS)}")
