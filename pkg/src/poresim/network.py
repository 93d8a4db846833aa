"""Attributed relational graph of pore-space balls.

Nodes are balls (center, radius, volume); arcs join adjacent balls and carry
the center distance and the contact-surface area used by the Fick flux.
All arrays are stored read-only: a network is never mutated once built.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .errors import DomainError, ParseError, ValidationError

logger = logging.getLogger(__name__)

#: Contact-area factor fitted against the reference diffusion profiles.
DEFAULT_CONTACT_FACTOR = 0.6
#: Slack on the tangency test when arcs are derived from geometry (voxels).
TANGENCY_EPS = 1e-6


class NetworkFormat(str, enum.Enum):
    TEXT = "text"


@dataclass(frozen=True)
class BallNode:
    id: int
    center: tuple[float, float, float]
    radius: float
    volume: float


@dataclass(frozen=True)
class AdjacencyArc:
    node_i: int
    node_j: int
    distance: float
    contact_area: float


def ball_volume(radius):
    return 4.0 / 3.0 * math.pi * np.asarray(radius, dtype=float) ** 3


def compute_contact_area(r_i, r_j, alpha=DEFAULT_CONTACT_FACTOR):
    """Area of the contact disk between two adjacent balls.

    The disk takes the smaller of the two radii and is scaled by ``alpha``:
    ``alpha * pi * min(r_i, r_j)**2``. Works elementwise on arrays.
    """
    r_i = np.asarray(r_i, dtype=float)
    r_j = np.asarray(r_j, dtype=float)
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"contact factor must lie in (0, 1], got {alpha}")
    if np.any(r_i <= 0) or np.any(r_j <= 0):
        raise DomainError("radii must be positive")
    area = alpha * math.pi * np.minimum(r_i, r_j) ** 2
    return float(area) if area.ndim == 0 else area


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


class PoreNetwork:
    """Immutable ball network.

    Parameters
    ----------
    centers : (n, 3) array
        Ball centers in voxel units.
    radii : (n,) array
        Ball radii, voxel units.
    edges : (m, 2) int array
        Arc endpoints as dense node indices. Stored with ``i < j``.
    volumes : (n,) array, optional
        Defaults to the ball volume ``4/3 pi r^3``.
    distances : (m,) array, optional
        Defaults to the Euclidean center distance.
    contact_areas : (m,) array, optional
        Defaults to :func:`compute_contact_area` with ``contact_factor``.
    external_ids : (n,) int array, optional
        Ids used in the source file; defaults to ``0..n-1``.
    """

    def __init__(
        self,
        centers,
        radii,
        edges=None,
        volumes=None,
        distances=None,
        contact_areas=None,
        external_ids=None,
        contact_factor: float = DEFAULT_CONTACT_FACTOR,
    ):
        centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        radii = np.asarray(radii, dtype=float).reshape(-1)
        n = len(radii)
        if centers.shape[0] != n:
            raise ValidationError("centers and radii differ in length")
        if np.any(~np.isfinite(centers)) or np.any(~np.isfinite(radii)):
            raise ValidationError("non-finite ball geometry")
        if np.any(radii <= 0):
            bad = int(np.flatnonzero(radii <= 0)[0])
            raise ValidationError(f"ball {bad} has non-positive radius {radii[bad]}")
        volumes = ball_volume(radii) if volumes is None else np.asarray(volumes, dtype=float)
        if volumes.shape != (n,) or np.any(~(volumes > 0)):
            raise ValidationError("ball volumes must be positive")
        if external_ids is None:
            external_ids = np.arange(n)
        external_ids = np.asarray(external_ids, dtype=np.int64)
        if len(np.unique(external_ids)) != n:
            raise ValidationError("duplicate ball ids")

        edges = np.zeros((0, 2), dtype=np.int64) if edges is None else np.asarray(edges, dtype=np.int64)
        edges = edges.reshape(-1, 2)
        m = len(edges)
        if m:
            if edges.min() < 0 or edges.max() >= n:
                bad = int(np.flatnonzero((edges < 0).any(1) | (edges >= n).any(1))[0])
                raise ValidationError(f"arc {bad} references a node outside 0..{n - 1}")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValidationError("self-loop arc")
            edges = np.sort(edges, axis=1)
            keys = edges[:, 0] * n + edges[:, 1]
            if len(np.unique(keys)) != m:
                raise ValidationError("duplicate arc")

        geo = np.linalg.norm(centers[edges[:, 1]] - centers[edges[:, 0]], axis=1)
        distances = geo if distances is None else np.asarray(distances, dtype=float)
        if distances.shape != (m,) or np.any(~(distances > 0)):
            raise ValidationError("arc distances must be positive (coincident centers?)")
        if contact_areas is None:
            contact_areas = compute_contact_area(
                radii[edges[:, 0]], radii[edges[:, 1]], contact_factor
            ) if m else np.zeros(0)
        contact_areas = np.asarray(contact_areas, dtype=float).reshape(-1)
        if contact_areas.shape != (m,) or np.any(~(contact_areas > 0)):
            raise ValidationError("contact areas must be positive")

        self.centers = _frozen(centers, float)
        self.radii = _frozen(radii, float)
        self.volumes = _frozen(volumes, float)
        self.edges = _frozen(edges, np.int64)
        self.distances = _frozen(distances, float)
        self.contact_areas = _frozen(contact_areas, float)
        self.external_ids = _frozen(external_ids, np.int64)
        self._adj = None

    # -- basic views -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.radii)

    @property
    def n_arcs(self) -> int:
        return len(self.edges)

    def __len__(self):
        return self.n_nodes

    def __repr__(self):
        return f"PoreNetwork(n_nodes={self.n_nodes}, n_arcs={self.n_arcs})"

    def node(self, i: int) -> BallNode:
        c = self.centers[i]
        return BallNode(int(i), (float(c[0]), float(c[1]), float(c[2])),
                        float(self.radii[i]), float(self.volumes[i]))

    @property
    def nodes(self) -> list[BallNode]:
        return [self.node(i) for i in range(self.n_nodes)]

    def arcs(self) -> Iterator[AdjacencyArc]:
        for k, (i, j) in enumerate(self.edges):
            yield AdjacencyArc(int(i), int(j), float(self.distances[k]),
                               float(self.contact_areas[k]))

    def _adjacency(self):
        if self._adj is None:
            n, e = self.n_nodes, self.edges
            src = np.concatenate([e[:, 0], e[:, 1]])
            dst = np.concatenate([e[:, 1], e[:, 0]])
            arc = np.concatenate([np.arange(len(e))] * 2)
            order = np.lexsort((dst, src))
            ptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
            self._adj = (ptr, dst[order], arc[order])
        return self._adj

    def neighbors(self, i: int) -> np.ndarray:
        """Node ids adjacent to ``i`` (its neighborhood)."""
        ptr, dst, _ = self._adjacency()
        return dst[ptr[i]:ptr[i + 1]]

    def incident_arcs(self, i: int) -> np.ndarray:
        ptr, _, arc = self._adjacency()
        return arc[ptr[i]:ptr[i + 1]]

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def arc_mask(self, active) -> np.ndarray:
        """Arcs whose two endpoints are both active."""
        if active is None:
            return np.ones(self.n_arcs, dtype=bool)
        active = np.asarray(active, dtype=bool)
        return active[self.edges[:, 0]] & active[self.edges[:, 1]]

    def with_contact_factor(self, alpha: float) -> "PoreNetwork":
        """Copy with every contact area recomputed as ``alpha*pi*min(r)^2``."""
        return PoreNetwork(
            self.centers, self.radii, self.edges, self.volumes, self.distances,
            None, self.external_ids, contact_factor=alpha,
        )

    def index_of(self, external_id: int) -> int:
        hit = np.flatnonzero(self.external_ids == external_id)
        if not len(hit):
            raise KeyError(external_id)
        return int(hit[0])


def derive_arcs(centers, radii, eps: float = TANGENCY_EPS) -> np.ndarray:
    """Pairs of balls that touch or overlap: ``|c_i - c_j| <= r_i + r_j + eps``."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(centers)
    pairs = tree.query_pairs(2.0 * radii.max() + eps, output_type="ndarray")
    if not len(pairs):
        return np.zeros((0, 2), dtype=np.int64)
    d = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
    keep = d <= radii[pairs[:, 0]] + radii[pairs[:, 1]] + eps
    pairs = np.sort(pairs[keep], axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def connected_components(net: PoreNetwork, active=None) -> list[np.ndarray]:
    """Maximal connected sets of active nodes, linked through active-active arcs.

    Components are returned as sorted id arrays, ordered by their smallest id.
    """
    n = net.n_nodes
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if active.shape != (n,):
        raise ValidationError(f"active mask has length {active.shape}, expected {n}")
    e = net.edges[net.arc_mask(active)]
    graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = _cc(graph, directed=False)
    ids = np.flatnonzero(active)
    if not len(ids):
        return []
    lab = labels[ids]
    order = np.argsort(lab, kind="stable")
    splits = np.flatnonzero(np.diff(lab[order])) + 1
    comps = np.split(ids[order], splits)
    comps.sort(key=lambda c: c[0])
    return comps


# -- text format -----------------------------------------------------------


def _num(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", lineno) from None


def _int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"not an integer id: {tok!r}", lineno) from None


def parse_network(text: str, contact_factor: float = DEFAULT_CONTACT_FACTOR,
                  derive: bool | None = None) -> PoreNetwork:
    """Parse the canonical text format.

    ``derive=None`` derives arcs from tangency only when the text has no arc
    records; ``True`` always derives (ignoring file arcs), ``False`` never.
    """
    ids, centers, radii, vols = [], [], [], []
    arc_rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        kind = tok[0]
        if kind == "B":
            if len(tok) not in (6, 7):
                raise ParseError(f"ball record needs 5 or 6 fields, got {len(tok) - 1}", lineno)
            ids.append(_int(tok[1], lineno))
            centers.append([_num(t, lineno) for t in tok[2:5]])
            radii.append(_num(tok[5], lineno))
            vols.append(_num(tok[6], lineno) if len(tok) == 7 else math.nan)
        elif kind == "A":
            if len(tok) not in (3, 4, 5):
                raise ParseError(f"arc record needs 2 to 4 fields, got {len(tok) - 1}", lineno)
            i, j = _int(tok[1], lineno), _int(tok[2], lineno)
            d = _num(tok[3], lineno) if len(tok) >= 4 else math.nan
            s = _num(tok[4], lineno) if len(tok) == 5 else math.nan
            arc_rows.append((lineno, i, j, d, s))
        else:
            raise ParseError(f"unknown record type {kind!r}", lineno)

    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate ball ids")
    remap = {ext: k for k, ext in enumerate(ids)}
    centers = np.array(centers, dtype=float).reshape(-1, 3)
    radii = np.array(radii, dtype=float)
    vols = np.array(vols, dtype=float)
    if np.any(radii <= 0):
        k = int(np.flatnonzero(radii <= 0)[0])
        raise ValidationError(f"ball {ids[k]} has non-positive radius")
    missing_v = np.isnan(vols)
    vols[missing_v] = ball_volume(radii[missing_v])

    if derive is None:
        derive = not arc_rows
    if derive:
        edges = derive_arcs(centers, radii)
        return PoreNetwork(centers, radii, edges, vols, external_ids=ids,
                           contact_factor=contact_factor)

    edges = np.zeros((len(arc_rows), 2), dtype=np.int64)
    dist = np.empty(len(arc_rows))
    area = np.empty(len(arc_rows))
    for k, (lineno, i, j, d, s) in enumerate(arc_rows):
        if i not in remap or j not in remap:
            raise ValidationError(f"line {lineno}: arc ({i}, {j}) references an unknown ball")
        edges[k] = remap[i], remap[j]
        dist[k], area[k] = d, s
    a, b = np.sort(edges, axis=1).T
    nan_d = np.isnan(dist)
    dist[nan_d] = np.linalg.norm(centers[b[nan_d]] - centers[a[nan_d]], axis=1)
    nan_s = np.isnan(area)
    if nan_s.any():
        area[nan_s] = compute_contact_area(radii[a[nan_s]], radii[b[nan_s]], contact_factor)
    return PoreNetwork(centers, radii, edges, vols, dist, area, ids)


def load_network(path, format: NetworkFormat | str = NetworkFormat.TEXT,
                 contact_factor: float = DEFAULT_CONTACT_FACTOR,
                 derive: bool | None = None) -> PoreNetwork:
    if NetworkFormat(format) is not NetworkFormat.TEXT:
        raise ValidationError(f"unsupported network format {format}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    net = parse_network(text, contact_factor=contact_factor, derive=derive)
    logger.info("loaded %s: %d balls, %d arcs", os.fspath(path), net.n_nodes, net.n_arcs)
    return net


def format_network(net: PoreNetwork) -> str:
    # repr() gives the shortest string that parses back to the same double
    out = [f"# ball network: {net.n_nodes} balls, {net.n_arcs} arcs"]
    ext = net.external_ids
    for k in range(net.n_nodes):
        x, y, z = net.centers[k]
        out.append(f"B {ext[k]} {float(x)!r} {float(y)!r} {float(z)!r} "
                   f"{float(net.radii[k])!r} {float(net.volumes[k])!r}")
    for k, (i, j) in enumerate(net.edges):
        out.append(f"A {ext[i]} {ext[j]} {float(net.distances[k])!r} "
                   f"{float(net.contact_areas[k])!r}")
    return "\n".join(out) + "\n"


def save_network(net: PoreNetwork, path, format: NetworkFormat | str = NetworkFormat.TEXT):
    if NetworkFormat(format) is not NetworkFormat.TEXT:
        raise ValidationError(f"unsupported network format {format}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_network(net))


def subnetwork_summary(net: PoreNetwork, active: Sequence[bool] | None = None) -> dict:
    comps = connected_components(net, active)
    sizes = np.array([len(c) for c in comps], dtype=int)
    return {
        "balls": int(net.n_nodes if active is None else np.count_nonzero(active)),
        "arcs": int(np.count_nonzero(net.arc_mask(active))),
        "components": len(comps),
        "largest_component": int(sizes.max()) if len(sizes) else 0,
        "isolated": int(np.count_nonzero(sizes == 1)),
    }
