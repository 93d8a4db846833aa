"""Invariant checks run against a network file by ``poresim validate``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .biology import SECONDS_PER_DAY
from .explicit import GraphDiffusion
from .implicit import ImplicitDiffuser, assemble
from .network import PoreNetwork, compute_contact_area, connected_components


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def check_network(net: PoreNetwork, d_c: float = 40000.0, dt_s: float = 10.0,
                  seed: int = 0) -> list[Check]:
    out = []
    rng = np.random.default_rng(seed)
    e = net.edges

    sym = np.array_equal(compute_contact_area(net.radii[e[:, 0]], net.radii[e[:, 1]], 1.0),
                         compute_contact_area(net.radii[e[:, 1]], net.radii[e[:, 0]], 1.0)) \
        if len(e) else True
    out.append(Check("contact rule symmetric in endpoints", bool(sym)))

    deg_ok = True
    for i in rng.choice(net.n_nodes, size=min(net.n_nodes, 50), replace=False):
        for j in net.neighbors(i):
            deg_ok &= bool(i in net.neighbors(j))
    out.append(Check("adjacency index bidirectional", deg_ok))

    comps = connected_components(net)
    covered = np.sort(np.concatenate(comps)) if comps else np.zeros(0, int)
    out.append(Check("components partition the nodes",
                     bool(np.array_equal(covered, np.arange(net.n_nodes))),
                     f"{len(comps)} components, largest {max(map(len, comps), default=0)}"))

    dt = dt_s / SECONDS_PER_DAY
    big = max(comps, key=len) if comps else np.zeros(0, int)
    if len(big) > 1:
        sys_ = assemble(net, None, big, d_c, dt)
        a = sys_.matrix
        diag = a.diagonal()
        off_sum = np.add.reduceat(np.abs(a.data), a.indptr[:-1]) - diag
        out.append(Check("system matrix diagonally dominant",
                         bool(np.all(diag > off_sum)), f"n={a.n}, nnz={a.nnz}"))
        rs = np.max(np.abs(a.row_sums() - sys_.volumes) / diag)
        out.append(Check("row sums equal ball volumes", bool(rs <= 1e-12), f"max rel {rs:.1e}"))

    m = rng.random(net.n_nodes) * net.volumes
    total = math.fsum(m)
    explicit = m + GraphDiffusion(net, None, d_c).delta(m, dt)
    drift = abs(math.fsum(explicit) - total) / total
    out.append(Check("explicit step conserves mass", drift <= 1e-12, f"drift {drift:.1e}"))

    diffuser = ImplicitDiffuser(net, None, d_c)
    implicit = diffuser.step(m, dt)
    drift = abs(math.fsum(implicit) - total) / total
    out.append(Check("implicit step conserves mass", drift <= 1e-10, f"drift {drift:.1e}"))
    out.append(Check("implicit step nonnegative", bool(implicit.min() >= 0)))
    out.append(Check("CG converged in <= 200 iterations", diffuser.stats.iterations <= 200,
                     f"{diffuser.stats.iterations} iterations"))
    return out
