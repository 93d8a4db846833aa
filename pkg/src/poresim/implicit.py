"""Implicit Euler diffusion on connected water components.

For one component with volumes ``v`` and arc weights
``theta_ij = d_c * s_ij / d_ij * dt`` the new concentrations ``u`` solve
``A u = m`` where ``A = diag(v + sum_j theta_ij) - theta`` and ``m`` holds the
current masses. The new masses are ``v * u``. ``A`` is a symmetric M-matrix,
so the step is unconditionally stable and keeps masses nonnegative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .biology import DOM, SECONDS_PER_DAY, BioParams, transform_delta
from .errors import BacktrackRequired, DomainError, StepCollapse, ValidationError
from .explicit import police
from .linsolve import DEFAULT_TOL, SparseSymmetricMatrix, pcg_solve
from .network import PoreNetwork, connected_components

logger = logging.getLogger(__name__)

# relative mass drift above which a solve is rescaled back to the input total
DRIFT_RESCALE = 1e-14


@dataclass(frozen=True)
class ImplicitSystem:
    matrix: SparseSymmetricMatrix
    volumes: np.ndarray
    node_order: np.ndarray  # local index -> global node id
    theta: np.ndarray  # per local arc
    edges: np.ndarray  # (k, 2) local endpoints

    @property
    def size(self) -> int:
        return len(self.node_order)


def assemble(net: PoreNetwork, water_mask, component, d_c: float, dt: float) -> ImplicitSystem:
    """System matrix of one connected water component for a step of ``dt`` days."""
    if dt < 0:
        raise DomainError("dt must be >= 0")
    comp = np.unique(np.asarray(component, dtype=np.int64))
    inside = np.zeros(net.n_nodes, dtype=bool)
    inside[comp] = True
    if water_mask is not None:
        if not np.all(np.asarray(water_mask, dtype=bool)[comp]):
            raise ValidationError("component contains air-filled balls")
    keep = inside[net.edges[:, 0]] & inside[net.edges[:, 1]]
    e = np.searchsorted(comp, net.edges[keep])
    theta = d_c * net.contact_areas[keep] / net.distances[keep] * dt
    p = len(comp)
    v = net.volumes[comp]
    diag = v + np.bincount(e[:, 0], theta, minlength=p) + np.bincount(e[:, 1], theta, minlength=p)
    rows = np.concatenate([np.arange(p), e[:, 0], e[:, 1]])
    cols = np.concatenate([np.arange(p), e[:, 1], e[:, 0]])
    vals = np.concatenate([diag, -theta, -theta])
    a = SparseSymmetricMatrix.from_coo(p, rows, cols, vals)
    # off-diagonals cancel the theta sums: A @ 1 == v, the source of conservation
    drift = np.abs(a.row_sums() - v)
    if np.any(drift > 1e-12 * diag):
        raise ValidationError("assembled matrix violates the row-sum identity")
    return ImplicitSystem(a, v, comp, theta, e)


@dataclass
class StepStats:
    iterations: int = 0
    residual: float = 0.0
    drift: float = 0.0


def diffusion_step_implicit(dom, system: ImplicitSystem, tol: float = DEFAULT_TOL,
                            max_iter: int | None = None, stats: StepStats | None = None):
    """One implicit step on a component; ``dom`` is ordered like ``system.node_order``."""
    m = np.asarray(dom, dtype=float)
    if m.shape != (system.size,):
        raise ValidationError("masses do not match the component size")
    total = math.fsum(m)
    if system.size == 1 or not m.any():
        return m.copy()
    v = system.volumes
    res = pcg_solve(system.matrix, m, tol=tol, max_iter=max_iter, x0=m / v)
    new = v * res.x
    np.maximum(new, 0.0, out=new)
    new_total = math.fsum(new)
    drift = abs(new_total - total) / abs(total) if total else 0.0
    if drift > DRIFT_RESCALE and new_total > 0:
        new *= total / new_total
    if stats is not None:
        stats.iterations = max(stats.iterations, res.iterations)
        stats.residual = max(stats.residual, res.residual)
        stats.drift = max(stats.drift, drift)
    if drift > 1e-8:
        logger.warning("implicit step mass drift %.3e before rescale", drift)
    return new


class ImplicitDiffuser:
    """Per-component systems, assembled once per time step value and reused."""

    def __init__(self, net: PoreNetwork, water_mask, d_c: float, tol: float = DEFAULT_TOL,
                 max_iter: int | None = None):
        self.net = net
        self.water_mask = water_mask
        self.d_c = d_c
        self.tol = tol
        self.max_iter = max_iter
        comps = connected_components(net, water_mask)
        self.components = [c for c in comps if len(c) > 1]
        self._systems: dict[float, list[ImplicitSystem]] = {}
        self.stats = StepStats()
        self.solves = 0

    def systems(self, dt: float) -> list[ImplicitSystem]:
        key = float(dt)
        if key not in self._systems:
            if len(self._systems) > 8:
                self._systems.clear()
            self._systems[key] = [assemble(self.net, None, c, self.d_c, dt)
                                  for c in self.components]
        return self._systems[key]

    def step(self, dom, dt: float) -> np.ndarray:
        out = np.array(dom, dtype=float)
        for s in self.systems(dt):
            out[s.node_order] = diffusion_step_implicit(out[s.node_order], s, self.tol,
                                                        self.max_iter, self.stats)
            self.solves += 1
        return out


@dataclass(frozen=True)
class ImplicitConfig:
    """Time steps in seconds. Biology negativity is policed as in the explicit scheme."""

    dt_diffusion: float = 10.0
    dt_transform: float = 10.0
    cg_tol: float = DEFAULT_TOL
    cg_max_iter: int | None = None
    p_neg: float = 0.01
    max_backtracks: int = 30

    def __post_init__(self):
        if self.dt_diffusion <= 0 or self.dt_transform <= 0:
            raise DomainError("time steps must be positive")
        if self.cg_tol <= 0:
            raise DomainError("cg_tol must be positive")
        n = round(self.dt_transform / self.dt_diffusion)
        if n < 1 or abs(self.dt_transform - n * self.dt_diffusion) > 1e-9 * self.dt_transform:
            raise DomainError("dt_transform must be an integer multiple of dt_diffusion")


class ImplicitScheme:
    """Implicit diffusion sub-steps, then one explicit biology step, per macro step."""

    def __init__(self, net: PoreNetwork, water_mask, params: BioParams, cfg: ImplicitConfig):
        self.net = net
        self.water_mask = None if water_mask is None else np.asarray(water_mask, dtype=bool)
        self.params = params
        self.cfg = cfg
        self.diffuser = ImplicitDiffuser(net, self.water_mask, params.d_c, cfg.cg_tol,
                                         cfg.cg_max_iter)
        self.dt = cfg.dt_transform / SECONDS_PER_DAY
        self.dt_diff = cfg.dt_diffusion / SECONDS_PER_DAY
        self._idx = slice(None) if self.water_mask is None else np.flatnonzero(self.water_mask)
        self.backtracks = 0
        self.steps = 0

    def _macro(self, x, h):
        n_sub = max(1, math.ceil(h / self.dt_diff - 1e-9))
        dom = x[:, DOM]
        for _ in range(n_sub):
            dom = self.diffuser.step(dom, h / n_sub)
        y = x.copy()
        y[:, DOM] = dom
        idx = self._idx
        y[idx] += transform_delta(y[idx], self.net.volumes[idx], self.params, h)
        return police(y, self.net.volumes, self.cfg.p_neg, "transformation step")

    def advance(self, states, duration: float, on_step=None):
        x = np.asarray(states, dtype=float)
        t = 0.0
        while duration - t > 1e-12 * max(duration, 1e-300):
            h = min(self.dt, duration - t)
            try:
                y = self._macro(x, h)
            except BacktrackRequired as e:
                self.backtracks += 1
                if self.backtracks > self.cfg.max_backtracks:
                    raise StepCollapse(f"gave up after {self.cfg.max_backtracks} halvings: {e}") from e
                self.dt /= 2
                self.dt_diff = min(self.dt_diff, self.dt)
                logger.info("backtrack %d: transformation dt=%.3e d (%s)",
                            self.backtracks, self.dt, e)
                continue
            if on_step is not None:
                on_step(x, y, h)
            x = y
            t += h
            self.steps += 1
        return x


def run_pure_diffusion(dom, net: PoreNetwork, water_mask, d_c: float, dt: float, t_end: float,
                       tol: float = DEFAULT_TOL, max_iter: int | None = None,
                       diffuser: ImplicitDiffuser | None = None):
    """Implicit diffusion only, ``t_end / dt`` steps (days); returns final masses."""
    diffuser = diffuser or ImplicitDiffuser(net, water_mask, d_c, tol, max_iter)
    n = max(1, math.ceil(t_end / dt - 1e-9))
    m = np.asarray(dom, dtype=float)
    for _ in range(n):
        m = diffuser.step(m, t_end / n)
    return m
