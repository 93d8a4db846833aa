"""Explicit Euler transformation-diffusion on the ball graph.

Diffusion moves DOM along water-water arcs with a Fick flux per arc. Biology
is the node-local operator of :mod:`poresim.biology`. After each update the
"negativity" (summed magnitude of negative masses) is compared with
``p_neg`` times the species total: small negativity is repaired by
reallocating mass, larger negativity rejects the step and the caller halves
the time step.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .biology import DOM, SECONDS_PER_DAY, SPECIES, BioParams, transform_delta
from .errors import BacktrackRequired, DomainError, RepairOverdraw, StepCollapse
from .network import PoreNetwork

logger = logging.getLogger(__name__)


class Coupling(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


def _is_multiple(big: float, small: float) -> bool:
    n = round(big / small)
    return n >= 1 and abs(big - n * small) <= 1e-9 * big


@dataclass(frozen=True)
class ExplicitConfig:
    """Time steps are in seconds; the engine converts them to days.

    Synchronous coupling advances both operators with ``dt_diffusion``;
    ``dt_transform`` only matters for asynchronous coupling.
    """

    dt_diffusion: float = 0.3
    dt_transform: float = 9.0  # 30 diffusion sub-steps
    p_neg: float = 0.01
    max_backtracks: int = 30
    coupling: Coupling = Coupling.ASYNC
    diffusion_first: bool = True
    # accepted macro steps before a halved step may double again; None keeps it halved
    recover_after: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "coupling", Coupling(self.coupling))
        if self.dt_diffusion <= 0 or self.dt_transform <= 0:
            raise DomainError("time steps must be positive")
        if not 0.0 < self.p_neg < 1.0:
            raise DomainError("p_neg must lie in (0, 1)")
        if not 0.01 <= self.p_neg <= 0.05:
            warnings.warn(f"p_neg={self.p_neg} is outside the usual [0.01, 0.05] range",
                          stacklevel=3)
        if self.max_backtracks < 0:
            raise DomainError("max_backtracks must be >= 0")
        if self.coupling is Coupling.ASYNC and not _is_multiple(self.dt_transform,
                                                                self.dt_diffusion):
            raise DomainError("dt_transform must be an integer multiple of dt_diffusion")


def fick_flow(c_i, c_j, s_ij, d_ij, d_c, dt):
    """Mass gained by node ``i`` from node ``j`` over ``dt``.

    Negative when ``c_i > c_j``; swapping the endpoints flips the sign exactly.
    """
    return -d_c * s_ij * (c_i - c_j) / d_ij * dt


class GraphDiffusion:
    """Explicit Fick operator restricted to arcs between water-filled balls."""

    def __init__(self, net: PoreNetwork, water_mask, d_c: float):
        self.n = net.n_nodes
        keep = net.arc_mask(water_mask)
        self.i = net.edges[keep, 0]
        self.j = net.edges[keep, 1]
        self.conductance = d_c * net.contact_areas[keep] / net.distances[keep]
        self.inv_volume = 1.0 / net.volumes

    def delta(self, dom: np.ndarray, dt: float) -> np.ndarray:
        c = dom * self.inv_volume
        # flow into i along each arc, applied as +F at i and -F at j
        flow = self.conductance * dt * (c[self.j] - c[self.i])
        return (np.bincount(self.i, flow, minlength=self.n)
                - np.bincount(self.j, flow, minlength=self.n))

    def stability_limit(self, volumes) -> float:
        """Largest dt (days) for which one explicit step keeps masses nonnegative."""
        total = np.bincount(self.i, self.conductance, minlength=self.n) + \
            np.bincount(self.j, self.conductance, minlength=self.n)
        with np.errstate(divide="ignore"):
            lim = np.asarray(volumes) / total
        return float(lim.min()) if len(lim) else math.inf


def diffusion_step_explicit(dom, net: PoreNetwork, water_mask, d_c: float, dt: float):
    dom = np.asarray(dom, dtype=float)
    return dom + GraphDiffusion(net, water_mask, d_c).delta(dom, dt)


def negativity(masses):
    """Per-species negativity ``H`` and total ``M`` of an ``(n, k)`` or ``(n,)`` array."""
    y = np.asarray(masses, dtype=float)
    return -np.minimum(y, 0.0).sum(axis=0), y.sum(axis=0)


def _reallocate_column(y, volumes, h):
    pos = y > 0
    if not pos.any():
        raise RepairOverdraw("no positive donor to absorb the negative mass")
    c = y[pos] / volumes[pos]
    debit = c / c.sum() * h
    left = y[pos] - debit
    if np.any(left < 0):
        raise RepairOverdraw("proportional debit exceeds a donor's mass")
    out = np.zeros_like(y)
    out[pos] = left
    return out


def reallocate_negatives(masses, volumes, H=None, M=None):
    """Zero negative masses, debiting positive nodes in proportion to concentration.

    Per-species totals are unchanged. ``M`` is accepted for symmetry with the
    negativity check and is not needed by the repair itself.
    """
    y = np.array(masses, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if H is None:
        H, _ = negativity(y)
    if y.ndim == 1:
        return _reallocate_column(y, volumes, float(H)) if H > 0 else y
    for j in np.flatnonzero(np.asarray(H) > 0):
        y[:, j] = _reallocate_column(y[:, j], volumes, float(H[j]))
    return y


def police(masses, volumes, p_neg: float, stage: str = ""):
    """Accept, repair or reject a freshly computed state.

    Raises :class:`BacktrackRequired` when, for some species with negative
    entries, ``H >= p_neg * M``; otherwise returns the repaired masses.
    """
    masses = np.asarray(masses)
    if masses.size == 0 or masses.min() >= 0:
        return masses
    H, M = negativity(masses)
    H = np.atleast_1d(H)
    M = np.atleast_1d(M)
    bad = (H > 0) & (H >= p_neg * M)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        name = SPECIES[j] if H.size == len(SPECIES) else "dom"
        raise BacktrackRequired(
            f"{stage} negativity {H[j]:.3e} >= {p_neg} x total {M[j]:.3e} for {name}",
            species=name)
    if not (H > 0).any():
        return masses
    return reallocate_negatives(masses, volumes, H if np.ndim(masses) > 1 else H[0], M)


def step_synchronous(states, net: PoreNetwork, water_mask, params: BioParams,
                     cfg: ExplicitConfig, dt: float, _diff: GraphDiffusion | None = None):
    """One step where biology and diffusion both read the same input state.

    ``dt`` is in days.
    """
    x = np.asarray(states, dtype=float)
    diff = _diff or GraphDiffusion(net, water_mask, params.d_c)
    idx = slice(None) if water_mask is None else np.flatnonzero(water_mask)
    d = np.zeros_like(x)
    d[idx] = transform_delta(x[idx], net.volumes[idx], params, dt)
    d[:, DOM] += diff.delta(x[:, DOM], dt)
    return police(x + d, net.volumes, cfg.p_neg, "synchronous step")


def step_asynchronous(states, net: PoreNetwork, water_mask, params: BioParams,
                      cfg: ExplicitConfig, _diff: GraphDiffusion | None = None):
    """Diffusion sub-steps over one transformation step, then the biology step.

    The order flips when ``cfg.diffusion_first`` is false.
    """
    dt_t = cfg.dt_transform / SECONDS_PER_DAY
    n_sub = round(cfg.dt_transform / cfg.dt_diffusion)
    return _async_macro(np.asarray(states, dtype=float), net, water_mask, params, cfg.p_neg,
                        dt_t, n_sub, cfg.diffusion_first,
                        _diff or GraphDiffusion(net, water_mask, params.d_c))


class _Stage(BacktrackRequired):
    pass


def _async_macro(x, net, water_mask, params, p_neg, dt_t, n_sub, diffusion_first, diff):
    vol = net.volumes

    def diffuse(y):
        dom = y[:, DOM].copy()
        h = dt_t / n_sub
        for _ in range(n_sub):
            try:
                dom = police(dom + diff.delta(dom, h), vol, p_neg, "diffusion sub-step")
            except BacktrackRequired as e:
                raise _Stage(str(e), species="dom") from e
        y = y.copy()
        y[:, DOM] = dom
        return y

    def transform(y):
        idx = slice(None) if water_mask is None else np.flatnonzero(water_mask)
        y = y.copy()
        y[idx] += transform_delta(y[idx], vol[idx], params, dt_t)
        return police(y, vol, p_neg, "transformation step")

    if diffusion_first:
        return transform(diffuse(x))
    return diffuse(transform(x))


class ExplicitScheme:
    """Time stepper with backtracking for both coupling modes.

    After a rejected step the step that failed is retried with half the time
    step, and the simulation continues with the halved value.
    """

    def __init__(self, net: PoreNetwork, water_mask, params: BioParams, cfg: ExplicitConfig):
        self.net = net
        self.water_mask = None if water_mask is None else np.asarray(water_mask, dtype=bool)
        self.params = params
        self.cfg = cfg
        self.diff = GraphDiffusion(net, self.water_mask, params.d_c)
        if cfg.coupling is Coupling.SYNC:
            self.dt = cfg.dt_diffusion / SECONDS_PER_DAY
            self.n_sub = 1
        else:
            self.dt = cfg.dt_transform / SECONDS_PER_DAY
            self.n_sub = round(cfg.dt_transform / cfg.dt_diffusion)
        self._dt0, self._n_sub0 = self.dt, self.n_sub
        self.backtracks = 0
        self.steps = 0
        self._quiet = 0

    @property
    def dt_diffusion_days(self) -> float:
        return self.dt / self.n_sub

    def _macro(self, x, h):
        if self.cfg.coupling is Coupling.SYNC:
            return step_synchronous(x, self.net, self.water_mask, self.params, self.cfg, h,
                                    _diff=self.diff)
        n_sub = self.n_sub if h >= self.dt * (1 - 1e-12) else \
            max(1, math.ceil(h / self.dt_diffusion_days - 1e-9))
        return _async_macro(x, self.net, self.water_mask, self.params, self.cfg.p_neg, h,
                            n_sub, self.cfg.diffusion_first, self.diff)

    def _halve(self, err: BacktrackRequired):
        self.backtracks += 1
        self._quiet = 0
        if self.backtracks > self.cfg.max_backtracks:
            raise StepCollapse(
                f"gave up after {self.cfg.max_backtracks} time-step halvings: {err}") from err
        if self.cfg.coupling is Coupling.SYNC:
            self.dt /= 2
        elif isinstance(err, _Stage):
            self.n_sub *= 2
        else:
            self.dt /= 2
            if self.n_sub % 2 == 0:
                self.n_sub //= 2
        logger.info("backtrack %d: dt=%.3e d, diffusion dt=%.3e d (%s)", self.backtracks,
                    self.dt, self.dt_diffusion_days, err)

    def _maybe_recover(self):
        k = self.cfg.recover_after
        if k is None or (self.dt >= self._dt0 and self.n_sub <= self._n_sub0):
            return
        self._quiet += 1
        if self._quiet >= k:
            self._quiet = 0
            if self.dt_diffusion_days * 2 <= self._dt0 / self._n_sub0 * (1 + 1e-12) \
                    and self.n_sub > 1 and self.n_sub % 2 == 0:
                self.n_sub //= 2
            elif self.dt * 2 <= self._dt0 * (1 + 1e-12):
                self.dt *= 2
                self.n_sub *= 2

    def advance(self, states, duration: float, on_step=None):
        """Advance ``duration`` days; ``on_step(before, after, h)`` sees each committed step."""
        x = np.asarray(states, dtype=float)
        t = 0.0
        while duration - t > 1e-12 * max(duration, 1e-300):
            h = min(self.dt, duration - t)
            try:
                y = self._macro(x, h)
            except BacktrackRequired as e:
                self._halve(e)
                continue
            if on_step is not None:
                on_step(x, y, h)
            x = y
            t += h
            self.steps += 1
            self._maybe_recover()
        return x


@dataclass
class Trajectory:
    times: np.ndarray  # days
    totals: np.ndarray  # (k, 5) species totals
    state: np.ndarray
    backtracks: int
    steps: int


def run_with_backtracking(states, net: PoreNetwork, water_mask, params: BioParams,
                          cfg: ExplicitConfig, t_end: float, sample_every: float | None = None,
                          on_step=None) -> Trajectory:
    """Explicit simulation to ``t_end`` days, halving the step on rejection."""
    if t_end <= 0:
        raise DomainError("t_end must be positive")
    scheme = ExplicitScheme(net, water_mask, params, cfg)
    x = np.asarray(states, dtype=float)
    sample_every = sample_every or t_end
    n_samples = max(1, math.ceil(t_end / sample_every - 1e-9))
    times, totals = [0.0], [x.sum(axis=0)]
    for k in range(1, n_samples + 1):
        t_next = min(k * sample_every, t_end)
        x = scheme.advance(x, t_next - times[-1], on_step)
        times.append(t_next)
        totals.append(x.sum(axis=0))
    return Trajectory(np.array(times), np.array(totals), x, scheme.backtracks, scheme.steps)
