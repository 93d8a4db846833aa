"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

from poresim.biology import CO2, DOM, FOM, MB, SOM
from poresim.network import PoreNetwork


def union_find_components(n, edges, active=None):
    """Brute-force union-find; returns sorted node lists ordered by smallest id."""
    active = np.ones(n, bool) if active is None else np.asarray(active, bool)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        if active[i] and active[j]:
            parent[find(i)] = find(j)
    groups = {}
    for k in range(n):
        if active[k]:
            groups.setdefault(find(k), []).append(k)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def dense_implicit_matrix(net, nodes, d_c, dt):
    """Dense ``diag(v) + dt * Laplacian`` over ``nodes``, built arc by arc."""
    nodes = list(nodes)
    pos = {g: k for k, g in enumerate(nodes)}
    a = np.diag(net.volumes[nodes].astype(float))
    for (i, j), s, d in zip(net.edges, net.contact_areas, net.distances):
        if i in pos and j in pos:
            th = d_c * s / d * dt
            p, q = pos[i], pos[j]
            a[p, p] += th
            a[q, q] += th
            a[p, q] -= th
            a[q, p] -= th
    return a


def rate_generator(p):
    """``K`` with ``dx/dt = K x`` for the pools once DOM uptake is switched off."""
    K = np.zeros((5, 5))
    K[MB, MB] = -(p.rho + p.mu)
    K[DOM, MB] = p.rho_m * p.mu
    K[SOM, MB] = (1.0 - p.rho_m) * p.mu
    K[CO2, MB] = p.rho
    K[DOM, SOM] = p.v_som
    K[SOM, SOM] = -p.v_som
    K[DOM, FOM] = p.v_fom
    K[FOM, FOM] = -p.v_fom
    return K


def two_ball_net(volumes=(1.0, 1.0), area=1.0, distance=1.0):
    return PoreNetwork(
        centers=[[0, 0, 0], [0, 0, distance]], radii=[0.5, 0.5], edges=[[0, 1]],
        volumes=list(volumes), distances=[distance], contact_areas=[area])


def path_net(n, volumes=None, seed=0):
    rng = np.random.default_rng(seed)
    volumes = rng.uniform(0.5, 2.0, n) if volumes is None else volumes
    return PoreNetwork(
        centers=[[0, 0, 2.0 * k] for k in range(n)], radii=np.ones(n),
        edges=[[k, k + 1] for k in range(n - 1)], volumes=volumes,
        distances=rng.uniform(1.0, 3.0, n - 1), contact_areas=rng.uniform(0.2, 2.0, n - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
