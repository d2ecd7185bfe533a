"""Seeded scenario builders used by tests, the CLI ``gen`` command and sweeps."""

from __future__ import annotations

import numpy as np

from .network import (
    Edge,
    NetworkGraph,
    ResolutionCatalog,
    Scenario,
    SimParams,
    UserProfile,
    default_catalog,
)


def chain(catalog: ResolutionCatalog | None = None, capacity: float = 100.0,
          levels: tuple[int, ...] | None = None, weight: float = 1.0,
          sim: SimParams | None = None) -> Scenario:
    """Three-node S -> F -> U line."""
    catalog = catalog or default_catalog()
    levels = levels or tuple(range(1, catalog.L + 1))
    g = NetworkGraph({"S": "server", "F": "forwarder", "U": "user"},
                     [Edge("S", "F", capacity), Edge("F", "U", capacity)])
    return Scenario(g, catalog, {"U": UserProfile("U", levels, weight)}, sim or SimParams())


def _min_demand(catalog: ResolutionCatalog, profiles: list[UserProfile]) -> float:
    lowest = {min(p.supported_levels) for p in profiles}
    return float(sum(catalog.bandwidths[lv - 1] for lv in lowest))


def random_tree(seed: int, n_forwarders: int, n_users: int,
                catalog: ResolutionCatalog | None = None,
                capacity_range: tuple[float, float] | None = None,
                weight_range: tuple[float, float] = (0.5, 2.0),
                sim: SimParams | None = None) -> Scenario:
    """Random single-server tree.

    Forwarders hang off the server or an earlier forwarder; users hang off a
    random forwarder. Supported level sets are random contiguous ranges.
    Capacities are drawn uniformly from ``capacity_range`` (default: between
    the lowest bandwidth and the whole ladder) and then raised until every
    user can at least receive its lowest supported level, so instances are
    always feasible.
    """
    rng = np.random.default_rng(seed)
    catalog = catalog or default_catalog()
    L = catalog.L
    bw = catalog.bandwidths
    lo, hi = capacity_range or (float(bw[0]), float(bw.sum()))

    roles = {"S": "server"}
    parent: dict[str, str] = {}
    fwds = [f"F{i + 1}" for i in range(n_forwarders)]
    for i, f in enumerate(fwds):
        roles[f] = "forwarder"
        parent[f] = "S" if i == 0 else str(rng.choice(["S"] + fwds[:i]))
    profiles: dict[str, UserProfile] = {}
    for j in range(n_users):
        u = f"U{j + 1}"
        roles[u] = "user"
        parent[u] = str(rng.choice(fwds)) if fwds else "S"
        a = int(rng.integers(1, L + 1))
        b = int(rng.integers(a, L + 1))
        w = float(np.round(rng.uniform(*weight_range), 3))
        profiles[u] = UserProfile(u, tuple(range(a, b + 1)), w)

    below: dict[str, list[str]] = {n: [] for n in roles}
    for u in profiles:
        n = u
        while n in parent:
            n = parent[n]
            below[n].append(u)
    edges = []
    for child, par in parent.items():
        cap = float(np.round(rng.uniform(lo, hi), 2))
        users_below = [profiles[child]] if child in profiles else [profiles[u] for u in below[child]]
        if users_below:
            cap = max(cap, _min_demand(catalog, users_below))
        edges.append(Edge(par, child, cap))
    return Scenario(NetworkGraph(roles, edges), catalog, profiles, sim or SimParams())


def reference_tree(n_users: int, aggregation: int = 2, edge_per_aggregation: int = 4,
                   backbone: float = 400.0, access: float = 100.0, delay: float = 0.005,
                   catalog: ResolutionCatalog | None = None, seed: int = 0,
                   sim: SimParams | None = None) -> Scenario:
    """Fixed-shape three-tier tree with users attached round-robin to leaf forwarders.

    Users get device classes cycling through a seeded shuffle of capped ladders
    (phone, laptop, TV, ...) so that requests overlap but are not identical.
    """
    catalog = catalog or default_catalog()
    L = catalog.L
    rng = np.random.default_rng(seed)
    roles = {"S": "server"}
    edges: list[Edge] = []
    leaves: list[str] = []
    for a in range(aggregation):
        agg = f"A{a + 1}"
        roles[agg] = "forwarder"
        edges.append(Edge("S", agg, backbone, delay))
        for e in range(edge_per_aggregation):
            leaf = f"E{a * edge_per_aggregation + e + 1}"
            roles[leaf] = "forwarder"
            edges.append(Edge(agg, leaf, backbone, delay))
            leaves.append(leaf)
    caps = [max(1, L - 3), max(1, L - 2), max(1, L - 1), L]
    profiles = {}
    for j in range(n_users):
        u = f"U{j + 1}"
        roles[u] = "user"
        edges.append(Edge(leaves[j % len(leaves)], u, access, delay))
        top = caps[int(rng.integers(len(caps)))]
        w = float(np.round(rng.uniform(0.5, 2.0), 3))
        profiles[u] = UserProfile(u, tuple(range(1, top + 1)), w)
    return Scenario(NetworkGraph(roles, edges), catalog, profiles, sim or SimParams())
