"""Decision variables, objective and constraint residuals of the QoE program.

Selection ``x`` is a dense ``(n_nodes, L)`` array indexed by node index;
transmission ``y`` is ``(n_edges, L)`` indexed by the graph's edge order.
Both may be fractional (relaxation) or binary (integer program).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .network import NodeRole, Scenario

TOL = 1e-9

FAMILIES = ("C-SRV", "C-CAP-USR", "C-ONE", "C-FWD-OUT", "C-FWD-IN", "C-BW", "C-INT")


@dataclass
class ConstraintReport:
    """Per-family list of ``(coordinates, residual)`` for violated constraints."""

    families: dict[str, list[tuple[tuple, float]]] = field(
        default_factory=lambda: {f: [] for f in FAMILIES})

    @property
    def ok(self) -> bool:
        return not any(self.families.values())

    def count(self, family: str | None = None) -> int:
        if family is not None:
            return len(self.families[family])
        return sum(len(v) for v in self.families.values())

    def residual(self, family: str, coords: tuple) -> float:
        for c, r in self.families[family]:
            if c == coords:
                return r
        return 0.0

    def to_dict(self) -> dict:
        return {f: [{"at": list(c), "residual": r} for c, r in v] for f, v in self.families.items()}


def empty_selection(scenario: Scenario) -> np.ndarray:
    return np.zeros((scenario.graph.n_nodes, scenario.catalog.L))


def empty_transmission(scenario: Scenario) -> np.ndarray:
    return np.zeros((scenario.graph.n_edges, scenario.catalog.L))


def selection_from_levels(scenario: Scenario, choice: Mapping[str, int]) -> np.ndarray:
    """One-hot user rows from ``{user: level}``; server rows set to all ones."""
    g = scenario.graph
    x = empty_selection(scenario)
    x[g.role_code == 0] = 1.0
    for u, lv in choice.items():
        x[g.index[u], lv - 1] = 1.0
    return x


def _check_shapes(scenario: Scenario, x: np.ndarray | None, y: np.ndarray | None) -> None:
    g, L = scenario.graph, scenario.catalog.L
    if x is not None and np.shape(x) != (g.n_nodes, L):
        raise ValueError(f"selection shape {np.shape(x)} != {(g.n_nodes, L)}")
    if y is not None and np.shape(y) != (g.n_edges, L):
        raise ValueError(f"transmission shape {np.shape(y)} != {(g.n_edges, L)}")


def objective(scenario: Scenario, x: np.ndarray) -> float:
    """Weighted QoE ``sum_u w_u sum_l Q_l x_{u,l}``."""
    _check_shapes(scenario, x, None)
    x = np.asarray(x, dtype=float)
    q = scenario.catalog.qualities
    total = 0.0
    for u in scenario.graph.users:
        if u not in scenario.users:
            raise KeyError(f"no profile for user {u!r}")
        total += scenario.users[u].weight * float(np.dot(q, x[scenario.graph.index[u]]))
    return total


def link_load(scenario: Scenario, y: np.ndarray, edge: tuple[str, str]) -> float:
    """Bandwidth (Mbps) carried on ``edge`` under transmission ``y``."""
    g = scenario.graph
    if edge not in g.edge_index:
        raise KeyError(f"unknown edge {edge[0]}->{edge[1]}")
    return float(np.dot(scenario.catalog.bandwidths, np.asarray(y)[g.edge_index[edge]]))


def inflow(scenario: Scenario, y: np.ndarray) -> np.ndarray:
    """``(n_nodes, L)`` sum of incoming transmission per node, edges in ascending order."""
    g = scenario.graph
    out = np.zeros((g.n_nodes, y.shape[1]))
    for k in range(g.n_edges):
        out[g.edge_dst[k]] += y[k]
    return out


def check(scenario: Scenario, x: np.ndarray, y: np.ndarray, integral: bool = False) -> ConstraintReport:
    """Residuals of every constraint family (empty report means feasible)."""
    _check_shapes(scenario, x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g, cat = scenario.graph, scenario.catalog
    L = cat.L
    rep = ConstraintReport()
    fam = rep.families

    def add(name: str, coords: tuple, r: float) -> None:
        if r > TOL:
            fam[name].append((coords, float(r)))

    for s in g.servers:
        i = g.index[s]
        for l in range(L):
            add("C-SRV", (s, l + 1), abs(x[i, l] - 1.0))

    for u in g.users:
        i = g.index[u]
        prof = scenario.users.get(u)
        supported = set(prof.supported_levels) if prof else set()
        for l in range(L):
            if l + 1 not in supported:
                add("C-CAP-USR", (u, l + 1), abs(x[i, l]))
        add("C-ONE", (u,), abs(x[i].sum() - 1.0))

    for k, e in enumerate(g.edges):
        i = g.edge_src[k]
        for l in range(L):
            add("C-FWD-OUT", (e.src, e.dst, l + 1), y[k, l] - x[i, l])
        add("C-BW", (e.src, e.dst), float(np.dot(cat.bandwidths, y[k])) - e.capacity)

    flow = inflow(scenario, y)
    for n in g.node_ids:
        if g.roles[n] is NodeRole.SERVER:
            continue
        i = g.index[n]
        for l in range(L):
            add("C-FWD-IN", (n, l + 1), x[i, l] - flow[i, l])

    if integral:
        for n in g.node_ids:
            i = g.index[n]
            for l in range(L):
                add("C-INT", (n, l + 1), abs(x[i, l] - np.round(x[i, l])))
        for k, e in enumerate(g.edges):
            for l in range(L):
                add("C-INT", (e.src, e.dst, l + 1), abs(y[k, l] - np.round(y[k, l])))
    return rep
