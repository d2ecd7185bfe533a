"""Brute-force ground truth for small instances.

Nothing in here touches the dual solver or the reconstruction pass; it
enumerates the integer program (or the knapsack grid) directly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .network import NodeRole, Scenario, depth_order


class OracleError(ValueError):
    pass


class LimitsExceeded(OracleError):
    pass


@dataclass(frozen=True)
class OracleLimits:
    max_users: int = 24
    max_levels: int = 8
    max_assignments: int = 10**6  # tree mode: prod |L_u|
    max_binary_vars: int = 24  # DAG mode: (|F|+|U|) L + |E| L
    max_grid_states: int = 5 * 10**7


@dataclass
class OracleSolution:
    x: np.ndarray
    y: np.ndarray
    z: float
    levels: dict[str, int]


def _mask_loads(bandwidths: np.ndarray) -> np.ndarray:
    L = len(bandwidths)
    lut = np.zeros(1 << L)
    for m in range(1 << L):
        lut[m] = sum(bandwidths[l] for l in range(L) if m >> l & 1)
    return lut


def ilp_optimum_tree(scenario: Scenario, limits: OracleLimits | None = None,
                     tol: float = 1e-9) -> OracleSolution | None:
    """Exact integer optimum on a single-server tree, ``None`` if infeasible.

    For every user assignment the only candidate transmission set is the
    demand closure: edge ``(i, j)`` carries level ``l`` iff some user at or
    below ``j`` picked ``l``. Carrying more never raises the objective.
    """
    limits = limits or OracleLimits()
    g, cat = scenario.graph, scenario.catalog
    if not g.is_tree():
        raise OracleError("topology is not a single-server tree")
    users = g.users
    L = cat.L
    if len(users) > limits.max_users or L > limits.max_levels:
        raise LimitsExceeded("instance exceeds oracle limits")
    choices = [np.array(sorted(scenario.users[u].supported_levels)) - 1 for u in users]
    total = math.prod(len(c) for c in choices)
    if total > limits.max_assignments:
        raise LimitsExceeded(f"{total} assignments exceed limit {limits.max_assignments}")
    if not users:
        return None

    # mixed-radix enumeration of assignments, first user varies slowest
    idx = np.arange(total)
    lv = np.zeros((total, len(users)), dtype=np.int64)
    rem = idx
    for col in range(len(users) - 1, -1, -1):
        k = len(choices[col])
        lv[:, col] = choices[col][rem % k]
        rem = rem // k
    q = cat.qualities
    w = np.array([scenario.users[u].weight for u in users])
    z = (w[None, :] * q[lv]).sum(axis=1)

    parent = {n: g.upstream(n)[0] for n in g.node_ids if g.roles[n] is not NodeRole.SERVER}
    below: dict[str, list[int]] = {n: [] for n in g.node_ids}
    for col, u in enumerate(users):
        n = u
        below[n].append(col)
        while n in parent:
            n = parent[n]
            below[n].append(col)
    bits = (1 << lv).astype(np.int64)
    lut = _mask_loads(cat.bandwidths)
    feasible = np.ones(total, dtype=bool)
    edge_masks = np.zeros((g.n_edges, total), dtype=np.int64)
    for k, e in enumerate(g.edges):
        cols = below[e.dst]
        if cols:
            m = np.bitwise_or.reduce(bits[:, cols], axis=1)
            edge_masks[k] = m
            feasible &= lut[m] <= e.capacity + tol
    if not feasible.any():
        return None
    zf = np.where(feasible, z, -np.inf)
    best = int(np.argmax(zf))

    x = np.zeros((g.n_nodes, L))
    y = np.zeros((g.n_edges, L))
    for s in g.servers:
        x[g.index[s]] = 1.0
    for k, e in enumerate(g.edges):
        m = int(edge_masks[k, best])
        for l in range(L):
            if m >> l & 1:
                y[k, l] = 1.0
                x[g.index[e.dst], l] = 1.0
    return OracleSolution(x, y, float(z[best]), {u: int(lv[best, c]) + 1 for c, u in enumerate(users)})


def ilp_optimum_small_dag(scenario: Scenario, limits: OracleLimits | None = None,
                          tol: float = 1e-9) -> OracleSolution | None:
    """Exact optimum on any small DAG by pruned exhaustive search over binary x, y.

    Non-user nodes are visited in depth order; at each node every admissible
    selection (a subset of what arrives) and every admissible transmission
    subset on each out-edge (a subset of the selection, within capacity) is
    tried. Users are sinks, so each user's best arriving level is taken once
    all transmissions are fixed.
    """
    limits = limits or OracleLimits()
    g, cat = scenario.graph, scenario.catalog
    L = cat.L
    nvars = (len(g.forwarders) + len(g.users)) * L + g.n_edges * L
    if nvars > limits.max_binary_vars:
        raise LimitsExceeded(f"{nvars} binary variables exceed limit {limits.max_binary_vars}")
    lut = _mask_loads(cat.bandwidths)
    q = cat.qualities
    full = (1 << L) - 1
    order = [n for n in depth_order(g) if g.roles[n] is not NodeRole.USER]
    users = g.users
    subsets_of = {m: [s for s in range(m + 1) if s & ~m == 0] for m in range(full + 1)}

    sel = {}  # node -> selection mask
    tx = [0] * g.n_edges
    best: dict = {"z": -math.inf}

    def score() -> None:
        z = 0.0
        chosen = {}
        for u in users:
            arriving = 0
            for e in g.in_edges(u):
                arriving |= tx[e]
            opts = [lv for lv in scenario.users[u].supported_levels if arriving >> (lv - 1) & 1]
            if not opts:
                return
            lv = max(opts, key=lambda v: (q[v - 1], -v))
            chosen[u] = lv
            z += scenario.users[u].weight * q[lv - 1]
        if z > best["z"] + 1e-12:
            best.update(z=z, sel=dict(sel), tx=list(tx), levels=chosen)

    def visit_edges(edges: list[int], pos: int, mask: int, then) -> None:
        if pos == len(edges):
            then()
            return
        e = edges[pos]
        for s in subsets_of[mask]:
            if lut[s] <= g.capacity[e] + tol:
                tx[e] = s
                visit_edges(edges, pos + 1, mask, then)
        tx[e] = 0

    def visit(pos: int) -> None:
        if pos == len(order):
            score()
            return
        n = order[pos]
        outs = g.out_edges(n)
        if g.roles[n] is NodeRole.SERVER:
            sel[n] = full
            visit_edges(outs, 0, full, lambda: visit(pos + 1))
            return
        arriving = 0
        for e in g.in_edges(n):
            arriving |= tx[e]
        for m in subsets_of[arriving]:
            sel[n] = m
            visit_edges(outs, 0, m, lambda: visit(pos + 1))
        sel.pop(n, None)

    visit(0)
    if best["z"] == -math.inf:
        return None
    x = np.zeros((g.n_nodes, L))
    y = np.zeros((g.n_edges, L))
    for n, m in best["sel"].items():
        for l in range(L):
            x[g.index[n], l] = float(m >> l & 1)
    for u, lv in best["levels"].items():
        x[g.index[u], lv - 1] = 1.0
    for e, m in enumerate(best["tx"]):
        for l in range(L):
            y[e, l] = float(m >> l & 1)
    return OracleSolution(x, y, float(best["z"]), dict(best["levels"]))


def ilp_optimum(scenario: Scenario, limits: OracleLimits | None = None) -> OracleSolution | None:
    """Tree oracle when the topology allows it, small-DAG oracle otherwise."""
    if scenario.graph.is_tree():
        return ilp_optimum_tree(scenario, limits)
    return ilp_optimum_small_dag(scenario, limits)


# --------------------------------------------------------------------------
# knapsack grid verifier


def _integer_scale(weights: np.ndarray, max_scale: int = 1000) -> int | None:
    for d in range(1, max_scale + 1):
        wd = weights * d
        if np.all(np.abs(wd - np.round(wd)) < 1e-9):
            return d
    return None


def knapsack_grid_check(values, weights, capacity: float, step: float,
                        limits: OracleLimits | None = None) -> float:
    """Best objective of ``sum v_l y_l`` over the grid ``y in {0, step, ..., 1}^L``.

    Subject to ``sum w_l y_l <= capacity``. When the weights are commensurable
    the search is an exact dynamic programme over integer capacity units
    (every grid point is covered); otherwise the grid is enumerated outright.

    Raises:
        LimitsExceeded: when neither route fits within the state limit.
    """
    limits = limits or OracleLimits()
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ValueError("1/step must be an integer")

    d = _integer_scale(w)
    if d is not None:
        wi = np.round(w * d).astype(np.int64)
        cap = int(math.floor(capacity * n * d + 1e-9))
        if cap < 0:
            return 0.0
        if cap + 1 <= limits.max_grid_states:
            dp = np.zeros(cap + 1)
            for l in range(len(v)):
                if v[l] <= 0:
                    continue
                remaining, piece = n, 1
                while remaining > 0:
                    s = min(piece, remaining)
                    ws, vs = int(wi[l] * s), v[l] * s / n
                    if ws <= cap:
                        dp[ws:] = np.maximum(dp[ws:], dp[:cap + 1 - ws] + vs)
                    remaining -= s
                    piece *= 2
            return float(dp[cap])

    states = (n + 1) ** len(v)
    if states > limits.max_grid_states:
        raise LimitsExceeded(f"grid of {states} states exceeds limit")
    grid = np.linspace(0.0, 1.0, n + 1)
    best = 0.0
    for point in itertools.product(grid, repeat=len(v)):
        p = np.array(point)
        if float(np.dot(w, p)) <= capacity + 1e-12:
            best = max(best, float(np.dot(v, p)))
    return best
