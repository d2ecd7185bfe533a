"""Integer feasible point from a (possibly fractional) dual iterate.

Round every transmission down, then walk nodes in non-decreasing depth:
forwarders acquire exactly what arrives and stop forwarding what they lack;
users take the best supported level that actually arrives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .milp import check
from .network import NodeRole, Scenario, depth_order


@dataclass
class ReconstructionResult:
    x: np.ndarray
    y: np.ndarray
    unserved_users: list[str]
    order: list[str] = field(default_factory=list)

    def levels(self, scenario: Scenario) -> dict[str, int | None]:
        """Chosen 1-based level per user (``None`` when unserved)."""
        out = {}
        for u in scenario.graph.users:
            row = self.x[scenario.graph.index[u]]
            out[u] = int(np.argmax(row)) + 1 if row.any() else None
        return out


def reconstruct(scenario: Scenario, x: np.ndarray, y: np.ndarray) -> ReconstructionResult:
    g, cat = scenario.graph, scenario.catalog
    L = cat.L
    if np.shape(x) != (g.n_nodes, L) or np.shape(y) != (g.n_edges, L):
        raise ValueError("x or y has the wrong shape for this scenario")
    q = cat.qualities
    yt = np.floor(np.asarray(y, dtype=float)).clip(0.0, 1.0)
    xt = np.zeros((g.n_nodes, L))
    unserved: list[str] = []
    order = depth_order(g)
    for n in order:
        i = g.index[n]
        role = g.roles[n]
        if role is NodeRole.SERVER:
            xt[i] = 1.0
            continue
        incoming = np.zeros(L)
        for e in g.in_edges(n):
            incoming += yt[e]
        if role is NodeRole.FORWARDER:
            xt[i] = np.minimum(1.0, incoming)
            for e in g.out_edges(n):
                yt[e] = np.minimum(yt[e], xt[i])
        else:
            prof = scenario.users[n]
            avail = [lv for lv in prof.supported_levels if incoming[lv - 1] > 0]
            if avail:
                best = max(avail, key=lambda lv: (q[lv - 1], -lv))
                xt[i, best - 1] = 1.0
            else:
                unserved.append(n)
    return ReconstructionResult(xt, yt, unserved, order)


def residual_violations(scenario: Scenario, result: ReconstructionResult) -> dict[str, int]:
    """Integral-check violations, ignoring the exactly-one rule for unserved users."""
    rep = check(scenario, result.x, result.y, integral=True)
    skip = set(result.unserved_users)
    out = {}
    for fam, items in rep.families.items():
        n = sum(1 for c, _ in items if not (fam == "C-ONE" and c[0] in skip))
        if n:
            out[fam] = n
    return out
