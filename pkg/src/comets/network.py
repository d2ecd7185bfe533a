"""Static problem instance: resolution ladder, topology, user profiles.

Everything here is immutable after construction. Node ids are strings and are
kept in natural sort order ("U2" before "U10"), so node index order equals
ascending node id order everywhere in the package.
"""

from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np


class ScenarioError(ValueError):
    """Raised for malformed scenario documents or invalid structure."""


class CycleError(ScenarioError):
    """Raised when a directed cycle prevents a depth labelling."""


class NodeRole(str, Enum):
    SERVER = "server"
    FORWARDER = "forwarder"
    USER = "user"


def natural_key(node_id: str) -> tuple:
    parts = re.split(r"(\d+)", node_id)
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in parts if p != "")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# VMAF ranges per resolution class. 720p has no published range; it sits
# between the 480p and 1K classes.
DEFAULT_VMAF = {
    "480p": (50.0, 75.0),
    "720p": (58.0, 80.0),
    "1K": (65.0, 85.0),
    "1080p": (65.0, 85.0),
    "2K": (70.0, 85.0),
    "1440p": (70.0, 85.0),
    "4K": (80.0, 95.0),
    "2160p": (80.0, 95.0),
    "8K": (95.0, 98.0),
    "4320p": (95.0, 98.0),
}


@dataclass(frozen=True)
class Level:
    name: str
    pixel_height: int
    bandwidth: float  # Mbps
    vmaf: tuple[float, float] | None = None


@dataclass(frozen=True)
class ResolutionCatalog:
    """Ordered quality ladder with the logarithmic quality model.

    ``quality[l] = a + b * ln(R_l / R_1)`` for 0-based level index ``l``.
    """

    levels: tuple[Level, ...]
    a: float = 1.0
    b: float = 1.0

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def bandwidths(self) -> np.ndarray:
        return _frozen(np.array([lv.bandwidth for lv in self.levels], dtype=float))

    @property
    def heights(self) -> np.ndarray:
        return _frozen(np.array([lv.pixel_height for lv in self.levels], dtype=float))

    @property
    def qualities(self) -> np.ndarray:
        r = self.heights
        return _frozen(self.a + self.b * np.log(r / r[0]))

    @property
    def names(self) -> list[str]:
        return [lv.name for lv in self.levels]

    def vmaf_range(self, level: int) -> tuple[float, float]:
        lv = self.levels[level - 1]
        if lv.vmaf is not None:
            return lv.vmaf
        if lv.name in DEFAULT_VMAF:
            return DEFAULT_VMAF[lv.name]
        raise KeyError(f"no VMAF range configured for level {lv.name!r}")


def quality(catalog: ResolutionCatalog, level: int) -> float:
    """Quality score of a 1-based ``level``."""
    if not 1 <= level <= catalog.L:
        raise ValueError(f"level {level} outside 1..{catalog.L}")
    r = catalog.levels[level - 1].pixel_height / catalog.levels[0].pixel_height
    return catalog.a + catalog.b * math.log(r)


def default_catalog(a: float = 1.0, b: float = 1.0) -> ResolutionCatalog:
    ladder = [
        ("480p", 480, 1.5),
        ("720p", 720, 3.0),
        ("1080p", 1080, 6.0),
        ("1440p", 1440, 12.0),
        ("2160p", 2160, 25.0),
        ("4320p", 4320, 80.0),
    ]
    return ResolutionCatalog(tuple(Level(n, h, bw) for n, h, bw in ladder), a=a, b=b)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    capacity: float  # Mbps
    delay: float = 0.005  # s, one-way propagation


class NetworkGraph:
    """Directed graph of servers, forwarders and users with link capacities.

    Construction does not enforce the structural invariants; use
    :func:`validate` for a full report.
    """

    def __init__(self, roles: Mapping[str, NodeRole | str], edges: Iterable[Edge]):
        ids = sorted(roles, key=natural_key)
        self.node_ids: tuple[str, ...] = tuple(ids)
        self.roles: dict[str, NodeRole] = {n: NodeRole(roles[n]) for n in ids}
        self.index: dict[str, int] = {n: i for i, n in enumerate(ids)}
        self.edges: tuple[Edge, ...] = tuple(
            sorted(edges, key=lambda e: (self.index.get(e.src, -1), self.index.get(e.dst, -1),
                                         e.src, e.dst))
        )
        self.edge_index: dict[tuple[str, str], int] = {}
        for k, e in enumerate(self.edges):
            self.edge_index.setdefault((e.src, e.dst), k)

        known = [e for e in self.edges if e.src in self.index and e.dst in self.index]
        self._upstream: dict[str, list[str]] = {n: [] for n in ids}
        self._downstream: dict[str, list[str]] = {n: [] for n in ids}
        for e in known:
            self._downstream[e.src].append(e.dst)
            self._upstream[e.dst].append(e.src)

        n = len(ids)
        self.role_code = _frozen(np.array(
            [("server", "forwarder", "user").index(self.roles[i].value) for i in ids], dtype=np.int8))
        self.edge_src = _frozen(np.array([self.index.get(e.src, -1) for e in self.edges], dtype=np.intp))
        self.edge_dst = _frozen(np.array([self.index.get(e.dst, -1) for e in self.edges], dtype=np.intp))
        self.capacity = _frozen(np.array([e.capacity for e in self.edges], dtype=float))
        self.n_nodes = n

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def upstream(self, node: str) -> list[str]:
        return list(self._upstream[node])

    def downstream(self, node: str) -> list[str]:
        return list(self._downstream[node])

    def in_edges(self, node: str) -> list[int]:
        return [self.edge_index[(j, node)] for j in self._upstream[node]]

    def out_edges(self, node: str) -> list[int]:
        return [self.edge_index[(node, k)] for k in self._downstream[node]]

    def nodes_with_role(self, role: NodeRole | str) -> list[str]:
        role = NodeRole(role)
        return [n for n in self.node_ids if self.roles[n] is role]

    @property
    def servers(self) -> list[str]:
        return self.nodes_with_role(NodeRole.SERVER)

    @property
    def forwarders(self) -> list[str]:
        return self.nodes_with_role(NodeRole.FORWARDER)

    @property
    def users(self) -> list[str]:
        return self.nodes_with_role(NodeRole.USER)

    def edge(self, src: str, dst: str) -> Edge:
        try:
            return self.edges[self.edge_index[(src, dst)]]
        except KeyError:
            raise KeyError(f"unknown edge {src}->{dst}") from None

    def is_tree(self) -> bool:
        """Single server root, every other node has exactly one parent."""
        if len(self.servers) != 1:
            return False
        return all(len(self._upstream[n]) == 1 for n in self.node_ids if n not in self.servers)


@dataclass(frozen=True)
class UserProfile:
    user: str
    supported_levels: tuple[int, ...]  # 1-based
    weight: float = 1.0


@dataclass(frozen=True)
class AimdParams:
    initial: int = 1
    minimum: int = 1
    maximum: int = 64
    decrease: float = 0.5


@dataclass(frozen=True)
class SimParams:
    duration: float = 60.0
    interval: float = 4.0
    chunk_duration: float = 2.0
    loss_rate: float = 0.0
    seed: int = 0
    cache_capacity: int = 256
    aimd: AimdParams = field(default_factory=AimdParams)
    title: str = "v1"
    mode: str = "centralized"
    pit_lifetime: float = 4.0
    retx_suppression: float = 1.0
    backpressure_threshold: float = 0.050
    min_rto: float = 0.050
    initial_rtt: float = 0.100
    control_delay: float = 0.010
    startup_threshold: float = 2.0
    max_buffer: float = 10.0
    interest_size: int = 100
    prefetch: bool = True
    live: bool = True  # chunk k is published at k * chunk_duration
    eps: float = 1e-4
    tmax: int = 500
    alpha0: float = 5.0
    beta0: float = 5.0


@dataclass(frozen=True)
class Scenario:
    graph: NetworkGraph
    catalog: ResolutionCatalog
    users: Mapping[str, UserProfile]
    sim: SimParams = field(default_factory=SimParams)

    def with_sim(self, **changes: Any) -> "Scenario":
        return replace(self, sim=replace(self.sim, **changes))

    def weights(self) -> np.ndarray:
        """Per-node weight vector (0 for non-users)."""
        w = np.zeros(self.graph.n_nodes)
        for u, prof in self.users.items():
            if u in self.graph.index:
                w[self.graph.index[u]] = prof.weight
        return w

    def supported_mask(self) -> np.ndarray:
        """Boolean (N, L) mask; True where a user supports a level."""
        m = np.zeros((self.graph.n_nodes, self.catalog.L), dtype=bool)
        for u, prof in self.users.items():
            if u not in self.graph.index:
                continue
            for lv in prof.supported_levels:
                if 1 <= lv <= self.catalog.L:
                    m[self.graph.index[u], lv - 1] = True
        return m


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple = ()

    def __str__(self) -> str:
        loc = ", ".join(str(w) for w in self.where)
        return f"{self.kind} ({loc})" if loc else self.kind


def _reachable_from_servers(graph: NetworkGraph) -> set[str]:
    seen = set(graph.servers)
    queue = deque(graph.servers)
    while queue:
        n = queue.popleft()
        for k in graph.downstream(n):
            if k not in seen:
                seen.add(k)
                queue.append(k)
    return seen


def _has_cycle(graph: NetworkGraph) -> bool:
    indeg = {n: len(graph.upstream(n)) for n in graph.node_ids}
    queue = deque(n for n, d in indeg.items() if d == 0)
    visited = 0
    while queue:
        n = queue.popleft()
        visited += 1
        for k in graph.downstream(n):
            indeg[k] -= 1
            if indeg[k] == 0:
                queue.append(k)
    return visited != graph.n_nodes


def validate(scenario: Scenario) -> list[Violation]:
    """Check every structural invariant; an empty list means valid."""
    out: list[Violation] = []
    cat, g = scenario.catalog, scenario.graph

    if cat.L == 0:
        out.append(Violation("catalog has no levels"))
    for i, lv in enumerate(cat.levels, start=1):
        if not lv.bandwidth > 0:
            out.append(Violation("non-positive bandwidth", (i,)))
        if not lv.pixel_height > 0:
            out.append(Violation("non-positive pixel height", (i,)))
    for i in range(1, cat.L):
        lo, hi = cat.levels[i - 1], cat.levels[i]
        if not hi.bandwidth > lo.bandwidth:
            out.append(Violation("bandwidth not strictly increasing", (i, i + 1)))
        if not hi.pixel_height > lo.pixel_height:
            out.append(Violation("pixel height not strictly increasing", (i, i + 1)))

    seen_edges: set[tuple[str, str]] = set()
    for e in g.edges:
        key = (e.src, e.dst)
        if e.src not in g.index or e.dst not in g.index:
            out.append(Violation("edge references unknown node", key))
            continue
        if key in seen_edges:
            out.append(Violation("duplicate edge", key))
            continue
        seen_edges.add(key)
        if e.src == e.dst:
            out.append(Violation("self loop", key))
        if not e.capacity > 0:
            out.append(Violation("non-positive capacity", key))
        if e.delay < 0:
            out.append(Violation("negative link delay", key))
        if g.roles[e.dst] is NodeRole.SERVER:
            out.append(Violation("server has incoming edge", key))
        if g.roles[e.src] is NodeRole.USER:
            out.append(Violation("user has outgoing edge", key))

    cyclic = _has_cycle(g)
    if cyclic:
        out.append(Violation("graph not acyclic"))
    if not g.servers:
        out.append(Violation("no server"))
    reach = _reachable_from_servers(g)
    for n in g.node_ids:
        if g.roles[n] is not NodeRole.SERVER and n not in reach:
            out.append(Violation("node unreachable from servers", (n,)))

    for u in g.users:
        if u not in scenario.users:
            out.append(Violation("user without profile", (u,)))
    for u, prof in scenario.users.items():
        if u not in g.index or g.roles[u] is not NodeRole.USER:
            out.append(Violation("profile for non-user node", (u,)))
        if not prof.supported_levels:
            out.append(Violation("empty supported level set", (u,)))
        for lv in prof.supported_levels:
            if not 1 <= lv <= cat.L:
                out.append(Violation("supported level out of range", (u, lv)))
        if not prof.weight > 0:
            out.append(Violation("non-positive user weight", (u,)))

    s = scenario.sim
    if not s.duration > 0:
        out.append(Violation("non-positive duration"))
    if not s.interval > 0:
        out.append(Violation("non-positive adaptation interval"))
    if not s.chunk_duration > 0:
        out.append(Violation("non-positive chunk duration"))
    if not 0 <= s.loss_rate < 1:
        out.append(Violation("loss rate outside [0, 1)"))
    if s.mode not in ("centralized", "distributed"):
        out.append(Violation("unknown optimizer mode", (s.mode,)))
    if s.cache_capacity < 0:
        out.append(Violation("negative cache capacity"))
    return out


def compute_depths(graph: NetworkGraph) -> dict[str, int]:
    """Longest-path depth from any source node (servers get 0).

    Raises:
        CycleError: if the graph has a directed cycle.
    """
    indeg = {n: len(graph.upstream(n)) for n in graph.node_ids}
    depth = {n: 0 for n in graph.node_ids}
    queue = deque(n for n in graph.node_ids if indeg[n] == 0)
    done = 0
    while queue:
        n = queue.popleft()
        done += 1
        for k in graph.downstream(n):
            depth[k] = max(depth[k], depth[n] + 1)
            indeg[k] -= 1
            if indeg[k] == 0:
                queue.append(k)
    if done != graph.n_nodes:
        raise CycleError("graph contains a directed cycle")
    return depth


def depth_order(graph: NetworkGraph) -> list[str]:
    """Nodes by non-decreasing depth, ties by ascending node id."""
    depth = compute_depths(graph)
    return sorted(graph.node_ids, key=lambda n: (depth[n], graph.index[n]))


# --------------------------------------------------------------------------
# JSON scenario documents


def _strict(obj: Mapping, allowed: Iterable[str], where: str, required: Iterable[str] = ()) -> None:
    if not isinstance(obj, Mapping):
        raise ScenarioError(f"{where}: expected an object")
    extra = set(obj) - set(allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown keys {sorted(extra)}")
    missing = set(required) - set(obj)
    if missing:
        raise ScenarioError(f"{where}: missing keys {sorted(missing)}")


def _sim_from_dict(d: Mapping) -> SimParams:
    names = {f.name for f in fields(SimParams)}
    _strict(d, names, "sim")
    kw = dict(d)
    if "aimd" in kw:
        a_names = {f.name for f in fields(AimdParams)}
        _strict(kw["aimd"], a_names, "sim.aimd")
        kw["aimd"] = AimdParams(**kw["aimd"])
    return SimParams(**kw)


def scenario_from_dict(doc: Mapping) -> Scenario:
    """Build a :class:`Scenario` from a parsed JSON document (strict keys)."""
    _strict(doc, ("catalog", "nodes", "edges", "users", "sim"), "scenario",
            required=("catalog", "nodes", "edges", "users"))
    c = doc["catalog"]
    _strict(c, ("levels", "a", "b"), "catalog", required=("levels",))
    levels = []
    for i, lv in enumerate(c["levels"]):
        _strict(lv, ("name", "pixel_height", "bandwidth", "vmaf"), f"catalog.levels[{i}]",
                required=("pixel_height", "bandwidth"))
        vmaf = tuple(float(v) for v in lv["vmaf"]) if lv.get("vmaf") is not None else None
        levels.append(Level(str(lv.get("name", f"{lv['pixel_height']}p")),
                            int(lv["pixel_height"]), float(lv["bandwidth"]), vmaf))
    catalog = ResolutionCatalog(tuple(levels), a=float(c.get("a", 1.0)), b=float(c.get("b", 1.0)))

    roles: dict[str, str] = {}
    for i, nd in enumerate(doc["nodes"]):
        _strict(nd, ("id", "role"), f"nodes[{i}]", required=("id", "role"))
        if nd["id"] in roles:
            raise ScenarioError(f"nodes[{i}]: duplicate node id {nd['id']!r}")
        try:
            roles[str(nd["id"])] = NodeRole(nd["role"]).value
        except ValueError:
            raise ScenarioError(f"nodes[{i}]: unknown role {nd['role']!r}") from None

    edges = []
    for i, ed in enumerate(doc["edges"]):
        _strict(ed, ("src", "dst", "capacity", "delay"), f"edges[{i}]",
                required=("src", "dst", "capacity"))
        edges.append(Edge(str(ed["src"]), str(ed["dst"]), float(ed["capacity"]),
                          float(ed.get("delay", 0.005))))

    users: dict[str, UserProfile] = {}
    for i, us in enumerate(doc["users"]):
        _strict(us, ("id", "supported_levels", "weight"), f"users[{i}]",
                required=("id", "supported_levels"))
        users[str(us["id"])] = UserProfile(str(us["id"]),
                                           tuple(int(v) for v in us["supported_levels"]),
                                           float(us.get("weight", 1.0)))
    sim = _sim_from_dict(doc.get("sim", {}))
    return Scenario(NetworkGraph(roles, edges), catalog, users, sim)


def scenario_to_dict(scenario: Scenario) -> dict:
    cat, g = scenario.catalog, scenario.graph
    levels = []
    for lv in cat.levels:
        d: dict[str, Any] = {"name": lv.name, "pixel_height": lv.pixel_height, "bandwidth": lv.bandwidth}
        if lv.vmaf is not None:
            d["vmaf"] = list(lv.vmaf)
        levels.append(d)
    sim = {f.name: getattr(scenario.sim, f.name) for f in fields(SimParams)}
    sim["aimd"] = {f.name: getattr(scenario.sim.aimd, f.name) for f in fields(AimdParams)}
    return {
        "catalog": {"a": cat.a, "b": cat.b, "levels": levels},
        "nodes": [{"id": n, "role": g.roles[n].value} for n in g.node_ids],
        "edges": [{"src": e.src, "dst": e.dst, "capacity": e.capacity, "delay": e.delay}
                  for e in g.edges],
        "users": [{"id": u, "supported_levels": list(p.supported_levels), "weight": p.weight}
                  for u, p in sorted(scenario.users.items(), key=lambda kv: natural_key(kv[0]))],
        "sim": sim,
    }


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
