"""Lagrangian dual decomposition of the relaxed QoE program.

The coupling constraints ``y_{i,j,l} <= x_{i,l}`` (forwarder outputs, prices
``lam2``) and ``x_{i,l} <= sum_j y_{j,i,l}`` (non-server inputs, prices
``lam1``) are dualised. The Lagrangian then splits into four independent
families with closed-form maximisers:

* server edge ``(s, i)``: continuous knapsack with values ``lam1[i]``;
* user ``u``: pick ``argmax_{l in L_u} w_u Q_l - lam1[u, l]``;
* forwarder ``f``: ``x_{f,l} = 1`` iff ``sum_k lam2[f,k,l] - lam1[f,l] > 0``;
* forwarder edge ``(f, k)``: knapsack with values ``lam1[k] - lam2[f,k]``.

Multipliers are stored densely: ``lam1`` is ``(n_nodes, L)`` (server rows stay
zero) and ``lam2`` is ``(n_edges, L)`` indexed by the edge ``(f, k)`` (rows of
server-sourced edges stay zero).
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .messages import decode_values, encode_message, message_size
from .milp import objective
from .network import Scenario, ScenarioError, validate

log = logging.getLogger(__name__)


class DecompositionMismatch(RuntimeError):
    """Group-sum and direct Lagrangian values disagree."""


# --------------------------------------------------------------------------
# closed-form subproblems


def _knapsack_rows(values: np.ndarray, weights: np.ndarray, capacity: np.ndarray) -> np.ndarray:
    """Greedy fractional knapsack, one instance per row.

    Items with non-positive value are never taken. Eligible items are filled in
    descending value density (ties: ascending level) until the cumulative
    weight strictly exceeds the capacity; that item gets the remaining fraction.
    """
    values = np.atleast_2d(values)
    rows, L = values.shape
    eligible = values > 0
    density = np.where(eligible, values / weights, -np.inf)
    lvl = np.broadcast_to(np.arange(L), (rows, L))
    order = np.lexsort((lvl, -density), axis=-1)
    w_sorted = weights[order]
    elig_sorted = np.take_along_axis(eligible, order, axis=-1)
    cum = np.cumsum(np.where(elig_sorted, w_sorted, 0.0), axis=-1)
    prev = np.concatenate([np.zeros((rows, 1)), cum[:, :-1]], axis=-1)
    cap = capacity[:, None]
    frac = (cap - prev) / w_sorted
    y_sorted = np.where(cum <= cap, 1.0, np.where(prev <= cap, frac, 0.0))
    y_sorted = np.where(elig_sorted, y_sorted, 0.0)
    out = np.zeros_like(y_sorted)
    np.put_along_axis(out, order, y_sorted, axis=-1)
    return out


def _check_knapsack_inputs(weights: np.ndarray, capacity) -> None:
    if np.any(weights <= 0):
        raise ValueError("bandwidths must be positive")
    if np.any(np.asarray(capacity) <= 0):
        raise ValueError("capacity must be positive")


def continuous_knapsack(values, weights, capacity: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_knapsack_inputs(weights, capacity)
    return _knapsack_rows(values[None, :], weights, np.array([float(capacity)]))[0]


def solve_server_edge(lam1_dst, bandwidths, capacity: float) -> np.ndarray:
    """Optimal fractional transmission on a server-sourced edge."""
    return continuous_knapsack(lam1_dst, bandwidths, capacity)


def solve_forwarder_edge(lam1_dst, lam2_edge, bandwidths, capacity: float) -> np.ndarray:
    """Optimal fractional transmission on a forwarder-sourced edge."""
    return continuous_knapsack(np.asarray(lam1_dst, float) - np.asarray(lam2_edge, float),
                               bandwidths, capacity)


def solve_user(weight: float, qualities, lam1_row, supported) -> np.ndarray:
    """One-hot selection maximising ``w Q_l - lam1_l`` over supported levels.

    ``supported`` holds 1-based levels. Ties go to the lowest level.
    """
    levels = sorted(set(int(v) for v in supported))
    if not levels:
        raise ValueError("supported level set is empty")
    q = np.asarray(qualities, float)
    mask = np.zeros(q.size, dtype=bool)
    mask[np.array(levels) - 1] = True
    return _user_rows(np.array([weight], float), q, np.atleast_2d(np.asarray(lam1_row, float)),
                      mask[None, :])[0]


def _user_rows(weights: np.ndarray, q: np.ndarray, lam1: np.ndarray, mask: np.ndarray) -> np.ndarray:
    score = weights[:, None] * q[None, :] - lam1
    score = np.where(mask, score, -np.inf)
    best = np.argmax(score, axis=1)
    x = np.zeros_like(score)
    x[np.arange(len(best)), best] = 1.0
    return x


def solve_forwarder_selection(lam1_row, lam2_slice) -> np.ndarray:
    """``x_l = 1`` iff the summed outgoing prices strictly exceed the incoming one."""
    lam1_row = np.asarray(lam1_row, float)
    acc = np.zeros_like(lam1_row)
    for row in np.atleast_2d(np.asarray(lam2_slice, float)) if np.size(lam2_slice) else ():
        acc = acc + row
    return ((acc - lam1_row) > 0).astype(float)


# --------------------------------------------------------------------------
# dense problem view


@dataclass(frozen=True)
class DualState:
    lam1: np.ndarray
    lam2: np.ndarray

    def copy(self) -> "DualState":
        return DualState(self.lam1.copy(), self.lam2.copy())


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing steps ``alpha0 / t`` and ``beta0 / t`` (t >= 1)."""

    alpha0: float = 5.0
    beta0: float = 5.0

    def __post_init__(self) -> None:
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ValueError("step parameters must be positive")

    def alpha(self, t: int) -> float:
        return self.alpha0 / t

    def beta(self, t: int) -> float:
        return self.beta0 / t


class Problem:
    """Array view of a scenario used by the iteration kernels."""

    def __init__(self, scenario: Scenario):
        g, cat = scenario.graph, scenario.catalog
        self.scenario = scenario
        self.N, self.E, self.L = g.n_nodes, g.n_edges, cat.L
        self.B = np.array(cat.bandwidths)
        self.Q = np.array(cat.qualities)
        self.C = np.array(g.capacity)
        self.src = np.array(g.edge_src)
        self.dst = np.array(g.edge_dst)
        role = np.array(g.role_code)
        self.is_server = role == 0
        self.is_forwarder = role == 1
        self.is_user = role == 2
        self.users = np.flatnonzero(self.is_user)
        self.forwarders = np.flatnonzero(self.is_forwarder)
        self.servers = np.flatnonzero(self.is_server)
        self.w = scenario.weights()
        self.mask = scenario.supported_mask()
        self.server_edge = self.is_server[self.src]
        self.fwd_edge = self.is_forwarder[self.src]
        self.lam1_rows = ~self.is_server
        self.server_edges = np.flatnonzero(self.server_edge)
        self.fwd_edges = np.flatnonzero(self.fwd_edge)

    def zeros(self) -> DualState:
        return DualState(np.zeros((self.N, self.L)), np.zeros((self.E, self.L)))

    # ---- subproblem maximisers -----------------------------------------

    def maximise(self, st: DualState) -> tuple[np.ndarray, np.ndarray]:
        x = np.zeros((self.N, self.L))
        y = np.zeros((self.E, self.L))
        x[self.servers] = 1.0
        if self.users.size:
            x[self.users] = _user_rows(self.w[self.users], self.Q, st.lam1[self.users],
                                       self.mask[self.users])
        if self.forwarders.size:
            acc = np.zeros((self.N, self.L))
            np.add.at(acc, self.src[self.fwd_edges], st.lam2[self.fwd_edges])
            coef = acc[self.forwarders] - st.lam1[self.forwarders]
            x[self.forwarders] = (coef > 0).astype(float)
        if self.E:
            vals = st.lam1[self.dst].copy()
            vals[self.fwd_edges] = vals[self.fwd_edges] - st.lam2[self.fwd_edges]
            y = _knapsack_rows(vals, self.B, self.C)
        return x, y

    def inflow(self, y: np.ndarray) -> np.ndarray:
        acc = np.zeros((self.N, self.L))
        np.add.at(acc, self.dst, y)
        return acc

    def subgradients(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d1 = self.inflow(y) - x
        d1[self.is_server] = 0.0
        d2 = x[self.src] - y
        d2[~self.fwd_edge] = 0.0
        return d1, d2

    # ---- dual value --------------------------------------------------------

    def group_values(self, st: DualState, x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
        se, fe = self.server_edges, self.fwd_edges
        g_server = float(np.sum(st.lam1[self.dst[se]] * y[se]))
        u = self.users
        g_user = float(np.sum((self.w[u, None] * self.Q[None, :] - st.lam1[u]) * x[u]))
        acc = np.zeros((self.N, self.L))
        np.add.at(acc, self.src[fe], st.lam2[fe])
        f = self.forwarders
        g_fwd = float(np.sum((acc[f] - st.lam1[f]) * x[f]))
        g_fedge = float(np.sum((st.lam1[self.dst[fe]] - st.lam2[fe]) * y[fe]))
        return g_server, g_user, g_fwd, g_fedge

    def lagrangian(self, st: DualState, x: np.ndarray, y: np.ndarray) -> float:
        """Objective plus priced constraint slacks, evaluated directly."""
        z = objective(self.scenario, x)
        slack_in = (self.inflow(y) - x)[self.lam1_rows]
        fe = self.fwd_edges
        slack_out = x[self.src[fe]] - y[fe]
        return z + float(np.sum(st.lam1[self.lam1_rows] * slack_in)) + float(np.sum(st.lam2[fe] * slack_out))


def subgradients(scenario: Scenario, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial subgradients ``(d lam1, d lam2)`` at the subproblem maximisers.

    ``d lam1[i] = sum_j y[j,i] - x[i]`` and ``d lam2[f,k] = x[f] - y[f,k]``:
    the gradient of the Lagrangian in each price, which is what the
    subproblem objectives imply.
    """
    p = Problem(scenario)
    if np.shape(x) != (p.N, p.L) or np.shape(y) != (p.E, p.L):
        raise ValueError("shape mismatch between scenario and (x, y)")
    return p.subgradients(np.asarray(x, float), np.asarray(y, float))


def update_multipliers(state: DualState, grads: tuple[np.ndarray, np.ndarray],
                       alpha: float, beta: float) -> DualState:
    """Projected step ``max(0, lam - step * grad)``."""
    d1, d2 = grads
    return DualState(np.maximum(0.0, state.lam1 - alpha * d1),
                     np.maximum(0.0, state.lam2 - beta * d2))


def dual_value(scenario: Scenario, state: DualState, x: np.ndarray, y: np.ndarray,
               problem: Problem | None = None, tol: float = 1e-9) -> float:
    """Dual function value, cross-checked two ways.

    The four subproblem group values are summed and compared to the
    Lagrangian evaluated directly at ``(x, y)``.

    Raises:
        DecompositionMismatch: if the two differ by more than ``tol``
            (relative to ``max(1, |g|)``).
    """
    p = problem or Problem(scenario)
    g = sum(p.group_values(state, x, y))
    direct = p.lagrangian(state, x, y)
    if abs(g - direct) > tol * max(1.0, abs(g)):
        raise DecompositionMismatch(f"group sum {g!r} != direct Lagrangian {direct!r}")
    return g


# --------------------------------------------------------------------------
# iteration driver


@dataclass
class Uniqueness:
    user_ties: int = 0
    forwarder_zero: int = 0
    knapsack_ties: int = 0

    @property
    def unique(self) -> bool:
        return not (self.user_ties or self.forwarder_zero or self.knapsack_ties)


@dataclass
class IterationTrace:
    g: list[float] = field(default_factory=list)
    change: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    xs: list[np.ndarray] = field(default_factory=list)
    ys: list[np.ndarray] = field(default_factory=list)
    final: DualState | None = None
    converged: bool = False
    messages: int = 0
    message_bytes: int = 0
    uniqueness: Uniqueness | None = None

    def __len__(self) -> int:
        return len(self.g)

    @property
    def best_g(self) -> list[float]:
        return list(np.minimum.accumulate(self.g)) if self.g else []

    def to_csv(self, wall: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "g", "sup_norm_change", "wall_ms"])
        for t, (g, c, ms) in enumerate(zip(self.g, self.change, self.wall_ms), start=1):
            w.writerow([t, repr(g), repr(c), f"{ms:.3f}" if wall else ""])
        return buf.getvalue()


def uniqueness_report(p: Problem, st: DualState, tol: float = 1e-12) -> Uniqueness:
    """Count situations where a subproblem maximiser is not unique.

    Users: tied best scores. Forwarders: a zero selection coefficient.
    Knapsacks: a zero-cost exchange exists, i.e. two equal-density items with
    one not full and the other not empty, or a zero-value item left out while
    capacity remains.
    """
    rep = Uniqueness()
    for u in p.users:
        score = p.w[u] * p.Q - st.lam1[u]
        s = score[p.mask[u]]
        rep.user_ties += int(np.sum(np.abs(s - s.max()) <= tol) > 1)
    acc = np.zeros((p.N, p.L))
    np.add.at(acc, p.src[p.fwd_edges], st.lam2[p.fwd_edges])
    for f in p.forwarders:
        rep.forwarder_zero += int(np.sum(np.abs(acc[f] - st.lam1[f]) <= tol))
    vals = st.lam1[p.dst].copy()
    vals[p.fwd_edges] -= st.lam2[p.fwd_edges]
    y = _knapsack_rows(vals, p.B, p.C) if p.E else np.zeros((0, p.L))
    for e in range(p.E):
        slack = p.C[e] - float(np.dot(p.B, y[e]))
        d = vals[e] / p.B
        tie = False
        for a in range(p.L):
            if abs(vals[e, a]) <= tol and slack > tol:
                tie = True
            for b in range(p.L):
                if a != b and vals[e, a] > tol and abs(d[a] - d[b]) <= tol and y[e, a] > tol and y[e, b] < 1 - tol:
                    tie = True
        rep.knapsack_ties += int(tie)
    return rep


def _centralised_step(p: Problem, st: DualState, t: int, sched: StepSchedule):
    x, y = p.maximise(st)
    new = update_multipliers(st, p.subgradients(x, y), sched.alpha(t), sched.beta(t))
    return x, y, new, 0, 0


class _Mesh:
    """Synchronous message-passing rounds between per-node workers.

    Every node owns its multiplier rows and talks only to graph neighbours:
    downstream nodes publish ``lam1`` rows upstream, upstream nodes publish
    their edge transmissions downstream. Each payload crosses a byte codec.
    A message may be dropped (``drop`` returns True), in which case the
    receiver keeps its stale copy.
    """

    def __init__(self, p: Problem, drop: Callable[[], bool] | None = None):
        self.p = p
        self.drop = drop
        g = p.scenario.graph
        self.out_edges = [g.out_edges(n) for n in g.node_ids]
        self.in_edges = [g.in_edges(n) for n in g.node_ids]
        # receiver-side caches
        self.seen_lam1 = np.zeros((p.E, p.L))  # at edge source: lam1 of edge destination
        self.seen_y = np.zeros((p.E, p.L))  # at edge destination: y of that edge
        self.msg_size = message_size(p.L)

    def _send(self, sender: int, t: int, values: np.ndarray) -> np.ndarray | None:
        buf = encode_message(int(sender), t, values)
        if self.drop is not None and self.drop():
            return None
        _, _, vals = decode_values(buf, self.p.L)
        return vals

    def step(self, st: DualState, t: int, sched: StepSchedule):
        p = self.p
        x = np.zeros((p.N, p.L))
        y = np.zeros((p.E, p.L))
        msgs = 0
        # compute: every node solves its own subproblems from local state
        for n in range(p.N):
            if p.is_server[n]:
                x[n] = 1.0
                for e in self.out_edges[n]:
                    y[e] = solve_server_edge(self.seen_lam1[e], p.B, p.C[e])
            elif p.is_forwarder[n]:
                acc = np.zeros(p.L)
                for e in self.out_edges[n]:
                    acc = acc + st.lam2[e]
                x[n] = ((acc - st.lam1[n]) > 0).astype(float)
                for e in self.out_edges[n]:
                    y[e] = solve_forwarder_edge(self.seen_lam1[e], st.lam2[e], p.B, p.C[e])
            else:
                x[n] = _user_rows(p.w[n:n + 1], p.Q, st.lam1[n:n + 1], p.mask[n:n + 1])[0]
        # publish transmissions downstream
        for e in range(p.E):
            vals = self._send(p.src[e], t, y[e])
            msgs += 1
            if vals is not None:
                self.seen_y[e] = vals
        # update own multipliers
        alpha, beta = sched.alpha(t), sched.beta(t)
        lam1 = st.lam1.copy()
        lam2 = st.lam2.copy()
        for n in range(p.N):
            if p.is_server[n]:
                continue
            acc = np.zeros(p.L)
            for e in self.in_edges[n]:
                acc = acc + self.seen_y[e]
            lam1[n] = np.maximum(0.0, st.lam1[n] - alpha * (acc - x[n]))
            if p.is_forwarder[n]:
                for e in self.out_edges[n]:
                    lam2[e] = np.maximum(0.0, st.lam2[e] - beta * (x[n] - y[e]))
        # publish new lam1 rows upstream
        for e in range(p.E):
            vals = self._send(p.dst[e], t, lam1[p.dst[e]])
            msgs += 1
            if vals is not None:
                self.seen_lam1[e] = vals
        return x, y, DualState(lam1, lam2), msgs, msgs * self.msg_size


def run(scenario: Scenario, schedule: StepSchedule | None = None, tmax: int = 500,
        eps: float = 1e-4, mode: str = "centralized", init: DualState | None = None,
        drop: Callable[[], bool] | None = None, keep_iterates: bool = True,
        check_decomposition: bool = True,
        callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None) -> IterationTrace:
    """Projected-subgradient iterations on the dual.

    Stops when the sup-norm multiplier change drops below ``eps`` or after
    ``tmax`` iterations. ``mode="distributed"`` routes every exchange through
    :mod:`comets.messages` between node workers; without drops it produces
    bitwise the same trace as the centralised mode.
    """
    problems = validate(scenario)
    if problems:
        raise ScenarioError("invalid scenario: " + "; ".join(map(str, problems)))
    if mode not in ("centralized", "distributed"):
        raise ValueError(f"unknown mode {mode!r}")
    if tmax < 1:
        raise ValueError("tmax must be >= 1")
    sched = schedule or StepSchedule()
    p = Problem(scenario)
    st = init.copy() if init is not None else p.zeros()
    mesh = None
    if mode == "distributed":
        mesh = _Mesh(p, drop)
        if init is not None:
            mesh.seen_lam1[:] = st.lam1[p.dst]
    trace = IterationTrace()
    for t in range(1, tmax + 1):
        t0 = time.perf_counter()
        if mesh is None:
            x, y, new, msgs, nbytes = _centralised_step(p, st, t, sched)
        else:
            x, y, new, msgs, nbytes = mesh.step(st, t, sched)
        if check_decomposition:
            g = dual_value(scenario, st, x, y, problem=p)
        else:
            g = sum(p.group_values(st, x, y))
        change = max(float(np.max(np.abs(new.lam1 - st.lam1), initial=0.0)),
                     float(np.max(np.abs(new.lam2 - st.lam2), initial=0.0)))
        trace.wall_ms.append((time.perf_counter() - t0) * 1e3)
        trace.g.append(g)
        trace.change.append(change)
        trace.messages += msgs
        trace.message_bytes += nbytes
        if keep_iterates:
            trace.xs.append(x)
            trace.ys.append(y)
        if callback is not None:
            callback(t, x, y)
        st = new
        if change < eps:
            trace.converged = True
            break
    if not keep_iterates:
        trace.xs.append(x)
        trace.ys.append(y)
    trace.final = st
    trace.uniqueness = uniqueness_report(p, st)
    log.debug("dual run: %d iterations, g=%.6f, converged=%s", len(trace), trace.g[-1], trace.converged)
    return trace
