"""Discrete-event simulation of range-interest video delivery.

One event loop with a total order on (time, sequence number). All randomness
(link loss, multiplier-message loss) comes from generators seeded by the
scenario seed and consumed in event order, so a run is a pure function of
(scenario, seed, loss rate, mode).
"""

from __future__ import annotations

import csv
import heapq
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..dual import StepSchedule
from ..messages import message_size
from ..metrics import ClientTrace, MetricsReport, build_report
from ..network import (
    NetworkGraph,
    NodeRole,
    Scenario,
    ScenarioError,
    UserProfile,
    compute_depths,
    validate,
)
from ..pipeline import optimize
from .names import (
    Data,
    Interest,
    Nack,
    NackReason,
    Name,
    RangeInterest,
    opt_config,
    opt_report,
    range_interest,
    state_name,
    video_data,
)
from .runtime import (
    Aimd,
    ClientRuntime,
    ContentStore,
    ForwarderRuntime,
    Link,
    Outstanding,
    Pit,
    PitOutcome,
    TimeoutAction,
    backpressure_check,
    client_on_timeout,
    pit_insert_or_aggregate,
)

log = logging.getLogger(__name__)

EVENT_FIELDS = ("time", "node", "kind", "name", "size")


@dataclass
class SimulationResult:
    report: MetricsReport
    events: list[tuple[float, str, str, str, int]]
    traces: list[ClientTrace]
    optimizer_ms: list[float] = field(default_factory=list)
    optimizer_iterations: list[int] = field(default_factory=list)

    def events_csv(self) -> str:
        return events_to_csv(self.events)

    def traces_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["client", "chunk", "arrival_s", "requested_s", "level", "resolution", "buffer_s"])
        for t in self.traces:
            for i in range(len(t.arrivals)):
                w.writerow([t.client, t.chunks[i], f"{t.arrivals[i]:.9f}", f"{t.requested[i]:.9f}",
                            t.levels[i], t.level_names[i], f"{t.buffer_samples[i]:.9f}"])
        return buf.getvalue()


def events_to_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_FIELDS)
    for t, node, kind, name, size in events:
        w.writerow([f"{t:.9f}", node, kind, name, size])
    return buf.getvalue()


class Simulator:
    def __init__(self, scenario: Scenario, duration: float | None = None, seed: int | None = None,
                 loss_rate: float | None = None, mode: str | None = None) -> None:
        problems = validate(scenario)
        if problems:
            raise ScenarioError("; ".join(f"{v.kind} ({v.where})" for v in problems))
        sp = scenario.sim
        self.duration = sp.duration if duration is None else duration
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        self.seed = sp.seed if seed is None else seed
        self.loss = sp.loss_rate if loss_rate is None else loss_rate
        if not 0.0 <= self.loss < 1.0:
            raise ValueError("loss rate must lie in [0, 1)")
        self.mode = sp.mode if mode is None else mode
        if self.mode not in ("centralized", "distributed"):
            raise ValueError(f"unknown mode {self.mode!r}")

        self.sc = scenario
        self.sp = sp
        self.g: NetworkGraph = scenario.graph
        self.cat = scenario.catalog
        self.title = sp.title
        self.level_of = {n: i + 1 for i, n in enumerate(self.cat.names)}
        try:
            self.vmaf_ranges = {n: self.cat.vmaf_range(i + 1) for i, n in enumerate(self.cat.names)}
        except KeyError as exc:
            raise ScenarioError(exc.args[0]) from None
        self.chunk_bytes = [int(round(b * sp.chunk_duration * 1e6 / 8.0)) for b in self.cat.bandwidths]
        self.total_chunks = int(math.ceil(self.duration / sp.chunk_duration - 1e-9))
        self.depth = compute_depths(self.g)

        self.rng_link = np.random.default_rng([self.seed, 0])
        self.rng_ctrl = np.random.default_rng([self.seed, 1])
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.events: list[tuple[float, str, str, str, int]] = []

        self.links: dict[tuple[str, str], Link] = {}
        for e in self.g.edges:
            self.links[(e.src, e.dst)] = Link(e.src, e.dst, e.capacity, e.delay)
            self.links[(e.dst, e.src)] = Link(e.dst, e.src, e.capacity, e.delay)
        self.fib: dict[str, dict[int, str]] = {n: {} for n in self.g.node_ids}

        self.fwd: dict[str, ForwarderRuntime] = {}
        for n in self.g.node_ids:
            if self.g.roles[n] is NodeRole.USER:
                continue
            rt = ForwarderRuntime(n, self.depth[n], Pit(sp.pit_lifetime, sp.retx_suppression), ContentStore(sp.cache_capacity),
                                  level_names=tuple(self.cat.names), title=self.title,
                                  threshold=sp.backpressure_threshold)
            for k in self.g.downstream(n):
                rt.faces[k] = self.links[(n, k)]
            self.fwd[n] = rt

        self.clients: dict[str, ClientRuntime] = {}
        self.traces: dict[str, ClientTrace] = {}
        for u in self.g.users:
            prof = scenario.users[u]
            self.clients[u] = ClientRuntime(u, tuple(sorted(prof.supported_levels)), prof.weight,
                                            Aimd(sp.aimd), self.total_chunks)
            self.traces[u] = ClientTrace(u)
        self.agent = {u: self.g.upstream(u)[0] for u in self.g.users}
        self.known: dict[str, tuple[tuple[int, ...], float]] = {}
        self.last_level: dict[str, int] = {}
        self.unserved_total = 0
        self.optimizer_ms: list[float] = []
        self.optimizer_iterations: list[int] = []
        self._memo: dict[Any, Any] = {}
        self.version = 0

    # ------------------------------------------------------------------ core

    def at(self, t: float, fn: Callable, *args) -> None:
        heapq.heappush(self._heap, (t, self._seq, fn, args))
        self._seq += 1

    def record(self, node: str, kind: str, name: Any = "", size: int = 0, t: float | None = None) -> None:
        self.events.append((self.now if t is None else t, node, kind, str(name), int(size)))

    def send(self, a: str, b: str, pkt) -> None:
        link = self.links[(a, b)]
        start, arrive = link.schedule(self.now, pkt.size)
        self.record(link.label, "tx", pkt.name, pkt.size, t=start)
        if self.loss > 0 and self.rng_link.random() < self.loss:
            self.record(link.label, "drop", pkt.name, pkt.size, t=start)
            return
        self.at(arrive, self.deliver, b, a, pkt)

    def deliver(self, node: str, face: str, pkt) -> None:
        role = self.g.roles[node]
        if role is NodeRole.USER:
            self.client_receive(node, pkt)
        elif isinstance(pkt, RangeInterest):
            self.on_range_interest(node, pkt)
        elif isinstance(pkt, Interest):
            self.on_interest(node, face, pkt)
        elif isinstance(pkt, Data):
            self.on_data(node, face, pkt)

    def run(self) -> SimulationResult:
        horizon = 10.0 * self.duration + 60.0
        self.at(0.0, self.epoch, 0)
        while self._heap:
            t, _, fn, args = heapq.heappop(self._heap)
            if t > horizon:
                log.warning("simulation stopped at horizon %.1f s", horizon)
                break
            self.now = t
            fn(*args)
        return self._result()

    # ------------------------------------------------------------ control

    def _needed(self, c: ClientRuntime) -> int:
        return min([c.next_seq, *c.deferred]) if c.deferred else c.next_seq

    def epoch(self, k: int) -> None:
        active = [u for u, c in self.clients.items() if not c.finished]
        if not active:
            return
        for u in active:
            c = self.clients[u]
            c.nonce += 1
            pkt = RangeInterest(range_interest(self.title, self._needed(c), c.nonce), u, c.supported,
                                c.weight, self.sp.interest_size)
            self.record(u, "range_interest", pkt.name, pkt.size)
            self.send(u, self.agent[u], pkt)
        self.at(self.now + self.sp.control_delay, self.adapt, k)
        self.at(self.now + self.sp.interval, self.epoch, k + 1)

    def on_range_interest(self, node: str, pkt: RangeInterest) -> None:
        self.known[pkt.client] = (pkt.levels, pkt.weight)
        self.fwd[node].supported[pkt.client] = pkt.levels

    def _offered(self, u: str) -> tuple[int, ...]:
        c = self.clients[u]
        levels = self.known[u][0]
        if c.downgrade_pending and c.level is not None:
            lower = tuple(lv for lv in levels if lv < c.level)
            return lower or (min(levels),)
        return levels

    def _sub_scenario(self, users: list[str]) -> Scenario:
        keep = set(users)
        roles = {n: r.value for n, r in self.g.roles.items() if r is not NodeRole.USER or n in keep}
        edges = [e for e in self.g.edges if e.src in roles and e.dst in roles]
        # forwarders stranded without any downstream user still route; they just idle
        profiles = {u: UserProfile(u, self._offered(u), self.known[u][1]) for u in users}
        return Scenario(NetworkGraph(roles, edges), self.cat, profiles, self.sp)

    def _solve(self, sub: Scenario):
        key = tuple((u, p.supported_levels, p.weight) for u, p in sorted(sub.users.items()))
        stochastic = self.mode == "distributed" and self.loss > 0
        if not stochastic and key in self._memo:
            return self._memo[key]
        drop = (lambda: bool(self.rng_ctrl.random() < self.loss)) if stochastic else None
        t0 = time.perf_counter()
        res = optimize(sub, StepSchedule(self.sp.alpha0, self.sp.beta0), tmax=self.sp.tmax,
                       eps=self.sp.eps, mode=self.mode, drop=drop)
        self.optimizer_ms.append((time.perf_counter() - t0) * 1e3)
        self.optimizer_iterations.append(len(res.trace))
        if not stochastic:
            self._memo[key] = res
        return res

    def adapt(self, k: int) -> None:
        users = [u for u in self.g.users if u in self.known and not self.clients[u].finished]
        if not users:
            return
        self.version += 1
        sub = self._sub_scenario(users)
        agents = sorted({self.agent[u] for u in users}, key=self.g.index.get)
        if self.mode == "centralized":
            for f in agents:
                self.record(f, "report", opt_report(f, self.version), 16 * len(self.fwd[f].supported))
        res = self._solve(sub)
        sg = sub.graph
        if self.mode == "centralized":
            for f in agents:
                self.record(f, "config", opt_config(f, self.version), 8 * len(users))
        else:
            per_node = message_size(self.cat.L) * len(res.trace)
            for n in sg.node_ids:
                if sg.roles[n] is not NodeRole.SERVER:
                    self.record(n, "state", state_name(n, "lambda1", self.cat.L, len(res.trace)), per_node)

        y = res.best.y
        for n in sg.node_ids:
            for l in range(self.cat.L):
                for e in sg.in_edges(n):
                    if y[e, l] > 0:
                        self.fib[n][l + 1] = sg.edges[e].src
                        break

        chosen = res.levels(sub)
        for u in users:
            c = self.clients[u]
            lv = chosen.get(u)
            if lv is None:
                self.unserved_total += 1
                lv = min(self._offered(u))
            agent = self.agent[u]
            rt = self.fwd[agent]
            rt.assignments[u] = lv
            nack = Nack(NackReason.RECOMMEND_RESOLUTION, video_data(self.title, self.cat.names[lv - 1], None), lv)
            self.record(agent, "nack_recommend", nack.recommended, nack.size)
            self.send(agent, u, nack)
            if self.sp.prefetch and self.g.roles[agent] is NodeRole.FORWARDER:
                start = self._needed(c)
                ahead = int(math.ceil(self.sp.interval / self.sp.chunk_duration - 1e-9))
                for seq in range(start, min(start + ahead, self.total_chunks)):
                    # an entry for an unpublished chunk would expire before the data exists
                    if seq in c.received or self.published(seq) > self.now + self.sp.pit_lifetime / 2:
                        continue
                    name = video_data(self.title, self.cat.names[lv - 1], seq)
                    self.record(agent, "prefetch", name, self.sp.interest_size)
                    self.on_interest(agent, agent, Interest(name, self.sp.interest_size, prefetch=True))

    # ---------------------------------------------------------- forwarding

    def _upstream(self, node: str, level: int) -> str:
        return self.fib[node].get(level) or self.g.upstream(node)[0]

    def on_interest(self, node: str, face: str, pkt: Interest) -> None:
        rt = self.fwd[node]
        name = pkt.name
        level = self.level_of[name.components[3]]
        if self.g.roles[node] is NodeRole.SERVER:
            data = Data(name, self.chunk_bytes[level - 1], authentic=True)
            wait = self.published(name.chunk) - self.now
            if wait > 0:
                self.at(self.published(name.chunk), self._produce, node, face, data)
            else:
                self._produce(node, face, data)
            return
        hit = rt.cache.lookup(name)
        if hit is not None:
            rt.hits += 1
            self.record(node, "cache_hit", name, hit.size)
            if face != node:
                self._to_face(node, face, hit)
            return
        outcome = pit_insert_or_aggregate(rt.pit, name, face, self.now)
        if outcome is PitOutcome.AGGREGATED:
            self.record(node, "aggregate", name, pkt.size)
            return
        if outcome is PitOutcome.SUPPRESSED:
            self.record(node, "retx_suppressed", name, pkt.size)
            return
        if outcome is PitOutcome.FORWARDED:
            rt.misses += 1
        self.record(node, "forward" if outcome is PitOutcome.FORWARDED else "retx_forward", name, pkt.size)
        self.send(node, self._upstream(node, level), Interest(name, pkt.size, pkt.prefetch))

    def published(self, seq: int) -> float:
        return seq * self.sp.chunk_duration if self.sp.live else 0.0

    def _produce(self, node: str, face: str, data: Data) -> None:
        self.record(node, "produce", data.name, data.size)
        if face != node:
            self._to_face(node, face, data)

    def on_data(self, node: str, face: str, data: Data) -> None:
        rt = self.fwd[node]
        entry = rt.pit.pop(data.name, self.now)
        if entry is None:
            self.record(node, "unsolicited", data.name, data.size)
            return
        rt.cache.insert(data)
        for f in entry.faces:
            if f == node:
                self.record(node, "prefetch_stored", data.name, data.size)
            else:
                self._to_face(node, f, data)

    def _to_face(self, node: str, face: str, data: Data) -> None:
        nack = None
        if self.g.roles[face] is NodeRole.USER:
            rt = self.fwd[node]
            last = rt.last_backpressure.get(face)
            if last is None or self.now - last >= self.sp.interval:
                nack = backpressure_check(rt, face, self.now)
        self.record(node, "deliver", data.name, data.size)
        self.send(node, face, data)
        if nack is None:
            return
        rt.last_backpressure[face] = self.now
        if nack.level is not None:
            rt.assignments[face] = nack.level
        self.record(node, "nack_backpressure", nack.recommended or nack.reason.value, nack.size)
        self.send(node, face, nack)

    # -------------------------------------------------------------- client

    def client_receive(self, u: str, pkt) -> None:
        c = self.clients[u]
        if isinstance(pkt, Nack):
            self.on_client_nack(c, pkt)
        elif isinstance(pkt, Data):
            self.on_client_data(c, pkt)

    def on_client_nack(self, c: ClientRuntime, nack: Nack) -> None:
        if nack.reason is NackReason.CONGESTION:
            c.aimd.on_congestion()
            self.record(c.client, "congestion", nack.reason.value, nack.size)
            return
        if nack.reason is not NackReason.RECOMMEND_RESOLUTION:
            return
        new = nack.level
        if c.downgrade_pending:
            if c.level is not None and new >= c.level:
                # nothing lower to fall back to: give the stuck chunks up
                for seq in sorted(c.deferred):
                    c.skipped.append(seq)
                    self.traces[c.client].skipped.append(seq)
                    self.record(c.client, "skip", video_data(self.title, self.cat.names[new - 1], seq))
                c.deferred.clear()
            c.downgraded = True
            self.traces[c.client].downgraded = True
            c.downgrade_pending = False
        c.level = new
        self.record(c.client, "level", nack.recommended, new)
        self.try_send(c)

    def on_client_data(self, c: ClientRuntime, data: Data) -> None:
        if not data.authentic:
            self.record(c.client, "reject", data.name, data.size)
            return
        seq = data.name.chunk
        o = c.outstanding.pop(seq, None)
        if o is None:
            if seq in c.deferred and seq not in c.received:
                c.deferred.remove(seq)
                first = self.now
            else:
                self.record(c.client, "duplicate", data.name, data.size)
                return
        else:
            first = o.first_sent
            if o.attempts == 0:
                c.on_rtt(self.now - o.sent)
            c.aimd.on_success()
        c.drain(self.now)
        c.buffer += self.sp.chunk_duration
        c.received.add(seq)
        lv = self.level_of[data.name.components[3]]
        tr = self.traces[c.client]
        tr.arrivals.append(self.now)
        tr.requested.append(first)
        tr.chunks.append(seq)
        tr.levels.append(lv)
        tr.level_names.append(self.cat.names[lv - 1])
        tr.heights.append(self.cat.heights[lv - 1])
        tr.buffer_samples.append(c.buffer)
        self.record(c.client, "arrival", data.name, data.size)
        if not c.playing and (c.buffer >= self.sp.startup_threshold or c.finished):
            c.playing = True
            if c.startup is None:
                c.startup = self.now - (c.first_request if c.first_request is not None else 0.0)
                tr.startup = c.startup
                self.record(c.client, "playback_start", "", 0)
        self.try_send(c)

    def _wake(self, c: ClientRuntime, t: float) -> None:
        if c.wake_pending:
            return
        c.wake_pending = True
        self.at(t, self._on_wake, c.client)

    def _on_wake(self, u: str) -> None:
        c = self.clients[u]
        c.wake_pending = False
        self.try_send(c)

    def try_send(self, c: ClientRuntime) -> None:
        if c.level is None or c.finished:
            return
        c.drain(self.now)
        cd = self.sp.chunk_duration
        while True:
            queue = [] if c.downgrade_pending else sorted(c.deferred)
            if queue:
                seq = queue[0]
            else:
                while c.next_seq < c.total_chunks and (c.next_seq in c.received or c.next_seq in c.outstanding):
                    c.next_seq += 1
                if c.next_seq >= c.total_chunks:
                    return
                seq = c.next_seq
            if len(c.outstanding) >= c.aimd.window:
                return
            ahead = c.buffer + cd * len(c.outstanding)
            if ahead + cd > self.sp.max_buffer + 1e-12:
                if c.playing:
                    self._wake(c, self.now + (ahead + cd - self.sp.max_buffer))
                return
            ready = max(c.next_send_ok, self.published(seq))
            if self.now < ready - 1e-12:
                self._wake(c, ready)
                return
            if queue:
                c.deferred.remove(seq)
            else:
                c.next_seq += 1
            self._request(c, seq)

    def _request(self, c: ClientRuntime, seq: int) -> None:
        name = video_data(self.title, self.cat.names[c.level - 1], seq)
        if c.first_request is None:
            c.first_request = self.now
        o = Outstanding(seq, name, self.now, self.now)
        c.outstanding[seq] = o
        self.record(c.client, "request", name, self.sp.interest_size)
        self._emit(c, o)
        access = self.links[(self.agent[c.client], c.client)]
        c.next_send_ok = self.now + self.chunk_bytes[c.level - 1] / access.rate

    def _emit(self, c: ClientRuntime, o: Outstanding) -> None:
        o.token += 1
        o.sent = self.now
        level = self.level_of[o.name.components[3]]
        self.send(c.client, self._upstream(c.client, level), Interest(o.name, self.sp.interest_size))
        access = self.links[(self.agent[c.client], c.client)]
        serial = self.chunk_bytes[level - 1] / access.rate
        base = c.rto(self.sp.min_rto, self.sp.initial_rtt + serial)
        self.at(self.now + base * (2 ** o.attempts), self.on_timeout, c.client, o.seq, o.token)

    def on_timeout(self, u: str, seq: int, token: int) -> None:
        c = self.clients[u]
        o = c.outstanding.get(seq)
        if o is None or o.token != token:
            return
        action = client_on_timeout(c, seq)
        if action is TimeoutAction.RETRANSMIT:
            self.record(u, "retransmit", o.name, self.sp.interest_size)
            self._emit(c, o)
        else:
            self.record(u, "suppress", o.name, 0)
        self.try_send(c)

    # -------------------------------------------------------------- output

    def _result(self) -> SimulationResult:
        traces = [self.traces[u] for u in self.g.users]
        for u in self.g.users:
            c = self.clients[u]
            self.traces[u].downgraded = c.downgraded or c.downgrade_pending
        tiers: dict[int, list[int]] = {}
        for rt in self.fwd.values():
            if self.g.roles[rt.node] is NodeRole.FORWARDER:
                h, m = tiers.setdefault(rt.depth, [0, 0])
                tiers[rt.depth] = [h + rt.hits, m + rt.misses]
        hit_ratio = {str(d): (h / (h + m) if h + m else 0.0) for d, (h, m) in sorted(tiers.items())}
        upstream: dict[tuple[str, str], int] = {}
        for _, node, kind, name, _ in self.events:
            if kind == "forward":
                upstream[(node, name)] = upstream.get((node, name), 0) + 1
        complete = sum(1 for c in self.clients.values() if len(c.received) == c.total_chunks)
        extra = {
            "mode": self.mode,
            "seed": self.seed,
            "loss_rate": self.loss,
            "duration_s": self.duration,
            "total_chunks": self.total_chunks,
            "clients_complete": complete,
            "clients_downgraded": sum(1 for t in traces if t.downgraded),
            "chunks_skipped": sum(len(t.skipped) for t in traces),
            "cache_hit_ratio_by_depth": hit_ratio,
            "max_upstream_interests_per_name": max(upstream.values(), default=0),
            "optimizer_runs": len(self.optimizer_iterations),
            "end_time_s": self.now,
        }
        report = build_report(traces, self.seed, self.now, self.unserved_total, extra, self.vmaf_ranges)
        return SimulationResult(report, self.events, traces, list(self.optimizer_ms),
                                list(self.optimizer_iterations))


def run_simulation(scenario: Scenario, duration: float | None = None, seed: int | None = None,
                   loss_rate: float | None = None, mode: str | None = None) -> SimulationResult:
    return Simulator(scenario, duration, seed, loss_rate, mode).run()


def check_link_capacity(events, scenario: Scenario, tol: float = 1e-9) -> list[str]:
    """Links whose logged transmissions overlap, i.e. exceed the configured rate."""
    rates = {}
    for e in scenario.graph.edges:
        r = e.capacity * 1e6 / 8.0
        rates[f"{e.src}>{e.dst}"] = r
        rates[f"{e.dst}>{e.src}"] = r
    by_link: dict[str, list[tuple[float, int]]] = {}
    for t, node, kind, _, size in events:
        if kind == "tx":
            by_link.setdefault(node, []).append((t, size))
    bad = []
    for label, txs in by_link.items():
        txs.sort()
        end = -math.inf
        for t, size in txs:
            if t < end - tol:
                bad.append(label)
                break
            end = t + size / rates[label]
    return bad
