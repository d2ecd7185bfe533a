"""Per-node protocol state: links, PIT, content store, client windows.

These pieces are plain state machines; the event engine drives them.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

from ..network import AimdParams
from .names import Data, Nack, NackReason, Name, video_data


class Link:
    """One direction of an edge: FIFO serialisation at ``capacity`` Mbps, then propagation."""

    def __init__(self, src: str, dst: str, capacity_mbps: float, delay: float) -> None:
        self.src, self.dst = src, dst
        self.rate = capacity_mbps * 1e6 / 8.0  # bytes per second
        self.delay = delay
        self.busy_until = 0.0

    @property
    def label(self) -> str:
        return f"{self.src}>{self.dst}"

    def queue_delay(self, now: float) -> float:
        return max(0.0, self.busy_until - now)

    def queued_bytes(self, now: float) -> float:
        return self.queue_delay(now) * self.rate

    def schedule(self, now: float, size: int) -> tuple[float, float]:
        """Reserve the wire; returns (start of transmission, arrival at the far end)."""
        start = max(now, self.busy_until)
        self.busy_until = start + size / self.rate
        return start, self.busy_until + self.delay


# --------------------------------------------------------------------------
# PIT and content store


class PitOutcome(str, Enum):
    FORWARDED = "Forwarded"
    AGGREGATED = "Aggregated"
    RETRANSMITTED = "Retransmitted"
    SUPPRESSED = "Suppressed"


@dataclass
class PitEntry:
    faces: list[str]
    expiry: float
    forwarded_at: float = 0.0


class Pit:
    def __init__(self, lifetime: float, suppression: float = 0.0) -> None:
        self.lifetime = lifetime
        self.suppression = suppression  # min spacing between upstream copies of one name
        self.entries: dict[Name, PitEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, name: Name, now: float) -> PitEntry | None:
        e = self.entries.get(name)
        if e is not None and e.expiry <= now:
            del self.entries[name]
            return None
        return e

    def pop(self, name: Name, now: float) -> PitEntry | None:
        e = self.get(name, now)
        if e is not None:
            del self.entries[name]
        return e


def pit_insert_or_aggregate(pit: Pit, name: Name, face: str, now: float) -> PitOutcome:
    """Record ``face`` as waiting for ``name``.

    A repeat from a face already waiting is a retransmission: the entry is
    refreshed and the caller forwards again, unless the previous upstream
    copy went out less than ``pit.suppression`` seconds ago.
    """
    entry = pit.get(name, now)
    if entry is None:
        pit.entries[name] = PitEntry([face], now + pit.lifetime, now)
        return PitOutcome.FORWARDED
    if face in entry.faces:
        entry.expiry = now + pit.lifetime
        if now - entry.forwarded_at < pit.suppression:
            return PitOutcome.SUPPRESSED
        entry.forwarded_at = now
        return PitOutcome.RETRANSMITTED
    entry.faces.append(face)
    entry.expiry = max(entry.expiry, now + pit.lifetime)
    return PitOutcome.AGGREGATED


class ContentStore:
    """LRU cache keyed by data name, bounded by entry count."""

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self._items: OrderedDict[Name, Data] = OrderedDict()

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, name: Name) -> bool:
        return name in self._items

    def lookup(self, name: Name) -> Data | None:
        d = self._items.get(name)
        if d is not None:
            self._items.move_to_end(name)
        return d

    def insert(self, data: Data) -> None:
        if self.capacity <= 0:
            return
        self._items[data.name] = data
        self._items.move_to_end(data.name)
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)


# --------------------------------------------------------------------------
# forwarder


@dataclass
class ForwarderRuntime:
    node: str
    depth: int
    pit: Pit
    cache: ContentStore
    faces: dict[str, Link] = field(default_factory=dict)  # downstream neighbour -> egress link
    assignments: dict[str, int] = field(default_factory=dict)  # client -> current 1-based level
    supported: dict[str, tuple[int, ...]] = field(default_factory=dict)
    level_names: tuple[str, ...] = ()
    title: str = "v1"
    threshold: float = 0.050
    last_backpressure: dict[str, float] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0


def backpressure_check(rt: ForwarderRuntime, face: str, now: float) -> Nack | None:
    """NACK for ``face`` when its egress queue delay exceeds the threshold.

    The NACK recommends the next supported level below the current assignment,
    or is a bare CONGESTION NACK when the client is already at its floor.
    """
    link = rt.faces.get(face)
    if link is None or link.queue_delay(now) <= rt.threshold:
        return None
    cur = rt.assignments.get(face)
    lower = [lv for lv in rt.supported.get(face, ()) if cur is not None and lv < cur]
    if cur is None or not lower:
        return Nack(NackReason.CONGESTION)
    lv = max(lower)
    return Nack(NackReason.RECOMMEND_RESOLUTION, video_data(rt.title, rt.level_names[lv - 1], None), lv)


# --------------------------------------------------------------------------
# client


class TimeoutAction(str, Enum):
    RETRANSMIT = "retransmit"
    SUPPRESS = "suppress"


@dataclass
class Outstanding:
    seq: int
    name: Name
    first_sent: float
    sent: float
    attempts: int = 0  # retransmissions so far
    token: int = 0


MAX_RETX = 2


class Aimd:
    def __init__(self, p: AimdParams) -> None:
        self.p = p
        self.window = int(p.initial)
        self._acked = 0

    def on_success(self) -> None:
        self._acked += 1
        if self._acked >= self.window:
            self._acked = 0
            self.window = min(self.p.maximum, self.window + 1)

    def on_congestion(self) -> None:
        self._acked = 0
        self.window = max(self.p.minimum, int(math.floor(self.window * self.p.decrease)))


@dataclass
class ClientRuntime:
    client: str
    supported: tuple[int, ...]
    weight: float
    aimd: Aimd
    total_chunks: int
    level: int | None = None
    next_seq: int = 0
    outstanding: dict[int, Outstanding] = field(default_factory=dict)
    deferred: list[int] = field(default_factory=list)
    downgrade_pending: bool = False
    downgraded: bool = False
    received: set[int] = field(default_factory=set)
    skipped: list[int] = field(default_factory=list)
    buffer: float = 0.0
    buffer_t: float = 0.0
    playing: bool = False
    first_request: float | None = None
    startup: float | None = None
    srtt: float | None = None
    next_send_ok: float = 0.0
    wake_pending: bool = False
    nonce: int = 0

    @property
    def finished(self) -> bool:
        return len(self.received) + len(self.skipped) >= self.total_chunks

    def drain(self, now: float) -> None:
        """Advance playback to ``now``."""
        if self.playing:
            self.buffer = max(0.0, self.buffer - (now - self.buffer_t))
            if self.buffer == 0.0 and not self.finished:
                self.playing = False
        self.buffer_t = now

    def rto(self, min_rto: float, initial_rtt: float) -> float:
        return max(min_rto, 4.0 * (self.srtt if self.srtt is not None else initial_rtt))

    def on_rtt(self, sample: float) -> None:
        self.srtt = sample if self.srtt is None else 0.875 * self.srtt + 0.125 * sample


def client_on_timeout(rt: ClientRuntime, seq: int) -> TimeoutAction:
    """Retransmit while attempts remain, otherwise give the chunk up until the next interval.

    Either way the window backs off.
    """
    o = rt.outstanding[seq]
    rt.aimd.on_congestion()
    if o.attempts < MAX_RETX:
        o.attempts += 1
        return TimeoutAction.RETRANSMIT
    del rt.outstanding[seq]
    rt.downgrade_pending = True
    rt.deferred.append(seq)
    return TimeoutAction.SUPPRESS
