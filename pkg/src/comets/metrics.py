"""Quality-of-experience metrics computed from per-client traces."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .network import DEFAULT_VMAF

QOE_WEIGHTS = (0.4, 0.2, 0.15, 0.15, 0.1)
SCHEMA_VERSION = 1


def vmaf_for_level(level: str, seed: int, chunk: int = 0,
                   ranges: Mapping[str, tuple[float, float]] | None = None) -> float:
    """Seeded uniform draw inside the VMAF range of ``level``.

    The draw depends only on ``(level, seed, chunk)``, never on call order.
    """
    table = DEFAULT_VMAF if ranges is None else ranges
    if level not in table:
        raise KeyError(f"no VMAF range for level {level!r}")
    lo, hi = table[level]
    tag = int.from_bytes(hashlib.sha256(level.encode()).digest()[:8], "little")
    rng = np.random.default_rng([int(seed), int(chunk), tag])
    return float(lo + (hi - lo) * rng.random())


def rfc3550_jitter(deviations: Sequence[float]) -> list[float]:
    """Running interarrival jitter ``J(i) = J(i-1) + (|D(i)| - J(i-1)) / 16`` from ``J(0) = 0``."""
    out = []
    j = 0.0
    for d in deviations:
        j = j + (abs(d) - j) / 16.0
        out.append(j)
    return out


def transit_deviations(sent: Sequence[float], arrived: Sequence[float]) -> list[float]:
    """``D(i-1, i)`` as the difference of successive relative transit times."""
    transit = [r - s for s, r in zip(sent, arrived)]
    return [b - a for a, b in zip(transit, transit[1:])]


def jain_index(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("jain index needs at least one value")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        raise ValueError("jain index undefined for an all-zero allocation")
    return float(x.sum()) ** 2 / (x.size * sq)


def composite_qoe(vmaf: float, fairness: float, buffer: float, jitter: float,
                  startup: float) -> float:
    """Weighted score over inputs already normalised to ``[0, 1]``."""
    terms = {"vmaf": vmaf, "fairness": fairness, "buffer": buffer, "jitter": jitter,
             "startup": startup}
    for k, v in terms.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{k}={v} outside [0, 1]")
    w = QOE_WEIGHTS
    s = w[0] * vmaf + w[1] * fairness + w[2] * buffer + w[3] * (1 - jitter) + w[4] * (1 - startup)
    return max(0.0, s)


def normalise(vmaf: float, buffer_s: float, jitter_ms: float, startup_s: float) -> dict[str, float]:
    return {
        "vmaf": min(max(vmaf, 0.0), 100.0) / 100.0,
        "buffer": min(max(buffer_s, 0.0), 10.0) / 10.0,
        "jitter": min(max(jitter_ms, 0.0), 100.0) / 100.0,
        "startup": min(max(startup_s, 0.0), 3.0) / 3.0,
    }


@dataclass
class ClientTrace:
    client: str
    arrivals: list[float] = field(default_factory=list)
    requested: list[float] = field(default_factory=list)  # first request time per delivered chunk
    chunks: list[int] = field(default_factory=list)
    levels: list[int] = field(default_factory=list)
    level_names: list[str] = field(default_factory=list)
    heights: list[int] = field(default_factory=list)
    buffer_samples: list[float] = field(default_factory=list)
    startup: float | None = None
    downgraded: bool = False
    skipped: list[int] = field(default_factory=list)

    def check(self) -> None:
        if any(b < a for a, b in zip(self.arrivals, self.arrivals[1:])):
            raise ValueError(f"{self.client}: arrival times out of order")
        if any(b < 0 for b in self.buffer_samples):
            raise ValueError(f"{self.client}: negative buffer sample")


@dataclass
class ClientMetrics:
    client: str
    chunks: int
    mean_vmaf: float
    p95_vmaf: float
    mean_interarrival_ms: float
    p95_interarrival_ms: float
    jitter_ms: float
    startup_s: float
    mean_buffer_s: float
    mean_height: float
    downgraded: bool
    skipped: int


@dataclass
class MetricsReport:
    clients: list[ClientMetrics]
    jain: float
    composite_qoe: float
    unserved: int
    mean_interarrival_ms: float
    extra: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clients"] = [asdict(c) for c in self.clients]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pct(a: np.ndarray, q: float) -> float:
    return float(np.percentile(a, q)) if a.size else 0.0


def summarise_client(trace: ClientTrace, seed: int, horizon: float,
                     vmaf_ranges: Mapping[str, tuple[float, float]] | None = None) -> ClientMetrics:
    """Per-client statistics; a client that never started counts ``horizon`` as its startup."""
    trace.check()
    vm = np.array([vmaf_for_level(n, seed, c, vmaf_ranges)
                   for n, c in zip(trace.level_names, trace.chunks)])
    ia = np.diff(np.asarray(trace.arrivals)) * 1e3
    dev = transit_deviations(trace.requested, trace.arrivals)
    jit = rfc3550_jitter(dev)
    return ClientMetrics(
        client=trace.client,
        chunks=len(trace.arrivals),
        mean_vmaf=float(vm.mean()) if vm.size else 0.0,
        p95_vmaf=_pct(vm, 95),
        mean_interarrival_ms=float(ia.mean()) if ia.size else 0.0,
        p95_interarrival_ms=_pct(ia, 95),
        jitter_ms=jit[-1] * 1e3 if jit else 0.0,
        startup_s=trace.startup if trace.startup is not None else horizon,
        mean_buffer_s=float(np.mean(trace.buffer_samples)) if trace.buffer_samples else 0.0,
        mean_height=float(np.mean(trace.heights)) if trace.heights else 0.0,
        downgraded=trace.downgraded,
        skipped=len(trace.skipped),
    )


def build_report(traces: Sequence[ClientTrace], seed: int, horizon: float, unserved: int = 0,
                 extra: dict | None = None,
                 vmaf_ranges: Mapping[str, tuple[float, float]] | None = None) -> MetricsReport:
    clients = [summarise_client(t, seed, horizon, vmaf_ranges) for t in traces]
    heights = [c.mean_height for c in clients]
    fair = jain_index(heights) if any(h > 0 for h in heights) else 0.0
    if clients:
        norm = normalise(
            float(np.mean([c.mean_vmaf for c in clients])),
            float(np.mean([c.mean_buffer_s for c in clients])),
            float(np.mean([c.jitter_ms for c in clients])),
            float(np.mean([c.startup_s for c in clients])),
        )
        qoe = composite_qoe(norm["vmaf"], fair, norm["buffer"], norm["jitter"], norm["startup"])
    else:
        qoe = 0.0
    gaps = np.concatenate([np.diff(t.arrivals) for t in traces]) if traces else np.zeros(0)
    return MetricsReport(
        clients=clients,
        jain=fair,
        composite_qoe=qoe,
        unserved=unserved,
        mean_interarrival_ms=float(gaps.mean() * 1e3) if gaps.size else 0.0,
        extra=dict(extra or {}),
    )
