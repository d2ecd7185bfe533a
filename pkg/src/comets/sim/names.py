"""Hierarchical content names and the packet kinds that carry them."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class NameFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Name:
    components: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise NameFormatError("a name needs at least one component")
        for c in self.components:
            if not c or "/" in c:
                raise NameFormatError(f"bad name component {c!r}")

    @classmethod
    def parse(cls, text: str) -> "Name":
        if not text.startswith("/"):
            raise NameFormatError(f"name must start with '/': {text!r}")
        return cls(tuple(text[1:].split("/")))

    def __str__(self) -> str:
        return "/" + "/".join(self.components)

    def field(self, key: str) -> str | None:
        """Value of the first ``key=value`` component, if any."""
        prefix = key + "="
        for c in self.components:
            if c.startswith(prefix):
                return c[len(prefix):]
        return None

    @property
    def chunk(self) -> int | None:
        v = self.field("chunk")
        return int(v) if v not in (None, "") else None

    def without_nonce(self) -> "Name":
        return Name(tuple(c for c in self.components if not c.startswith("nonce=")))


def range_interest(title: str, seq: int, nonce: int | None = None) -> Name:
    comps = ["ndn", "video", title, "RangeInterest", f"chunk={seq}"]
    if nonce is not None:
        comps.append(f"nonce={nonce}")
    return Name(tuple(comps))


def video_data(title: str, resolution: str, seq: int | None) -> Name:
    """``/ndn/video/<title>/<res>/chunk=<seq>``; ``seq=None`` gives the open prefix ``chunk=``."""
    last = "chunk=" if seq is None else f"chunk={seq}"
    return Name(("ndn", "video", title, resolution, last))


def opt_report(forwarder: str, version: int) -> Name:
    return Name(("ndn", "opt", "report", f"forwarder={forwarder}", f"v={version}"))


def opt_config(forwarder: str, version: int) -> Name:
    return Name(("ndn", "opt", "config", f"forwarder={forwarder}", f"v={version}"))


def state_name(node: str, var: str, level: int | str, t: int) -> Name:
    return Name(("ndn", "comets", "state", "node", node, var, str(level), f"v={t}"))


class NackReason(str, Enum):
    CONGESTION = "CONGESTION"
    VERSION_OUTDATED = "VERSION_OUTDATED"
    RECOMMEND_RESOLUTION = "RECOMMEND_RESOLUTION"


@dataclass
class RangeInterest:
    name: Name
    client: str
    levels: tuple[int, ...]
    weight: float
    size: int = 100


@dataclass
class Interest:
    name: Name
    size: int = 100
    prefetch: bool = False


@dataclass
class Data:
    name: Name
    size: int
    authentic: bool = True


@dataclass
class Nack:
    reason: NackReason
    recommended: Name | None = None
    level: int | None = None  # 1-based level the recommendation points at
    size: int = 100
    name: Name = field(default_factory=lambda: Name(("nack",)))

    def __post_init__(self) -> None:
        if (self.reason is NackReason.RECOMMEND_RESOLUTION) != (self.recommended is not None):
            raise ValueError("only RECOMMEND_RESOLUTION nacks carry a recommended name")


Packet = RangeInterest | Interest | Data | Nack
