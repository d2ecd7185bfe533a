"""Bit-exact wire format for per-node multiplier exchange.

Layout (little-endian): ``uint32 node_id | uint32 iteration | float64 * L``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

HEADER = struct.Struct("<II")


class MessageError(ValueError):
    pass


@dataclass(frozen=True)
class MultiplierMessage:
    node_id: int
    iteration: int
    values: tuple[float, ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MultiplierMessage):
            return NotImplemented
        # bitwise comparison so that NaN payloads and signed zeros round-trip
        return (self.node_id == other.node_id and self.iteration == other.iteration
                and np.array(self.values, "<f8").tobytes() == np.array(other.values, "<f8").tobytes())

    def __hash__(self) -> int:
        return hash((self.node_id, self.iteration, np.array(self.values, "<f8").tobytes()))


def message_size(levels: int) -> int:
    return HEADER.size + 8 * levels


def encode_message(node_id: int, iteration: int, values) -> bytes:
    vals = np.ascontiguousarray(values, dtype="<f8").reshape(-1)
    if vals.size < 1:
        raise MessageError("at least one value is required")
    if not (0 <= node_id < 2**32 and 0 <= iteration < 2**32):
        raise MessageError("node id and iteration must fit in uint32")
    return HEADER.pack(node_id, iteration) + vals.tobytes()


def decode_message(buf: bytes, levels: int | None = None) -> MultiplierMessage:
    """Parse a message; ``levels`` pins the expected value count when known."""
    n = len(buf)
    if levels is not None:
        if n != message_size(levels):
            kind = "truncated" if n < message_size(levels) else "over-long"
            raise MessageError(f"{kind} buffer: {n} bytes, expected {message_size(levels)}")
    elif n < message_size(1) or (n - HEADER.size) % 8:
        raise MessageError(f"malformed buffer length {n}")
    node_id, iteration = HEADER.unpack_from(buf, 0)
    vals = np.frombuffer(buf, dtype="<f8", offset=HEADER.size)
    return MultiplierMessage(node_id, iteration, tuple(float(v) for v in vals))


def decode_values(buf: bytes, levels: int) -> tuple[int, int, np.ndarray]:
    """Fast path for the optimizer: returns ``(node_id, iteration, values)``."""
    if len(buf) != message_size(levels):
        raise MessageError(f"bad buffer length {len(buf)}")
    node_id, iteration = HEADER.unpack_from(buf, 0)
    return node_id, iteration, np.frombuffer(buf, dtype="<f8", offset=HEADER.size).copy()
