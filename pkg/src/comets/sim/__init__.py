"""Packet-level simulation of the delivery protocol."""

from .engine import SimulationResult, Simulator, check_link_capacity, events_to_csv, run_simulation
from .names import (
    Data,
    Interest,
    Nack,
    NackReason,
    Name,
    NameFormatError,
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

__all__ = [
    "Aimd", "ClientRuntime", "ContentStore", "Data", "ForwarderRuntime", "Interest", "Link", "Nack",
    "NackReason", "Name", "NameFormatError", "Outstanding", "Pit", "PitOutcome", "RangeInterest",
    "SimulationResult", "Simulator", "TimeoutAction", "backpressure_check", "check_link_capacity",
    "client_on_timeout", "events_to_csv", "opt_config", "opt_report", "pit_insert_or_aggregate",
    "range_interest", "run_simulation", "state_name", "video_data",
]
