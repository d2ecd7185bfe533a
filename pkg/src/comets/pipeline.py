"""Dual iterations followed by integer reconstruction, with bookkeeping.

The reconstruction pass is applied to every iterate; the best feasible point
seen so far is kept as the incumbent. The dual bound reported is the best
(smallest) dual value seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dual import DualState, IterationTrace, StepSchedule, run
from .milp import objective
from .reconstruct import ReconstructionResult, reconstruct
from .network import Scenario


@dataclass
class OptimizeResult:
    trace: IterationTrace
    best: ReconstructionResult
    z_tilde: float
    best_iteration: int
    z_history: list[float] = field(default_factory=list)

    @property
    def g_best(self) -> float:
        return min(self.trace.g)

    @property
    def g_final(self) -> float:
        return self.trace.g[-1]

    @property
    def gap(self) -> float:
        """Relative duality gap ``(g - Z~) / g`` against the best dual bound."""
        g = self.g_best
        return (g - self.z_tilde) / g if g > 0 else 0.0

    def levels(self, scenario: Scenario) -> dict[str, int | None]:
        return self.best.levels(scenario)


def optimize(scenario: Scenario, schedule: StepSchedule | None = None, tmax: int = 500,
             eps: float = 1e-4, mode: str = "centralized", init: DualState | None = None,
             drop: Callable[[], bool] | None = None, keep_iterates: bool = False) -> OptimizeResult:
    best: dict = {"z": -np.inf}
    history: list[float] = []

    def on_iterate(t: int, x: np.ndarray, y: np.ndarray) -> None:
        rec = reconstruct(scenario, x, y)
        z = objective(scenario, rec.x)
        history.append(z)
        if z > best["z"]:
            best.update(z=z, rec=rec, t=t)

    trace = run(scenario, schedule, tmax=tmax, eps=eps, mode=mode, init=init, drop=drop,
                keep_iterates=keep_iterates, callback=on_iterate)
    return OptimizeResult(trace, best["rec"], float(best["z"]), best["t"], history)
