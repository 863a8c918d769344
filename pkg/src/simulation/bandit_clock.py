"""
Multi-parameter time change from local-time ledgers.

allocate() runs the round-robin quantum scheme: every unit's clock runs in
turn until its weighted local time L_i / alpha_i reaches the current level,
then the level is raised by one quantum. solve_time_equations() is the
independent oracle: it bisects the common level of the equation system
sum(s_i) = t, L_i(s_i) / alpha_i equal across i.

All clocks are kept as integer step counts so budget conservation is exact.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..utils.exceptions import LedgerStarvationError
from .edge_dynamics import LocalTimeLedger

logger = logging.getLogger(__name__)

BISECTION_ITERATIONS = 64
MAX_DOUBLINGS = 200
# Flats shorter than this many steps are grid noise
FLAT_STEPS = 2


class SolveStatus(str, Enum):
    """Outcome of solve_time_equations."""

    SOLVED = "solved"
    INFEASIBLE = "infeasible"
    AMBIGUOUS = "ambiguous"


class AllocationState(BaseModel):
    """Snapshot of the allocation scheme at one grid step."""

    active_edge: str = Field(..., description="Unit whose clock is running")
    level: float = Field(..., description="Current common level in L/alpha units")
    per_edge_consumed: Dict[str, float] = Field(..., description="T_i so far (s)")


@dataclass(frozen=True)
class TimeChange:
    """Per-unit clocks on the global grid; exactly one clock advances per step."""

    labels: Tuple[str, ...]
    dt: float
    quantum: float
    weights: Tuple[float, ...]
    clock_steps: np.ndarray
    active: np.ndarray
    rounds: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.clock_steps.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def clocks(self) -> np.ndarray:
        return self.clock_steps * self.dt

    def active_at(self, step: int) -> int:
        """Unit running during step `step` (the last step for the final grid point)."""
        return int(self.active[min(step, self.n_steps - 1)])

    def state_at(self, step: int) -> AllocationState:
        index = min(step, self.n_steps - 1)
        return AllocationState(
            active_edge=self.labels[int(self.active[index])],
            level=float(self.rounds[index]) * self.quantum,
            per_edge_consumed={
                label: float(self.clock_steps[i, step]) * self.dt for i, label in enumerate(self.labels)
            },
        )


@dataclass(frozen=True)
class TimeEquationSolution:
    """Solution of the time-change equation system at one time."""

    s: np.ndarray
    s_steps: np.ndarray
    level: float
    mismatch: float
    max_ratio_step: float
    status: SolveStatus

    def within(self, tol: float) -> bool:
        """Ratio mismatch within tol plus one grid increment of the ratio."""
        return self.mismatch <= tol + self.max_ratio_step


class FlatViolation(BaseModel):
    """Two ratio processes flat over the same level band."""

    i: int = Field(..., description="First unit")
    j: int = Field(..., description="Second unit")
    level: float = Field(..., description="Lower end of the level band")
    flat_i: float = Field(..., description="Flat length of unit i (s)")
    flat_j: float = Field(..., description="Flat length of unit j (s)")


class FlatCheckReport(BaseModel):
    """Simultaneous-flat statistics for one set of ledgers."""

    n_levels: int = Field(..., description="Level bands examined")
    n_candidate_levels: int = Field(..., description="Bands where some unit has a long flat")
    n_violation_levels: int = Field(..., description="Bands where two units have long flats")
    violation_fraction: float = Field(..., description="Violation bands / candidate bands")
    level_fraction: float = Field(..., description="Violation bands / all bands")
    spacing: float = Field(..., description="Level band width")
    violations: List[FlatViolation] = Field(default_factory=list, description="Every offending pair")


def _ratios(ledgers: Sequence[LocalTimeLedger], weights: Sequence[float]) -> List[np.ndarray]:
    if len(ledgers) != len(weights):
        raise ValueError("one weight per ledger is required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    dts = {ledger.dt for ledger in ledgers}
    if len(dts) != 1:
        raise ValueError("ledgers must share one dt grid")
    return [ledger.values / w for ledger, w in zip(ledgers, weights)]


def _max_increment(ratio: np.ndarray) -> float:
    return float(np.max(np.diff(ratio))) if ratio.size > 1 else 0.0


def _silent_units(ratios: Sequence[np.ndarray], fallback: Optional[int] = None) -> np.ndarray:
    """Units whose ratio never leaves 0; when all are silent, `fallback` (or unit 0) is kept."""
    silent = np.array([float(r[-1]) <= 0.0 for r in ratios])
    if silent.all():
        silent[fallback if fallback is not None else 0] = False
    return silent


def allocate(
    ledgers: Sequence[LocalTimeLedger],
    weights: Sequence[float],
    horizon: float,
    quantum: float,
    initial_edge: Optional[int] = None,
    labels: Optional[Sequence[str]] = None,
) -> TimeChange:
    """
    Build the time change by the round-robin quantum scheme.

    Args:
        ledgers: One ledger per unit at the shared vertex, common dt.
        weights: Positive gluing weights, one per unit.
        horizon: Global time to allocate (s).
        quantum: Level increment between rounds (L/alpha units).
        initial_edge: Unit that runs alone first, until its ratio leaves 0.
            Units whose ratio stays at 0 over the whole ledger never run
            afterwards; they hold the vertex.
        labels: Unit names used in errors and states.

    Returns:
        TimeChange: Clocks on the global grid.

    Raises:
        LedgerStarvationError: If a unit must run beyond its simulated ledger
            before the horizon is filled.
    """
    if quantum <= 0:
        raise ValueError("quantum must be positive")
    ratios = _ratios(ledgers, weights)
    labels = tuple(labels) if labels is not None else tuple(ledger.edge for ledger in ledgers)
    dt = ledgers[0].dt
    n_steps = int(round(horizon / dt))
    n_units = len(ratios)
    capacity = np.array([r.size - 1 for r in ratios], dtype=np.int64)

    top = max(float(r[-1]) for r in ratios)
    n_rounds = int(math.floor(top / quantum)) + 2
    levels = quantum * np.arange(1, n_rounds + 1)
    reach = np.column_stack([np.searchsorted(r, levels, side="left") for r in ratios])

    first_row = np.zeros(n_units, dtype=np.int64)
    first_starved = np.zeros(n_units, dtype=bool)
    if initial_edge is not None:
        leave_zero = int(np.searchsorted(ratios[initial_edge], 0.0, side="right"))
        first_row[initial_edge] = min(leave_zero, capacity[initial_edge])
        first_starved[initial_edge] = leave_zero > capacity[initial_edge]

    silent = _silent_units(ratios, initial_edge)
    rows = np.minimum(reach, capacity)
    rows[:, silent] = first_row[silent]
    rows_starved = reach > capacity
    rows_starved[:, silent] = False

    targets = np.vstack([first_row, rows])
    starved = np.vstack([first_starved, rows_starved])
    clocks = np.maximum.accumulate(targets, axis=0)
    durations = np.diff(np.vstack([np.zeros(n_units, dtype=np.int64), clocks]), axis=0)

    flat_durations = durations.ravel()
    flat_units = np.tile(np.arange(n_units), n_rounds + 1)
    flat_rounds = np.repeat(np.arange(n_rounds + 1), n_units)
    ends = np.cumsum(flat_durations)

    short = starved.ravel() & (ends < n_steps)
    if short.any() or ends[-1] < n_steps:
        j = int(np.argmax(short)) if short.any() else flat_durations.size - 1
        unit = labels[int(flat_units[j])]
        logger.error(f"Allocation starved on {unit} after {ends[j] * dt:.6g}s of {horizon:.6g}s")
        raise LedgerStarvationError(unit, float(ends[j] * dt), float(horizon))

    active = np.repeat(flat_units, flat_durations)[:n_steps]
    rounds = np.repeat(flat_rounds, flat_durations)[:n_steps]
    clock_steps = np.zeros((n_units, n_steps + 1), dtype=np.int64)
    for i in range(n_units):
        np.cumsum(active == i, out=clock_steps[i, 1:])

    return TimeChange(
        labels=labels,
        dt=dt,
        quantum=quantum,
        weights=tuple(float(w) for w in weights),
        clock_steps=clock_steps,
        active=active,
        rounds=rounds,
    )


def _reach_steps(ratios: Sequence[np.ndarray], level: float) -> np.ndarray:
    """h_i(level) in steps, inf where the level is never reached."""
    out = np.empty(len(ratios))
    for i, r in enumerate(ratios):
        if level <= 0:
            out[i] = 0
            continue
        k = int(np.searchsorted(r, level, side="left"))
        out[i] = k if k < r.size else math.inf
    return out


def solve_time_equations(
    ledgers: Sequence[LocalTimeLedger],
    weights: Sequence[float],
    t: float,
    tol: float,
) -> TimeEquationSolution:
    """
    Solve sum(s_i) = t with equal weighted local times L_i(s_i) / alpha_i.

    The common level is bracketed by doubling and refined by bisection.
    The budget left inside the final bracket goes to the units whose first
    passage jumps across it: units with a flat longer than two steps first,
    lowest index first within each group.

    Args:
        ledgers: One ledger per unit, common dt.
        weights: Positive gluing weights.
        t: Global time (s).
        tol: Ratio tolerance on top of one grid increment.

    Returns:
        TimeEquationSolution: s with status solved, infeasible or ambiguous.
        Units whose ratio never leaves 0 get s_i = 0, as in allocate. A final
        mismatch above tol is reported as ambiguous.
    """
    ratios = _ratios(ledgers, weights)
    silent = _silent_units(ratios)
    if silent.any():
        live = np.flatnonzero(~silent)
        sub = solve_time_equations([ledgers[i] for i in live], [weights[i] for i in live], t, tol)
        s_steps = np.zeros(len(ratios), dtype=np.int64)
        s_steps[live] = sub.s_steps
        s = np.zeros(len(ratios))
        s[live] = sub.s
        return replace(sub, s=s, s_steps=s_steps)

    dt = ledgers[0].dt
    capacity = np.array([r.size - 1 for r in ratios], dtype=float)
    max_step = max(_max_increment(r) for r in ratios)
    t_steps = int(round(t / dt))
    n_units = len(ratios)

    def solution(steps: np.ndarray, level: float, status: SolveStatus) -> TimeEquationSolution:
        clipped = np.minimum(steps, capacity).astype(np.int64)
        values = np.array([r[k] for r, k in zip(ratios, clipped)])
        return TimeEquationSolution(
            s=steps * dt,
            s_steps=clipped,
            level=level,
            mismatch=float(values.max() - values.min()),
            max_ratio_step=max_step,
            status=status,
        )

    if t_steps <= 0:
        return solution(np.zeros(n_units), 0.0, SolveStatus.SOLVED)

    lo, hi = 0.0, 1.0
    doublings = 0
    while _reach_steps(ratios, hi).sum() <= t_steps:
        lo, hi = hi, 2.0 * hi
        doublings += 1
        if doublings > MAX_DOUBLINGS:
            logger.warning(f"Level bracket did not close for t={t:g}")
            return solution(np.minimum(_reach_steps(ratios, lo), capacity), lo, SolveStatus.INFEASIBLE)

    for _ in range(BISECTION_ITERATIONS):
        mid = 0.5 * (lo + hi)
        if _reach_steps(ratios, mid).sum() <= t_steps:
            lo = mid
        else:
            hi = mid

    h_lo = _reach_steps(ratios, lo)
    h_hi = _reach_steps(ratios, hi)
    jumps = h_hi - h_lo
    residual = t_steps - int(h_lo.sum())
    jumping = np.flatnonzero(jumps > 0)
    significant = [int(i) for i in jumping if jumps[i] > FLAT_STEPS]
    order = significant + [int(i) for i in jumping if jumps[i] <= FLAT_STEPS]

    steps = h_lo.copy()
    remaining = residual
    for i in order:
        give = min(remaining, jumps[i])
        steps[i] += give
        remaining -= give
        if remaining <= 0:
            break

    if remaining > 0 or np.any(steps > capacity):
        logger.debug(f"Time equations infeasible at t={t:g}: ledgers too short")
        return solution(np.minimum(steps, capacity), lo, SolveStatus.INFEASIBLE)

    if residual > 0 and len(significant) >= 2:
        logger.info(f"Simultaneous flats at level {lo:.6g}, t={t:g}: units {significant}")
        return solution(steps, lo, SolveStatus.AMBIGUOUS)
    result = solution(steps, lo, SolveStatus.SOLVED)
    if not result.within(tol):
        logger.warning(f"Ratio mismatch {result.mismatch:.3g} above tolerance {tol:g} at t={t:g}")
        return replace(result, status=SolveStatus.AMBIGUOUS)
    return result


def quantum_bound(
    ledgers: Sequence[LocalTimeLedger], weights: Sequence[float], level: float, quantum: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Clock bracket around a level: [h_i(level - 2q), h_i(level + q)] in seconds.

    Both the allocation clocks in the round at `level` and the equation
    solution at the same time fall inside it.
    """
    ratios = _ratios(ledgers, weights)
    dt = ledgers[0].dt
    lower = _reach_steps(ratios, level - 2.0 * quantum) * dt
    upper = _reach_steps(ratios, level + quantum) * dt
    return lower, upper


def time_equation_residuals(
    ledgers: Sequence[LocalTimeLedger],
    weights: Sequence[float],
    clock_steps: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Budget and ratio residuals of a clock vector along the grid.

    Args:
        ledgers: One ledger per unit.
        weights: Gluing weights.
        clock_steps: Integer clocks of shape (units, n_steps + 1).

    Returns:
        Tuple[np.ndarray, np.ndarray]: |sum_i T_i(t_k) - t_k| and the max-min
        spread of L_i(T_i(t_k)) / alpha_i, per grid step.
    """
    ratios = _ratios(ledgers, weights)
    dt = ledgers[0].dt
    n = clock_steps.shape[1]
    budget = np.abs(clock_steps.sum(axis=0) - np.arange(n)) * dt
    capped = [np.minimum(clock_steps[i], r.size - 1) for i, r in enumerate(ratios)]
    values = np.vstack([r[c] for r, c in zip(ratios, capped)])
    spread = values.max(axis=0) - values.min(axis=0)
    return budget, spread


def no_simultaneous_flat_check(
    ledgers: Sequence[LocalTimeLedger],
    weights: Sequence[float],
    level_grid: Optional[np.ndarray] = None,
) -> FlatCheckReport:
    """
    Look for level bands where two weighted local times are flat together.

    Each band [l, l + spacing) is crossed by unit i in h_i(l + spacing) - h_i(l)
    steps; a band is a candidate if some unit needs more than two steps and
    a violation if two units do.

    Args:
        ledgers: Ledgers of independently simulated paths.
        weights: Gluing weights.
        level_grid: Lower band ends; defaults to a grid spaced by the smallest
            per-unit single-step ratio increment.

    Returns:
        FlatCheckReport: Offending pairs and summary fractions.
    """
    ratios = _ratios(ledgers, weights)
    dt = ledgers[0].dt
    increments = [_max_increment(r) for r in ratios]
    positive = [x for x in increments if x > 0]
    if len(ratios) < 2 or not positive:
        return FlatCheckReport(
            n_levels=0,
            n_candidate_levels=0,
            n_violation_levels=0,
            violation_fraction=0.0,
            level_fraction=0.0,
            spacing=min(positive) if positive else 0.0,
        )

    top = min(float(r[-1]) for r in ratios)
    if level_grid is None:
        spacing = min(positive)
        level_grid = np.arange(0.0, top, spacing)
    else:
        level_grid = np.asarray(level_grid, dtype=float)
        spacing = float(np.min(np.diff(level_grid))) if level_grid.size > 1 else min(positive)
    upper = level_grid + spacing
    keep = upper <= top
    level_grid, upper = level_grid[keep], upper[keep]

    h_lo = np.vstack([np.searchsorted(r, level_grid, side="left") for r in ratios])
    h_hi = np.vstack([np.searchsorted(r, upper, side="left") for r in ratios])
    long_flat = (h_hi - h_lo) > FLAT_STEPS

    violations: List[FlatViolation] = []
    for i in range(len(ratios)):
        for j in range(i + 1, len(ratios)):
            for k in np.flatnonzero(long_flat[i] & long_flat[j]):
                violations.append(
                    FlatViolation(
                        i=i,
                        j=j,
                        level=float(level_grid[k]),
                        flat_i=float(h_hi[i, k] - h_lo[i, k]) * dt,
                        flat_j=float(h_hi[j, k] - h_lo[j, k]) * dt,
                    )
                )

    n_levels = int(level_grid.size)
    candidates = int(long_flat.any(axis=0).sum())
    violating = int((long_flat.sum(axis=0) >= 2).sum())
    return FlatCheckReport(
        n_levels=n_levels,
        n_candidate_levels=candidates,
        n_violation_levels=violating,
        violation_fraction=violating / candidates if candidates else 0.0,
        level_fraction=violating / n_levels if n_levels else 0.0,
        spacing=float(spacing),
        violations=violations,
    )


def pooled_violation_fraction(reports: Sequence[FlatCheckReport]) -> float:
    """Violation bands over candidate bands, pooled across replicas."""
    candidates = sum(r.n_candidate_levels for r in reports)
    return sum(r.n_violation_levels for r in reports) / candidates if candidates else 0.0
