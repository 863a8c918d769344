"""
Reflected edge diffusions and their local times.

Each edge process is an Euler-Maruyama scheme folded back into the edge's
coordinate range. Local times at the edge's endpoint vertices are read off
the simulated path with an occupation-kernel estimator (the reference
normalization) or a downcrossing counter, and inverted into first-passage
times of the weighted local time.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..graph.metric_graph import EdgeSpec, MetricGraph, interior_vertices
from ..utils.config import Settings
from ..utils.exceptions import SimulationDivergedError
from .rng import batch_normals, edge_stream

logger = logging.getLogger(__name__)

# Downcrossing estimator: an excursion counts once the distance has reached
# delta and then fallen below DOWNCROSS_FLOOR_FRACTION * delta.
DOWNCROSS_FLOOR_FRACTION = 0.5

# The ledger is c * delta * count. c is fitted against the kernel estimator on
# reflected Brownian motion at dt = 1e-5, delta = 1e-2 (calibrate_downcrossing_constant);
# it absorbs the half-width floor and the grid overshoot at both band edges.
DOWNCROSSING_CALIBRATION = 0.87

# Resolution warning when a window is narrower than this many step deviations
RESOLUTION_FACTOR = 3.0


class SimConfig(BaseModel):
    """Discretization and estimator parameters shared by every simulation stage."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(..., gt=0, description="Time step (s)")
    horizon: float = Field(..., gt=0, description="Global time horizon (s)")
    seed: int = Field(..., ge=0, lt=2**64, description="64-bit RNG seed")
    kernel_eps: float = Field(..., gt=0, description="Kernel half-width epsilon")
    downcross_delta: float = Field(..., gt=0, description="Downcrossing level delta")
    quantum: float = Field(default=2.0**-10, gt=0, description="Allocation quantum")
    edge_horizon: Optional[float] = Field(
        default=None, description="Edge-clock budget (s); defaults to horizon"
    )
    solve_tol: Optional[float] = Field(
        default=None, description="Equation-solver tolerance; defaults to quantum"
    )

    @model_validator(mode="after")
    def check_horizons(self) -> "SimConfig":
        """Validate that every horizon holds at least one step."""
        if self.horizon < self.dt:
            raise ValueError(f"horizon {self.horizon} is shorter than dt {self.dt}")
        if self.edge_horizon is not None and self.edge_horizon < self.dt:
            raise ValueError(f"edge_horizon {self.edge_horizon} is shorter than dt {self.dt}")
        return self

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "SimConfig":
        """Build a config from application settings, overriding selected fields."""
        values = {
            "dt": settings.DT,
            "horizon": settings.HORIZON,
            "seed": settings.SEED,
            "kernel_eps": settings.KERNEL_EPS,
            "downcross_delta": settings.DOWNCROSS_DELTA,
            "quantum": settings.QUANTUM,
            "edge_horizon": settings.EDGE_HORIZON,
            "solve_tol": settings.SOLVE_TOL,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def n_steps(self) -> int:
        """Global grid steps."""
        return int(round(self.horizon / self.dt))

    @property
    def edge_steps(self) -> int:
        """Steps simulated on every edge clock."""
        budget = self.edge_horizon if self.edge_horizon is not None else self.horizon
        return int(round(budget / self.dt))

    @property
    def tolerance(self) -> float:
        return self.solve_tol if self.solve_tol is not None else self.quantum

    def check_resolution(self, sigma_max: float) -> bool:
        """
        Warn when the estimator windows are not wide compared with one step.

        Returns:
            bool: True if both windows are comfortably resolved.
        """
        step = math.sqrt(self.dt) * sigma_max
        ok = True
        for name, width in (("kernel_eps", self.kernel_eps), ("downcross_delta", self.downcross_delta)):
            if width < RESOLUTION_FACTOR * step:
                logger.warning(
                    f"{name}={width:g} is not large against sqrt(dt)*sigma_max={step:.3g}; "
                    "local-time estimates will be coarse"
                )
                ok = False
        return ok


@dataclass(frozen=True)
class EdgePath:
    """One reflected trajectory on one edge."""

    edge: str
    dt: float
    coords: np.ndarray
    qv_increments: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.coords.shape[-1]) * self.dt

    @property
    def n_steps(self) -> int:
        return self.coords.shape[-1] - 1

    @property
    def max_step(self) -> float:
        """Largest coordinate move over one step."""
        if self.n_steps == 0:
            return 0.0
        return float(np.max(np.abs(np.diff(self.coords))))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "value": self.coords})


@dataclass(frozen=True)
class EdgePathBatch:
    """Trajectories of one edge for a block of replicas (rows)."""

    edge: str
    dt: float
    coords: np.ndarray
    qv_increments: np.ndarray

    def __len__(self) -> int:
        return self.coords.shape[0]

    def row(self, r: int) -> EdgePath:
        return EdgePath(edge=self.edge, dt=self.dt, coords=self.coords[r], qv_increments=self.qv_increments[r])


@dataclass(frozen=True)
class LocalTimeLedger:
    """Nondecreasing local-time samples of an edge path at one vertex."""

    vertex: str
    edge: str
    dt: float
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[-1]) * self.dt

    @property
    def n_steps(self) -> int:
        return self.values.shape[-1] - 1

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "value": self.values})


def fold_into_edge(y: np.ndarray, length: float) -> np.ndarray:
    """Reflect unconstrained positions back into [0, length] (or [0, inf))."""
    if not math.isfinite(length):
        return np.abs(y)
    period = 2.0 * length
    y = np.mod(y, period)
    return np.where(y > length, period - y, y)


def _euler_fold(edge: EdgeSpec, x0: np.ndarray, dt: float, normals: np.ndarray):
    """Vectorized Euler-Maruyama with folding; rows are independent replicas."""
    n_rep, n_steps = normals.shape
    coords = np.empty((n_rep, n_steps + 1))
    qv = np.empty((n_rep, n_steps))
    coords[:, 0] = x0
    sqrt_dt = math.sqrt(dt)
    x = coords[:, 0].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            b = edge.drift.evaluate(x)
            s = edge.volatility.evaluate(x)
            qv[:, k] = s * s * dt
            x = fold_into_edge(x + b * dt + s * sqrt_dt * normals[:, k], edge.length)
            coords[:, k + 1] = x
    if not np.isfinite(coords).all():
        rows, steps = np.nonzero(~np.isfinite(coords))
        first = int(np.argmin(steps))
        raise SimulationDivergedError(edge.id, int(steps[first]), float(coords[rows[first], steps[first]]))
    return coords, qv


def _check_start(edge: EdgeSpec, x0: np.ndarray) -> None:
    if np.any(x0 < 0) or np.any(x0 > edge.length):
        raise ValueError(f"Start coordinate outside edge {edge.id} range [0, {edge.length}]")


def simulate_reflected_edge(
    e: EdgeSpec, x0: float, cfg: SimConfig, rng_stream: np.random.Generator
) -> EdgePath:
    """
    Simulate one reflected diffusion on an edge over the edge-clock budget.

    Args:
        e: Edge with drift and volatility.
        x0: Start coordinate.
        cfg: Simulation config (dt and edge horizon are used).
        rng_stream: Generator supplying one standard normal per step.

    Returns:
        EdgePath: Coordinates and quadratic-variation increments.

    Raises:
        SimulationDivergedError: If the scheme produces a non-finite state.
    """
    start = np.array([float(x0)])
    _check_start(e, start)
    normals = batch_normals([rng_stream], cfg.edge_steps)
    coords, qv = _euler_fold(e, start, cfg.dt, normals)
    return EdgePath(edge=e.id, dt=cfg.dt, coords=coords[0], qv_increments=qv[0])


def simulate_reflected_edges(
    e: EdgeSpec,
    x0: Union[float, np.ndarray],
    cfg: SimConfig,
    streams: Sequence[np.random.Generator],
) -> EdgePathBatch:
    """
    Batch version of simulate_reflected_edge: row r uses streams[r].

    Row r is bit-identical to simulate_reflected_edge(e, x0[r], cfg, streams[r]).
    """
    start = np.broadcast_to(np.asarray(x0, dtype=float), (len(streams),)).copy()
    _check_start(e, start)
    normals = batch_normals(streams, cfg.edge_steps)
    coords, qv = _euler_fold(e, start, cfg.dt, normals)
    return EdgePathBatch(edge=e.id, dt=cfg.dt, coords=coords, qv_increments=qv)


def local_time_kernel_batch(
    coords: np.ndarray, qv_increments: np.ndarray, vertex_coord: float, eps: float
) -> np.ndarray:
    """Kernel ledger values for 1-D or 2-D (replica rows) coordinate arrays."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    inside = np.abs(coords[..., :-1] - vertex_coord) < eps
    increments = np.where(inside, qv_increments, 0.0) / (2.0 * eps)
    values = np.zeros(coords.shape)
    np.cumsum(increments, axis=-1, out=values[..., 1:])
    return values


def local_time_kernel(p: EdgePath, vertex_coord: float, eps: float, vertex: str = "") -> LocalTimeLedger:
    """
    Occupation-kernel local time: (1/2 eps) * sum_{j<k} 1{|Y_j - v| < eps} * d[Y]_j.

    Args:
        p: Edge path.
        vertex_coord: Coordinate of the vertex on the edge.
        eps: Kernel half-width.
        vertex: Vertex id recorded on the ledger.

    Returns:
        LocalTimeLedger: Nondecreasing ledger starting at 0.
    """
    values = local_time_kernel_batch(p.coords, p.qv_increments, vertex_coord, eps)
    return LocalTimeLedger(vertex=vertex, edge=p.edge, dt=p.dt, values=values)


def local_time_downcrossing(
    p: EdgePath,
    vertex_coord: float,
    delta: float,
    vertex: str = "",
    calibration: float = DOWNCROSSING_CALIBRATION,
) -> LocalTimeLedger:
    """
    Downcrossing local time: completed excursions from distance delta back to the vertex.

    An excursion completes at the first step where the distance to the vertex
    falls below DOWNCROSS_FLOOR_FRACTION * delta after having reached delta.
    The ledger value is calibration * delta * count.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    distance = np.abs(p.coords - vertex_coord)
    state = np.zeros(distance.shape, dtype=np.int8)
    state[distance >= delta] = 1
    state[distance < DOWNCROSS_FLOOR_FRACTION * delta] = -1
    marked = np.flatnonzero(state)
    signs = state[marked]
    completions = marked[1:][(signs[:-1] == 1) & (signs[1:] == -1)]
    counts = np.zeros(distance.shape)
    np.add.at(counts, completions, 1.0)
    values = calibration * delta * np.cumsum(counts)
    return LocalTimeLedger(vertex=vertex, edge=p.edge, dt=p.dt, values=values)


def inverse_local_time(ledger: LocalTimeLedger, alpha: float, level: float) -> float:
    """
    First grid time at which ledger / alpha reaches `level`.

    Returns:
        float: Time, 0 for level 0, math.inf when the level is never reached.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if level <= 0:
        return 0.0
    k = int(np.searchsorted(ledger.values / alpha, level, side="left"))
    if k >= ledger.values.shape[-1]:
        return math.inf
    return k * ledger.dt


def ledger_at(ledger: LocalTimeLedger, step: int) -> float:
    return float(ledger.values[step])


def compose_ledger(ledger: LocalTimeLedger, clock_steps: np.ndarray, vertex: Optional[str] = None) -> LocalTimeLedger:
    """Ledger read through a clock: values[clock_steps[k]] for every k."""
    return LocalTimeLedger(
        vertex=vertex if vertex is not None else ledger.vertex,
        edge=ledger.edge,
        dt=ledger.dt,
        values=ledger.values[clock_steps],
    )


def ledgers_for_edge(g: MetricGraph, e: EdgeSpec, path: EdgePath, cfg: SimConfig) -> Dict[str, LocalTimeLedger]:
    """Kernel ledgers of an edge path at each of its interior endpoint vertices."""
    interior = set(interior_vertices(g))
    return {
        v: local_time_kernel(path, e.vertex_coord(v), cfg.kernel_eps, vertex=v)
        for v in e.endpoints
        if v in interior
    }


def calibrate_downcrossing_constant(n_paths: int, cfg: SimConfig) -> float:
    """
    Refit the downcrossing constant against the kernel estimator.

    Simulates reflected Brownian motion on a half-line from the vertex and
    returns c = mean(kernel) / (delta * mean(count)) at the final time, the
    value to store as DOWNCROSSING_CALIBRATION for that resolution.
    """
    edge = EdgeSpec(id="calibration", endpoints=("v",), length=math.inf)
    streams = [edge_stream(cfg.seed, r, 0) for r in range(n_paths)]
    batch = simulate_reflected_edges(edge, 0.0, cfg, streams)
    kernel = local_time_kernel_batch(batch.coords, batch.qv_increments, 0.0, cfg.kernel_eps)[:, -1]
    crossings = np.array(
        [
            local_time_downcrossing(batch.row(r), 0.0, cfg.downcross_delta, calibration=1.0).values[-1]
            for r in range(n_paths)
        ]
    )
    if crossings.mean() <= 0:
        raise ValueError("no completed downcrossings; increase horizon or decrease delta")
    constant = float(kernel.mean() / crossings.mean())
    logger.info(f"Calibrated downcrossing constant {constant:.4f} over {n_paths} paths (dt={cfg.dt:g})")
    return constant
