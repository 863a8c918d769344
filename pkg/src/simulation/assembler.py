"""
Splicing edge paths into graph-valued trajectories.

At a vertex, the allocator hands global time to one unit at a time; the
graph point is the running unit's path read at its own clock. A unit is
either a raw edge or, for an edge leading to another interior vertex, the
whole sub-process beyond that edge, assembled recursively and seen from
the parent vertex through the bridge edge's local time composed with the
sub-process clock.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from ..graph.metric_graph import (
    COORD_TOL,
    EdgeSpec,
    GraphPoint,
    MetricGraph,
    adjacent_edges,
    embed,
    graph_point_at_vertex,
    interior_vertices,
    subgraph_beyond,
)
from ..utils.exceptions import ExclusivityViolationError
from .bandit_clock import TimeChange, allocate, time_equation_residuals
from .edge_dynamics import (
    EdgePath,
    LocalTimeLedger,
    SimConfig,
    compose_ledger,
    local_time_kernel,
    simulate_reflected_edge,
)
from .rng import EdgeStreams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphPath:
    """Spliced trajectory: one (edge, coordinate) per global grid time."""

    edge_ids: Tuple[str, ...]
    dt: float
    edge_index: np.ndarray
    coords: np.ndarray
    leaf_clock_steps: np.ndarray
    edge_paths: Dict[str, EdgePath] = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return self.coords.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.coords.size) * self.dt

    @property
    def time_change(self) -> np.ndarray:
        """Leaf-edge clocks T_i(t_k) in seconds, shape (edges, n_steps + 1)."""
        return self.leaf_clock_steps * self.dt

    def point(self, step: int) -> GraphPoint:
        return GraphPoint(edge=self.edge_ids[int(self.edge_index[step])], coord=float(self.coords[step]))

    @property
    def points(self) -> List[GraphPoint]:
        return [self.point(k) for k in range(self.coords.size)]

    def to_frame(self) -> pd.DataFrame:
        labels = np.asarray(self.edge_ids, dtype=object)[self.edge_index]
        return pd.DataFrame({"t": self.times, "edge_id": labels, "coord": self.coords})

    def clocks_frame(self) -> pd.DataFrame:
        frame = {"t": self.times}
        for i, edge_id in enumerate(self.edge_ids):
            frame[f"T_{edge_id}"] = self.leaf_clock_steps[i] * self.dt
        return pd.DataFrame(frame)


@dataclass
class _Unit:
    label: str
    edge: EdgeSpec
    ledger: LocalTimeLedger
    edge_index: np.ndarray
    coords: np.ndarray
    leaf_clocks: Dict[int, np.ndarray]
    window: float
    side: Set[str]


@dataclass
class _Assembly:
    edge_index: np.ndarray
    coords: np.ndarray
    leaf_clocks: Dict[int, np.ndarray]


def _raw_unit(g: MetricGraph, edge: EdgeSpec, path: EdgePath, vertex: str, eps: float) -> _Unit:
    index = g.edge_index(edge.id)
    return _Unit(
        label=edge.id,
        edge=edge,
        ledger=local_time_kernel(path, edge.vertex_coord(vertex), eps, vertex=vertex),
        edge_index=np.full(path.coords.size, index, dtype=np.int64),
        coords=path.coords,
        leaf_clocks={index: np.arange(path.coords.size, dtype=np.int64)},
        window=eps + path.max_step,
        side={edge.id},
    )


def _splice(g: MetricGraph, units: Sequence[_Unit], tc: TimeChange, vertex: str) -> _Assembly:
    """Read every unit at its clock and check that frozen units sit at the vertex."""
    n = tc.n_steps
    running = np.empty(n + 1, dtype=np.int64)
    running[:n] = tc.active
    running[n] = tc.active[n - 1]

    edge_index = np.empty(n + 1, dtype=np.int64)
    coords = np.empty(n + 1)
    away = np.zeros((len(units), n + 1), dtype=bool)
    for u, unit in enumerate(units):
        clock = tc.clock_steps[u]
        mask = running == u
        edge_index[mask] = unit.edge_index[clock[mask]]
        coords[mask] = unit.coords[clock[mask]]

        on_edge = unit.edge_index[clock] == g.edge_index(unit.edge.id)
        distance = np.where(on_edge, np.abs(unit.coords[clock] - unit.edge.vertex_coord(vertex)), np.inf)
        away[u] = (~mask) & (distance > unit.window)

    if away.any():
        k = int(np.argmax(away.any(axis=0)))
        offenders = [units[u].label for u in np.flatnonzero(away[:, k])]
        offenders.append(units[int(running[k])].label)
        logger.error(f"Exclusivity violated at {vertex}, t={k * tc.dt:.6g}: {offenders}")
        raise ExclusivityViolationError(k * tc.dt, vertex, offenders)

    leaf_clocks: Dict[int, np.ndarray] = {}
    for u, unit in enumerate(units):
        for j, inner in unit.leaf_clocks.items():
            leaf_clocks[j] = inner[tc.clock_steps[u]]
    return _Assembly(edge_index=edge_index, coords=coords, leaf_clocks=leaf_clocks)


def _at_vertex(g: MetricGraph, p: GraphPoint, vertex: str) -> bool:
    edge = g.edge(p.edge)
    return vertex in edge.endpoints and abs(p.coord - edge.vertex_coord(vertex)) <= COORD_TOL


def _initial_unit(g: MetricGraph, vertex: str, units: Sequence[_Unit], start: GraphPoint, parent_edge: Optional[str]) -> Optional[int]:
    """Unit holding the start point as seen from this vertex (None if it starts at the vertex)."""
    if _at_vertex(g, start, vertex):
        return None
    for u, unit in enumerate(units):
        if start.edge in unit.side:
            return u
    # The start lies on the parent side: the sub-process enters from the bridge's far end
    for u, unit in enumerate(units):
        if unit.label == parent_edge:
            return u
    raise ValueError(f"Start point {start} is not reachable from {vertex}")


def _assemble_at(
    g: MetricGraph,
    vertex: str,
    parent_edge: Optional[str],
    edge_paths: Dict[str, EdgePath],
    cfg: SimConfig,
    start: GraphPoint,
    interior: Set[str],
    depth: int,
) -> _Assembly:
    if depth > len(interior):
        raise RuntimeError(f"Recursion depth {depth} exceeds the interior vertex count {len(interior)}")

    units: List[_Unit] = []
    for edge_id in adjacent_edges(g, vertex):
        edge = g.edge(edge_id)
        path = edge_paths[edge_id]
        far = edge.far_vertex(vertex)
        if edge_id == parent_edge or far is None or far not in interior:
            units.append(_raw_unit(g, edge, path, vertex, cfg.kernel_eps))
            continue
        sub = _assemble_at(g, far, edge_id, edge_paths, cfg, start, interior, depth + 1)
        bridge = local_time_kernel(path, edge.vertex_coord(vertex), cfg.kernel_eps, vertex=vertex)
        units.append(
            _Unit(
                label=edge_id,
                edge=edge,
                ledger=compose_ledger(bridge, sub.leaf_clocks[g.edge_index(edge_id)]),
                edge_index=sub.edge_index,
                coords=sub.coords,
                leaf_clocks=sub.leaf_clocks,
                window=cfg.kernel_eps + path.max_step,
                side=subgraph_beyond(g, vertex, edge_id),
            )
        )

    tc = allocate(
        [u.ledger for u in units],
        [g.weight(vertex, u.label) for u in units],
        cfg.n_steps * cfg.dt,
        cfg.quantum,
        initial_edge=_initial_unit(g, vertex, units, start, parent_edge),
        labels=[u.label for u in units],
    )
    logger.debug(f"Allocated {cfg.n_steps} steps at {vertex} over {len(units)} units (depth {depth})")
    return _splice(g, units, tc, vertex)


def _graph_path(g: MetricGraph, assembly: _Assembly, edge_paths: Dict[str, EdgePath], dt: float) -> GraphPath:
    n = assembly.coords.size
    clocks = np.zeros((len(g.edges), n), dtype=np.int64)
    for j, steps in assembly.leaf_clocks.items():
        clocks[j] = steps
    return GraphPath(
        edge_ids=g.edge_ids,
        dt=dt,
        edge_index=assembly.edge_index,
        coords=assembly.coords,
        leaf_clock_steps=clocks,
        edge_paths=dict(edge_paths),
    )


def _shared_vertex(paths: Sequence[EdgePath], g: MetricGraph) -> str:
    common = set(g.edge(paths[0].edge).endpoints)
    for p in paths[1:]:
        common &= set(g.edge(p.edge).endpoints)
    if not common:
        raise ValueError("Star edges do not share a vertex")
    origin = g.edge(paths[0].edge).origin
    return origin if origin in common else sorted(common)[0]


def assemble_star(
    paths: Sequence[EdgePath],
    tc: TimeChange,
    g: MetricGraph,
    kernel_eps: float,
    vertex: Optional[str] = None,
) -> GraphPath:
    """
    Splice the edge paths of a star with a time change built from their ledgers.

    Args:
        paths: One path per star edge, in the order of the time change units.
        tc: Time change over these units.
        g: Graph holding the edges.
        kernel_eps: Kernel half-width used for the ledgers.
        vertex: Shared vertex (inferred when omitted).

    Returns:
        GraphPath: The spliced trajectory.

    Raises:
        ExclusivityViolationError: If a frozen edge is away from the vertex.
    """
    vertex = vertex or _shared_vertex(paths, g)
    units = [_raw_unit(g, g.edge(p.edge), p, vertex, kernel_eps) for p in paths]
    assembly = _splice(g, units, tc, vertex)
    return _graph_path(g, assembly, {p.edge: p for p in paths}, tc.dt)


def simulate_edges(
    g: MetricGraph, cfg: SimConfig, start: GraphPoint, rng: Optional[EdgeStreams] = None
) -> Dict[str, EdgePath]:
    """Simulate every edge from the embedding of the start point."""
    streams = rng or EdgeStreams(cfg.seed)
    y0 = embed(g, start)
    return {
        e.id: simulate_reflected_edge(e, float(y0[i]), cfg, streams.for_edge(i))
        for i, e in enumerate(g.edges)
    }


def assemble_recursive(
    g: MetricGraph,
    root: str,
    cfg: SimConfig,
    rng: Optional[EdgeStreams] = None,
    start: Optional[GraphPoint] = None,
    edge_paths: Optional[Dict[str, EdgePath]] = None,
) -> GraphPath:
    """
    Build the graph diffusion rooted at an interior vertex.

    Edges leading to another interior vertex are replaced by the
    sub-diffusion beyond them (processed in config order); the root
    allocation then runs over raw edges and sub-processes.

    Args:
        g: Valid metric graph.
        root: Interior vertex (any endpoint on a single-edge graph).
        cfg: Simulation config.
        rng: Edge stream factory (defaults to cfg.seed, replica 0).
        start: Start point (defaults to the root).
        edge_paths: Pre-simulated edge paths, keyed by edge id.

    Returns:
        GraphPath: The spliced trajectory with composed leaf clocks.
    """
    interior = set(interior_vertices(g))
    if root not in interior and len(g.edges) > 1:
        raise ValueError(f"Root {root} is not an interior vertex")
    start = start or graph_point_at_vertex(g, root)
    if edge_paths is None:
        edge_paths = simulate_edges(g, cfg, start, rng)

    if len(interior) <= 1:
        star = adjacent_edges(g, root)
        paths = [edge_paths[e] for e in star]
        units = [_raw_unit(g, g.edge(e), edge_paths[e], root, cfg.kernel_eps) for e in star]
        tc = allocate(
            [u.ledger for u in units],
            [g.weight(root, e) for e in star],
            cfg.n_steps * cfg.dt,
            cfg.quantum,
            initial_edge=_initial_unit(g, root, units, start, None),
            labels=star,
        )
        return assemble_star(paths, tc, g, cfg.kernel_eps, vertex=root)

    assembly = _assemble_at(g, root, None, edge_paths, cfg, start, interior, depth=1)
    return _graph_path(g, assembly, edge_paths, cfg.dt)


def leaf_clocks(gp: GraphPath) -> Dict[str, np.ndarray]:
    """Composed per-edge clocks T_i(t) in seconds."""
    return {edge_id: gp.leaf_clock_steps[i] * gp.dt for i, edge_id in enumerate(gp.edge_ids)}


def check_adjacency_continuity(g: MetricGraph, gp: GraphPath, tolerance: float) -> List[int]:
    """
    Steps k where points k and k+1 are on different edges without a shared
    vertex within `tolerance` of either point.
    """
    bad: List[int] = []
    for k in np.flatnonzero(gp.edge_index[1:] != gp.edge_index[:-1]):
        a = g.edges[int(gp.edge_index[k])]
        b = g.edges[int(gp.edge_index[k + 1])]
        shared = set(a.endpoints) & set(b.endpoints)
        near = any(
            min(abs(gp.coords[k] - a.vertex_coord(w)), abs(gp.coords[k + 1] - b.vertex_coord(w))) <= tolerance
            for w in shared
        )
        if not near:
            bad.append(int(k))
    return bad


def check_star_exclusivity(g: MetricGraph, gp: GraphPath, vertex: str, eps: float) -> List[int]:
    """
    Grid steps where more than one edge at `vertex` sits outside its window.

    Each edge coordinate is read at its leaf clock; the window is eps plus
    the largest single step of that edge's path.
    """
    rows = []
    for edge_id in adjacent_edges(g, vertex):
        edge = g.edge(edge_id)
        path = gp.edge_paths[edge_id]
        clock = np.minimum(gp.leaf_clock_steps[g.edge_index(edge_id)], path.n_steps)
        rows.append(np.abs(path.coords[clock] - edge.vertex_coord(vertex)) > eps + path.max_step)
    if not rows:
        return []
    return [int(k) for k in np.flatnonzero(np.vstack(rows).sum(axis=0) > 1)]


def global_equation_residuals(g: MetricGraph, gp: GraphPath, eps: float) -> Dict[str, Dict[str, float]]:
    """
    Budget and ratio residuals of the leaf clocks at every interior vertex.

    Returns:
        Dict[str, Dict[str, float]]: vertex -> {budget, ratio, ratio_step}
        with the max budget residual (s), the max ratio spread and the
        largest single-step ratio increment at that vertex.
    """
    residuals: Dict[str, Dict[str, float]] = {}
    for vertex in interior_vertices(g):
        edges = adjacent_edges(g, vertex)
        ledgers = [
            local_time_kernel(gp.edge_paths[e], g.edge(e).vertex_coord(vertex), eps, vertex=vertex) for e in edges
        ]
        weights = [g.weight(vertex, e) for e in edges]
        clocks = np.vstack([gp.leaf_clock_steps[g.edge_index(e)] for e in edges])
        _, spread = time_equation_residuals(ledgers, weights, clocks)
        ratio_step = max(float(np.max(np.diff(l.values))) / w for l, w in zip(ledgers, weights))
        residuals[vertex] = {
            "budget": float(np.max(np.abs(gp.leaf_clock_steps.sum(axis=0) - np.arange(gp.coords.size))) * gp.dt),
            "ratio": float(np.max(spread)),
            "ratio_step": ratio_step,
        }
    return residuals
