"""
Loop-free metric graphs with generator data.

This module defines the static problem instance (vertices, coordinatized
edges, gluing weights, per-edge drift and volatility), validates it against
the model hypotheses, and answers geometric queries: tree distance,
embedding of graph points into coordinate vectors, and the vertex/edge
splits used by the recursive assembler.
"""

import logging
import math
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .coefficients import Coefficient, CoefficientFamily

logger = logging.getLogger(__name__)

# Relative tolerance for weight sums and point-on-edge checks
WEIGHT_SUM_TOL = 1e-9
COORD_TOL = 1e-12

# Ellipticity grid: step = length / ELLIPTICITY_GRID, [0, INFINITE_EDGE_PROBE] on half-lines
ELLIPTICITY_GRID = 10_000
INFINITE_EDGE_PROBE = 100.0


class EdgeSpec(BaseModel):
    """A coordinatized edge with its drift and volatility."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str = Field(..., min_length=1, description="Edge identifier")
    endpoints: Tuple[str, ...] = Field(..., description="One or two vertex ids")
    length: float = Field(..., description="Edge length, .inf for a half-line")
    orientation: Optional[str] = Field(
        None, description="Vertex at coordinate 0 (defaults to the first endpoint)"
    )
    drift: Coefficient = Field(
        default_factory=lambda: Coefficient.constant(0.0), description="Drift b_i(y)"
    )
    volatility: Coefficient = Field(
        default_factory=lambda: Coefficient.constant(1.0), description="Volatility sigma_i(y)"
    )

    @field_validator("length")
    @classmethod
    def check_not_nan(cls, v: float) -> float:
        if math.isnan(v):
            raise ValueError("length must be a number")
        return v

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.length)

    @property
    def origin(self) -> str:
        """Vertex sitting at coordinate 0."""
        return self.orientation if self.orientation is not None else self.endpoints[0]

    @property
    def terminus(self) -> Optional[str]:
        """Vertex sitting at coordinate `length`, None on a half-line."""
        others = [v for v in self.endpoints if v != self.origin]
        return others[0] if others else None

    def vertex_coord(self, vertex: str) -> float:
        """Coordinate of an endpoint vertex on this edge."""
        if vertex == self.origin:
            return 0.0
        if vertex == self.terminus:
            return self.length
        raise ValueError(f"Vertex {vertex} is not an endpoint of edge {self.id}")

    def far_vertex(self, vertex: str) -> Optional[str]:
        """Endpoint opposite to `vertex` (None on a half-line)."""
        if vertex == self.origin:
            return self.terminus
        if vertex == self.terminus:
            return self.origin
        raise ValueError(f"Vertex {vertex} is not an endpoint of edge {self.id}")

    def contains(self, coord: float) -> bool:
        return -COORD_TOL <= coord <= self.length + COORD_TOL

    def sigma_grid(self) -> np.ndarray:
        top = self.length if self.is_finite else INFINITE_EDGE_PROBE
        return np.linspace(0.0, top, ELLIPTICITY_GRID + 1)

    def sigma_on_grid(self) -> np.ndarray:
        """Volatility sampled on the ellipticity grid."""
        grid = self.sigma_grid()
        return np.broadcast_to(self.volatility.evaluate(grid), grid.shape)

    def sigma_max(self) -> float:
        """Largest volatility on the ellipticity grid."""
        return float(np.max(np.abs(self.sigma_on_grid())))


class GraphPoint(BaseModel):
    """A point of the metric graph: an edge and a coordinate on it."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    edge: str = Field(..., description="Edge identifier")
    coord: float = Field(..., ge=0.0, description="Coordinate on the edge")


class Violation(BaseModel):
    """One failed validation rule."""

    rule: str = Field(..., description="Name of the failing rule")
    ids: List[str] = Field(default_factory=list, description="Offending vertex/edge ids")
    message: str = Field(..., description="Human-readable explanation")


class ValidationReport(BaseModel):
    """Outcome of validate_graph."""

    ok: bool = Field(..., description="True iff no rule failed")
    violations: List[Violation] = Field(default_factory=list, description="Failed rules")


class MetricGraph(BaseModel):
    """Vertices, coordinatized edges and gluing weights."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: Optional[str] = Field(None, description="Graph name")
    vertices: Tuple[str, ...] = Field(..., description="Vertex ids")
    edges: Tuple[EdgeSpec, ...] = Field(..., description="Edges in config order")
    weights: Dict[str, Dict[str, float]] = Field(
        default_factory=dict, description="vertex -> {edge: alpha}"
    )

    @property
    def edge_ids(self) -> Tuple[str, ...]:
        return tuple(e.id for e in self.edges)

    @cached_property
    def edge_lookup(self) -> Dict[str, int]:
        return {e.id: i for i, e in enumerate(self.edges)}

    def edge(self, edge_id: str) -> EdgeSpec:
        return self.edges[self.edge_index(edge_id)]

    def edge_index(self, edge_id: str) -> int:
        try:
            return self.edge_lookup[edge_id]
        except KeyError:
            raise ValueError(f"Unknown edge {edge_id}") from None

    def weight(self, vertex: str, edge_id: str) -> float:
        return float(self.weights.get(vertex, {}).get(edge_id, 0.0))

    @cached_property
    def nx_graph(self) -> nx.Graph:
        """Vertex graph with one networkx edge per finite metric edge."""
        graph = nx.Graph()
        graph.add_nodes_from(self.vertices)
        for e in self.edges:
            if e.is_finite and len(e.endpoints) == 2:
                graph.add_edge(e.endpoints[0], e.endpoints[1], id=e.id, length=e.length)
        return graph

    @cached_property
    def vertex_distances(self) -> Dict[str, Dict[str, float]]:
        return {
            source: dict(lengths)
            for source, lengths in nx.all_pairs_dijkstra_path_length(self.nx_graph, weight="length")
        }


def adjacent_edges(g: MetricGraph, vertex: str) -> List[str]:
    """Edges incident to a vertex, in config order."""
    return [e.id for e in g.edges if vertex in e.endpoints]


def interior_vertices(g: MetricGraph) -> List[str]:
    """Vertices that are the end of at least two edges."""
    return [v for v in g.vertices if len(adjacent_edges(g, v)) >= 2]


def vertex_coord(edge: EdgeSpec, vertex: str) -> float:
    return edge.vertex_coord(vertex)


def far_vertex(edge: EdgeSpec, vertex: str) -> Optional[str]:
    return edge.far_vertex(vertex)


def split_at_vertex(g: MetricGraph, vertex: str) -> Tuple[List[str], List[str]]:
    """
    Split the edges at `vertex` into leaf-side and bridge edges.

    Args:
        g: Metric graph.
        vertex: Interior vertex the split is taken at.

    Returns:
        Tuple[List[str], List[str]]: Edges whose other end is not interior,
        and edges whose other end is another interior vertex.
    """
    interior = set(interior_vertices(g))
    leaf_side: List[str] = []
    bridges: List[str] = []
    for edge_id in adjacent_edges(g, vertex):
        other = g.edge(edge_id).far_vertex(vertex)
        if other is not None and other in interior:
            bridges.append(edge_id)
        else:
            leaf_side.append(edge_id)
    return leaf_side, bridges


def subgraph_beyond(g: MetricGraph, vertex: str, bridge: str) -> Set[str]:
    """
    Edge ids of the subgraph reached from `vertex` through `bridge`.

    The bridge edge itself is included.
    """
    far = g.edge(bridge).far_vertex(vertex)
    members = {bridge}
    if far is None:
        return members
    pruned = g.nx_graph.copy()
    if pruned.has_edge(vertex, far):
        pruned.remove_edge(vertex, far)
    reachable = nx.node_connected_component(pruned, far)
    for e in g.edges:
        if e.id != bridge and any(v in reachable for v in e.endpoints):
            members.add(e.id)
    return members


def _check_point(g: MetricGraph, p: GraphPoint) -> EdgeSpec:
    edge = g.edge(p.edge)
    if not edge.contains(p.coord):
        raise ValueError(f"Point {p.coord} is outside edge {p.edge} of length {edge.length}")
    return edge


def distance_to_vertex(g: MetricGraph, p: GraphPoint, vertex: str) -> float:
    """Tree distance from a graph point to a vertex."""
    edge = _check_point(g, p)
    distances = g.vertex_distances[vertex]
    best = math.inf
    for endpoint in edge.endpoints:
        if endpoint in distances:
            best = min(best, abs(p.coord - edge.vertex_coord(endpoint)) + distances[endpoint])
    return best


def tree_distance(g: MetricGraph, a: GraphPoint, b: GraphPoint) -> float:
    """
    Length of the unique path between two graph points.

    Args:
        g: Valid metric graph.
        a: First point.
        b: Second point.

    Returns:
        float: Tree distance d(a, b).

    Raises:
        ValueError: If a point is not on the graph.
    """
    edge_a = _check_point(g, a)
    edge_b = _check_point(g, b)
    if edge_a.id == edge_b.id:
        return abs(a.coord - b.coord)
    best = math.inf
    for u in edge_a.endpoints:
        to_u = abs(a.coord - edge_a.vertex_coord(u))
        distances = g.vertex_distances[u]
        for w in edge_b.endpoints:
            if w in distances:
                best = min(best, to_u + distances[w] + abs(b.coord - edge_b.vertex_coord(w)))
    return best


def points_equal(g: MetricGraph, a: GraphPoint, b: GraphPoint, tol: float = COORD_TOL) -> bool:
    """Graph equality: shared vertices on different edges compare equal."""
    return tree_distance(g, a, b) <= tol


def graph_point_at_vertex(g: MetricGraph, vertex: str) -> GraphPoint:
    """Canonical GraphPoint for a vertex (first adjacent edge in config order)."""
    edges = adjacent_edges(g, vertex)
    if not edges:
        raise ValueError(f"Vertex {vertex} has no incident edge")
    edge = g.edge(edges[0])
    return GraphPoint(edge=edge.id, coord=edge.vertex_coord(vertex))


def vertex_at(g: MetricGraph, p: GraphPoint, tol: float = COORD_TOL) -> Optional[str]:
    """Vertex located at p, if any."""
    edge = _check_point(g, p)
    for v in edge.endpoints:
        if abs(p.coord - edge.vertex_coord(v)) <= tol:
            return v
    return None


def embed(g: MetricGraph, p: GraphPoint) -> np.ndarray:
    """
    Coordinate vector y with y_i the coordinate of the point of e_i closest to p.

    Args:
        g: Valid metric graph.
        p: Point on g.

    Returns:
        np.ndarray: Vector of length len(g.edges).
    """
    _check_point(g, p)
    y = np.empty(len(g.edges))
    for i, edge in enumerate(g.edges):
        if edge.id == p.edge:
            y[i] = p.coord
            continue
        nearest = min(
            edge.endpoints,
            key=lambda v: distance_to_vertex(g, p, v),
        )
        y[i] = edge.vertex_coord(nearest)
    return y


def line_coordinate(g: MetricGraph, p: GraphPoint, origin: str, positive_edge: str) -> float:
    """
    Signed arclength of p from a vertex on a path-shaped graph.

    Points on the side of `positive_edge` get a positive sign.
    """
    origin_point = GraphPoint(edge=positive_edge, coord=g.edge(positive_edge).vertex_coord(origin))
    d0 = tree_distance(g, origin_point, p)
    if d0 <= COORD_TOL:
        return 0.0
    return d0 if p.edge in subgraph_beyond(g, origin, positive_edge) else -d0


def distance_table(g: MetricGraph, vertex: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-edge data for vectorized distance-to-vertex evaluation.

    Returns arrays (d_origin, d_terminus, lengths, finite) indexed by edge
    index; distance of (i, c) is min(d_origin[i] + c, d_terminus[i] + lengths[i] - c).
    """
    distances = g.vertex_distances[vertex]
    d_origin = np.array([distances.get(e.origin, np.inf) for e in g.edges])
    d_terminus = np.array(
        [distances.get(e.terminus, np.inf) if e.terminus is not None else np.inf for e in g.edges]
    )
    lengths = np.array([e.length for e in g.edges])
    finite = np.array([e.is_finite for e in g.edges])
    return d_origin, d_terminus, lengths, finite


def distances_to_vertex(g: MetricGraph, vertex: str, edge_index: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Vectorized tree distance from many graph points to one vertex."""
    d_origin, d_terminus, lengths, finite = distance_table(g, vertex)
    via_origin = d_origin[edge_index] + coords
    with np.errstate(invalid="ignore"):
        via_terminus = np.where(
            finite[edge_index], d_terminus[edge_index] + lengths[edge_index] - coords, np.inf
        )
    return np.minimum(via_origin, via_terminus)


def operator_value(edge: EdgeSpec, coeffs: Sequence[float], y: np.ndarray) -> np.ndarray:
    """
    Edge operator applied to a polynomial: 0.5 sigma(y)^2 f''(y) + b(y) f'(y).

    Args:
        edge: Edge carrying the coefficients.
        coeffs: Ascending power coefficients of f in the edge coordinate.
        y: Evaluation coordinates.
    """
    d1 = P.polyval(y, P.polyder(coeffs, 1)) if len(coeffs) > 1 else np.zeros_like(np.asarray(y, dtype=float))
    d2 = P.polyval(y, P.polyder(coeffs, 2)) if len(coeffs) > 2 else np.zeros_like(np.asarray(y, dtype=float))
    sigma = edge.volatility.evaluate(y)
    return 0.5 * np.square(sigma) * d2 + edge.drift.evaluate(y) * d1


def directional_derivative(edge: EdgeSpec, coeffs: Sequence[float], vertex: str) -> float:
    """Derivative of f at `vertex` taken in the direction pointing into the edge."""
    y = edge.vertex_coord(vertex)
    slope = float(P.polyval(y, P.polyder(coeffs, 1))) if len(coeffs) > 1 else 0.0
    return slope if vertex == edge.origin else -slope


def _ellipticity_violations(edge: EdgeSpec, sigma_min: float) -> List[Violation]:
    violations: List[Violation] = []
    sigma = edge.sigma_on_grid()
    if float(np.min(sigma)) < sigma_min:
        violations.append(
            Violation(
                rule="ellipticity",
                ids=[edge.id],
                message=f"volatility drops to {float(np.min(sigma)):.3g} < sigma_min={sigma_min:g}",
            )
        )
    elif not edge.is_finite and edge.volatility.degree == 1 and edge.volatility.coeffs[1] < 0:
        violations.append(
            Violation(
                rule="ellipticity",
                ids=[edge.id],
                message="decreasing linear volatility on a half-line eventually vanishes",
            )
        )
    return violations


def _regularity_violations(edge: EdgeSpec) -> List[Violation]:
    violations: List[Violation] = []
    if edge.is_finite:
        return violations
    for name, coef in (("drift", edge.drift), ("volatility", edge.volatility)):
        if coef.family == CoefficientFamily.POLYNOMIAL and coef.degree >= 2:
            violations.append(
                Violation(
                    rule="lipschitz",
                    ids=[edge.id],
                    message=f"{name} of degree {coef.degree} is not Lipschitz on a half-line",
                )
            )
    return violations


def validate_graph(g: MetricGraph, sigma_min: float = 1e-3) -> ValidationReport:
    """
    Check a metric graph against the model hypotheses.

    Args:
        g: Graph to check.
        sigma_min: Uniform ellipticity floor for every volatility.

    Returns:
        ValidationReport: ok, or the list of violated rules with offending ids.
    """
    violations: List[Violation] = []
    vertex_set = set(g.vertices)

    if len(vertex_set) != len(g.vertices):
        violations.append(Violation(rule="duplicate_id", ids=list(g.vertices), message="duplicate vertex ids"))
    edge_ids = [e.id for e in g.edges]
    if len(set(edge_ids)) != len(edge_ids):
        dups = sorted({e for e in edge_ids if edge_ids.count(e) > 1})
        violations.append(Violation(rule="duplicate_id", ids=dups, message="duplicate edge ids"))
    if not g.edges:
        violations.append(Violation(rule="empty", ids=[], message="graph has no edges"))

    structurally_sound: List[EdgeSpec] = []
    seen_pairs: Dict[frozenset, str] = {}
    for edge in g.edges:
        sound = True
        if not edge.length > 0:
            violations.append(Violation(rule="edge_length", ids=[edge.id], message="length must be > 0"))
            sound = False
        if len(edge.endpoints) not in (1, 2) or (len(edge.endpoints) == 1) != (not edge.is_finite):
            violations.append(
                Violation(
                    rule="endpoint_count",
                    ids=[edge.id],
                    message="exactly one endpoint iff the length is infinite",
                )
            )
            sound = False
        unknown = [v for v in edge.endpoints if v not in vertex_set]
        if unknown:
            violations.append(
                Violation(rule="unknown_reference", ids=[edge.id, *unknown], message="edge references unknown vertex")
            )
            sound = False
        if edge.orientation is not None and edge.orientation not in edge.endpoints:
            violations.append(
                Violation(rule="orientation", ids=[edge.id], message="orientation must be one of the endpoints")
            )
            sound = False
        if len(edge.endpoints) == 2 and edge.endpoints[0] == edge.endpoints[1]:
            violations.append(Violation(rule="self_loop", ids=[edge.id], message="edge is a loop"))
            sound = False
        if len(edge.endpoints) == 2 and sound:
            pair = frozenset(edge.endpoints)
            if pair in seen_pairs:
                violations.append(
                    Violation(
                        rule="multi_edge",
                        ids=[seen_pairs[pair], edge.id],
                        message="parallel edges between the same vertices form a loop",
                    )
                )
                sound = False
            else:
                seen_pairs[pair] = edge.id
        violations.extend(_ellipticity_violations(edge, sigma_min))
        violations.extend(_regularity_violations(edge))
        if sound:
            structurally_sound.append(edge)

    graph = nx.Graph()
    graph.add_nodes_from(vertex_set)
    for edge in structurally_sound:
        if len(edge.endpoints) == 2:
            graph.add_edge(edge.endpoints[0], edge.endpoints[1], id=edge.id)
    for cycle in nx.cycle_basis(graph):
        ring = list(zip(cycle, cycle[1:] + cycle[:1]))
        violations.append(
            Violation(
                rule="cycle",
                ids=[graph.edges[u, v]["id"] for u, v in ring],
                message="cycle detected",
            )
        )
    if graph.number_of_nodes() > 0 and not nx.is_connected(graph):
        components = sorted(sorted(c) for c in nx.connected_components(graph))
        violations.append(
            Violation(
                rule="disconnected",
                ids=[c[0] for c in components],
                message=f"graph has {len(components)} connected components",
            )
        )

    violations.extend(_weight_violations(g, vertex_set, set(edge_ids)))

    report = ValidationReport(ok=not violations, violations=violations)
    if not report.ok:
        logger.debug(f"Graph {g.name or '<unnamed>'} failed validation: {[v.rule for v in violations]}")
    return report


def _weight_violations(g: MetricGraph, vertex_set: Set[str], edge_set: Set[str]) -> List[Violation]:
    violations: List[Violation] = []
    for vertex, row in g.weights.items():
        if vertex not in vertex_set:
            violations.append(
                Violation(rule="unknown_reference", ids=[vertex], message="weights reference unknown vertex")
            )
            continue
        for edge_id, alpha in row.items():
            if edge_id not in edge_set:
                violations.append(
                    Violation(
                        rule="unknown_reference",
                        ids=[vertex, edge_id],
                        message="weights reference unknown edge",
                    )
                )
            elif vertex not in g.edge(edge_id).endpoints and alpha != 0:
                violations.append(
                    Violation(
                        rule="weight_support",
                        ids=[vertex, edge_id],
                        message="positive weight on an edge not incident to the vertex",
                    )
                )

    for vertex in g.vertices:
        incident = adjacent_edges(g, vertex)
        if not incident:
            continue
        row = g.weights.get(vertex, {})
        bad = [e for e in incident if not row.get(e, 0.0) > 0]
        if bad:
            violations.append(
                Violation(
                    rule="weight_support",
                    ids=[vertex, *bad],
                    message="every incident edge needs a positive weight",
                )
            )
        total = sum(float(row.get(e, 0.0)) for e in incident)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            violations.append(
                Violation(
                    rule="weight_sum",
                    ids=[vertex],
                    message=f"vertex weight sum is {total:.12g}, expected 1",
                )
            )
    return violations
