"""
Statistical verification of graph diffusions.

Experiments:
    - exit direction: which edge a path started at a vertex leaves through,
      compared with the vertex weights;
    - generator: Monte Carlo (P_h f - f) / h against the operator value for
      test functions in the generator domain;
    - marginal law: two-sample KS distance against an independent oracle;
    - invariant suite: budget, continuity, exclusivity, equation residual,
      allocate/solve agreement and simultaneous flats on every replica.
"""

import logging
import math
import time
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field

from ..api.models import CheckOutcome, ExperimentReport
from ..graph.metric_graph import (
    GraphPoint,
    MetricGraph,
    adjacent_edges,
    directional_derivative,
    distances_to_vertex,
    graph_point_at_vertex,
    interior_vertices,
    line_coordinate,
    operator_value,
)
from ..simulation.assembler import (
    GraphPath,
    check_adjacency_continuity,
    check_star_exclusivity,
    global_equation_residuals,
)
from ..simulation.bandit_clock import (
    FlatCheckReport,
    SolveStatus,
    no_simultaneous_flat_check,
    pooled_violation_fraction,
    quantum_bound,
    solve_time_equations,
)
from ..simulation.edge_dynamics import SimConfig, local_time_kernel
from ..simulation.monte_carlo import run_replicas
from ..utils.exceptions import ExperimentRejectedError, ProbeError
from ..utils.logging_config import get_metrics_logger
from .metrics import StatisticsCalculator

logger = logging.getLogger(__name__)

# Exit horizon in units of delta^2 / sigma^2 at the root
EXIT_HORIZON_FACTOR = 40.0
MAX_UNEXITED_FRACTION = 0.01

GLUING_TOL = 1e-9
PROBE_RADIUS = 0.25
SUITE_TIMES = 20
# Duplicated paths give a pooled fraction of exactly 1
FLAT_FRACTION_THRESHOLD = 0.9
NEGATIVE_CONTROL_SHIFT = 0.1

DEFAULT_SCHEDULE: Tuple[Tuple[float, float], ...] = ((0.04, 4e-4), (0.02, 1e-4), (0.01, 2.5e-5))


def default_root(g: MetricGraph) -> str:
    """First interior vertex in config order, or the origin of a single edge."""
    interior = interior_vertices(g)
    if interior:
        return interior[0]
    if len(g.edges) == 1:
        return g.edges[0].origin
    raise ValueError("graph has no interior vertex")


def _with_horizon(cfg: SimConfig, horizon: float) -> SimConfig:
    horizon = max(horizon, cfg.dt)
    update = {"horizon": horizon}
    if cfg.edge_horizon is not None:
        update["edge_horizon"] = max(cfg.edge_horizon, horizon)
    return cfg.model_copy(update=update)


def _params(g: MetricGraph, cfg: SimConfig, **extra) -> Dict:
    return {"graph": g.name, **cfg.model_dump(mode="json"), **extra}


# ----------------------------------------------------------------------
# Exit direction
# ----------------------------------------------------------------------


class ExitExperimentResult(BaseModel):
    """Exit-edge frequencies at one vertex."""

    root: str = Field(..., description="Start vertex")
    delta: float = Field(..., gt=0, description="Exit radius")
    n_paths: int = Field(..., ge=1, description="Replicas simulated")
    edges: List[str] = Field(..., description="Edges at the root, config order")
    weights: List[float] = Field(..., description="Vertex weights of those edges")
    counts: List[int] = Field(..., description="Exits per edge")
    frequencies: List[float] = Field(..., description="Exit frequencies among exited paths")
    ci_halfwidth: List[float] = Field(..., description="Binomial CI half-widths")
    tolerance: List[float] = Field(..., description="Pass tolerance per edge")
    unexited: int = Field(..., ge=0, description="Paths without an exit before the horizon")
    max_deviation: float = Field(..., description="max |frequency - weight|")
    passed: bool = Field(..., description="Every deviation within tolerance")
    outcomes: List[int] = Field(default_factory=list, exclude=True, description="Exit edge index per path, -1 if none")

    def to_report(self, params: Dict) -> ExperimentReport:
        return ExperimentReport(
            experiment="exit_direction",
            params=params,
            statistics={
                "frequencies": dict(zip(self.edges, self.frequencies)),
                "weights": dict(zip(self.edges, self.weights)),
                "counts": dict(zip(self.edges, self.counts)),
                "unexited": self.unexited,
                "max_deviation": self.max_deviation,
            },
            ci={"frequencies": dict(zip(self.edges, self.ci_halfwidth)), "tolerance": dict(zip(self.edges, self.tolerance))},
            passed=self.passed,
        )


def exit_horizon(g: MetricGraph, root: str, delta: float, cfg: SimConfig) -> float:
    """Horizon long enough that paths from the root leave the delta-ball."""
    sigmas = [abs(float(g.edge(e).volatility.evaluate(g.edge(e).vertex_coord(root)))) for e in adjacent_edges(g, root)]
    if min(sigmas) <= 0:
        return cfg.horizon
    return min(cfg.horizon, EXIT_HORIZON_FACTOR * delta * delta / min(sigmas) ** 2)


def exit_direction_experiment(
    g: MetricGraph,
    root: str,
    delta: float,
    n_paths: int,
    cfg: SimConfig,
    threads: int = 1,
    chunk_size: int = 32,
    tolerance: Optional[float] = None,
    calculator: Optional[StatisticsCalculator] = None,
) -> ExitExperimentResult:
    """
    Estimate the exit-edge law at a vertex.

    Args:
        g: Valid metric graph.
        root: Start vertex.
        delta: Exit radius (tree distance from the root).
        n_paths: Replicas.
        cfg: Simulation config; the horizon is shortened to the exit horizon.
        threads: Worker threads.
        chunk_size: Replicas per batch.
        tolerance: Fixed absolute tolerance; defaults to the binomial CI of each weight.
        calculator: Statistics calculator.

    Returns:
        ExitExperimentResult: Frequencies, CIs and verdict.

    Raises:
        ValueError: If delta is not below every adjacent edge length.
        ExperimentRejectedError: If 1% or more of the paths never exit.
    """
    calculator = calculator or StatisticsCalculator()
    edges = adjacent_edges(g, root)
    for edge_id in edges:
        if delta >= g.edge(edge_id).length:
            raise ValueError(f"delta {delta} is not below the length of edge {edge_id}")

    run_cfg = _with_horizon(cfg, exit_horizon(g, root, delta, cfg))
    position = {g.edge_index(e): k for k, e in enumerate(edges)}
    started = time.time()

    def first_exit(_: int, gp: GraphPath) -> int:
        distance = distances_to_vertex(g, root, gp.edge_index, gp.coords)
        hit = np.flatnonzero(distance >= delta)
        return position[int(gp.edge_index[hit[0]])] if hit.size else -1

    outcomes = np.array(
        run_replicas(g, root, run_cfg, n_paths, first_exit, threads=threads, chunk_size=chunk_size), dtype=np.int64
    )
    unexited = int(np.sum(outcomes < 0))
    if unexited >= MAX_UNEXITED_FRACTION * n_paths and unexited > 0:
        logger.error(f"Exit experiment at {root}: {unexited}/{n_paths} paths did not exit by t={run_cfg.horizon:g}")
        raise ExperimentRejectedError(
            f"{unexited} of {n_paths} paths did not exit within {run_cfg.horizon:g}s; raise the horizon"
        )

    exited = n_paths - unexited
    counts = np.bincount(outcomes[outcomes >= 0], minlength=len(edges))
    frequencies = counts / exited
    weights = np.array([g.weight(root, e) for e in edges])
    if tolerance is not None:
        tolerances = np.full(len(edges), float(tolerance))
    else:
        tolerances = np.array([calculator.binomial_tolerance(w, exited) for w in weights])
    deviations = np.abs(frequencies - weights)
    passed = bool(np.all(deviations <= tolerances + 1e-12))

    result = ExitExperimentResult(
        root=root,
        delta=delta,
        n_paths=n_paths,
        edges=edges,
        weights=weights.tolist(),
        counts=counts.tolist(),
        frequencies=frequencies.tolist(),
        ci_halfwidth=calculator.binomial_halfwidths(counts, exited).tolist(),
        tolerance=tolerances.tolist(),
        unexited=unexited,
        max_deviation=float(deviations.max()),
        passed=passed,
        outcomes=outcomes.tolist(),
    )
    get_metrics_logger().log_experiment_metrics(
        "exit_direction", n_paths, {"max_deviation": result.max_deviation, "root": root}, passed, time.time() - started
    )
    logger.info(f"Exit frequencies at {root} (delta={delta:g}): {dict(zip(edges, result.frequencies))}")
    return result


def delta_refinement(
    g: MetricGraph,
    root: str,
    delta: float,
    n_paths: int,
    cfg: SimConfig,
    threads: int = 1,
    chunk_size: int = 32,
    calculator: Optional[StatisticsCalculator] = None,
) -> ExperimentReport:
    """Exit experiment at delta and delta / 2; passes if the deviation does not grow beyond noise."""
    calculator = calculator or StatisticsCalculator()
    coarse = exit_direction_experiment(g, root, delta, n_paths, cfg, threads, chunk_size, calculator=calculator)
    fine = exit_direction_experiment(g, root, delta / 2.0, n_paths, cfg, threads, chunk_size, calculator=calculator)
    noise = max(coarse.ci_halfwidth + fine.ci_halfwidth)
    improved = fine.max_deviation <= coarse.max_deviation + noise
    return ExperimentReport(
        experiment="exit_delta_refinement",
        params=_params(g, cfg, root=root, delta=delta, n_paths=n_paths),
        statistics={
            "max_deviation": {"delta": coarse.max_deviation, "delta_half": fine.max_deviation},
            "frequencies": {"delta": coarse.frequencies, "delta_half": fine.frequencies},
            "improved": improved,
        },
        ci={"noise": noise},
        passed=improved,
    )


# ----------------------------------------------------------------------
# Generator probes
# ----------------------------------------------------------------------


class ProbePiece(BaseModel):
    """Polynomial restricted to one edge, tapered to zero around a center."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    edge: str = Field(..., description="Edge id")
    coeffs: Tuple[float, ...] = Field(..., min_length=1, description="Ascending powers in the edge coordinate")
    center: float = Field(..., description="Taper center (edge coordinate)")
    radius: float = Field(..., gt=0, description="Flat radius; the taper reaches 0 at twice this distance")


class GeneratorProbe(BaseModel):
    """Test function, start point and small-time grid of a generator check."""

    pieces: List[ProbePiece] = Field(..., min_length=1, description="Per-edge pieces; other edges are 0")
    point: GraphPoint = Field(..., description="Start point x")
    vertex: Optional[str] = Field(None, description="Probe vertex when x is a vertex")
    h_grid: List[float] = Field(default_factory=lambda: [0.01], min_length=1, description="Small times h")
    target: float = Field(..., description="Operator value A f(x)")
    estimates: List[float] = Field(default_factory=list, description="(P_h f - f) / h per h")
    std_errors: List[float] = Field(default_factory=list, description="Standard error per h")


class GeneratorCheckResult(BaseModel):
    """Error curve of a generator check over the h grid."""

    probe: GeneratorProbe = Field(..., description="Probe with estimates filled in")
    n_paths: int = Field(..., description="Replicas")
    dt: float = Field(..., description="Time step")
    deviations: List[float] = Field(..., description="estimate - target per h")
    within_ci: List[bool] = Field(..., description="|deviation| within the CI half-width")
    passed: bool = Field(..., description="Every h within its CI")


def _taper(u: np.ndarray, radius: float) -> np.ndarray:
    if math.isinf(radius):
        return np.ones_like(u)
    s = np.clip((u - radius) / radius, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def probe_values(g: MetricGraph, probe: GeneratorProbe, edge_index: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Test function at many graph points."""
    edge_index = np.asarray(edge_index)
    coords = np.asarray(coords, dtype=float)
    values = np.zeros(coords.shape)
    for piece in probe.pieces:
        mask = edge_index == g.edge_index(piece.edge)
        y = coords[mask]
        values[mask] = P.polyval(y, piece.coeffs) * _taper(np.abs(y - piece.center), piece.radius)
    return values


def check_probe(g: MetricGraph, probe: GeneratorProbe) -> None:
    """
    Reject test functions outside the generator domain.

    Raises:
        ProbeError: On unknown or repeated edges, a taper that does not vanish
            before another vertex, a discontinuity, a gluing condition
            violation or unequal edge operators at the probe vertex.
    """
    by_edge = {}
    for piece in probe.pieces:
        if piece.edge not in g.edge_lookup:
            raise ProbeError(f"probe piece on unknown edge {piece.edge}")
        if piece.edge in by_edge:
            raise ProbeError(f"two probe pieces on edge {piece.edge}")
        by_edge[piece.edge] = piece

    untapered = [p for p in probe.pieces if math.isinf(p.radius)]
    if untapered:
        values = {p.coeffs[0] for p in untapered}
        if len(untapered) != len(probe.pieces) or len(by_edge) != len(g.edges):
            raise ProbeError("untapered pieces must cover every edge")
        if any(np.any(np.asarray(p.coeffs[1:]) != 0) for p in untapered) or len(values) != 1:
            raise ProbeError("untapered probes must be one global constant")
        return

    for piece in probe.pieces:
        edge = g.edge(piece.edge)
        for w in edge.endpoints:
            if w == probe.vertex:
                continue
            if abs(edge.vertex_coord(w) - piece.center) < 2.0 * piece.radius - GLUING_TOL:
                raise ProbeError(f"taper on {piece.edge} does not vanish before vertex {w}")

    if probe.vertex is None:
        return

    edges = adjacent_edges(g, probe.vertex)
    zero = (0.0,)
    coeffs = {e: by_edge[e].coeffs if e in by_edge else zero for e in edges}
    at_vertex = [float(P.polyval(g.edge(e).vertex_coord(probe.vertex), coeffs[e])) for e in edges]
    if max(at_vertex) - min(at_vertex) > GLUING_TOL:
        raise ProbeError(f"probe is discontinuous at {probe.vertex}: {at_vertex}")

    gluing = sum(g.weight(probe.vertex, e) * directional_derivative(g.edge(e), coeffs[e], probe.vertex) for e in edges)
    if abs(gluing) > GLUING_TOL:
        raise ProbeError(f"gluing condition violated at {probe.vertex}: sum alpha D f = {gluing:.3g}")

    operators = [
        float(operator_value(g.edge(e), coeffs[e], np.array([g.edge(e).vertex_coord(probe.vertex)]))[0]) for e in edges
    ]
    if max(operators) - min(operators) > GLUING_TOL * max(1.0, max(abs(x) for x in operators)):
        raise ProbeError(f"edge operators differ at {probe.vertex}: {operators}")


def make_admissible_probe(
    g: MetricGraph,
    vertex: str,
    q: float = 1.0,
    slope: float = 0.25,
    f0: float = 1.0,
    radius: Optional[float] = None,
    h_grid: Sequence[float] = (0.01,),
) -> GeneratorProbe:
    """
    Quadratic pieces around a vertex satisfying the gluing condition.

    With u the distance from the vertex, f_i(u) = f0 + c_i u + a_i u^2.
    The first N - 1 slopes are `slope`, the last solves sum alpha_i c_i = 0;
    a_i makes every edge operator equal q / 2 at the vertex.
    """
    edges = adjacent_edges(g, vertex)
    alphas = [g.weight(vertex, e) for e in edges]
    slopes = [slope] * (len(edges) - 1)
    slopes.append(-sum(a * c for a, c in zip(alphas, slopes)) / alphas[-1] if len(edges) > 1 else 0.0)
    target = 0.5 * q
    finite = [g.edge(e).length / 2.0 for e in edges if g.edge(e).is_finite]
    radius = radius or min([PROBE_RADIUS] + finite)

    pieces = []
    for edge_id, c in zip(edges, slopes):
        edge = g.edge(edge_id)
        yv = edge.vertex_coord(vertex)
        orientation = 1.0 if vertex == edge.origin else -1.0
        sigma = float(edge.volatility.evaluate(yv))
        drift = orientation * float(edge.drift.evaluate(yv))
        a = (target - drift * c) / (sigma * sigma)
        coeffs = (f0 - c * orientation * yv + a * yv * yv, c * orientation - 2.0 * a * yv, a)
        pieces.append(ProbePiece(edge=edge_id, coeffs=coeffs, center=yv, radius=radius))

    probe = GeneratorProbe(
        pieces=pieces,
        point=graph_point_at_vertex(g, vertex),
        vertex=vertex,
        h_grid=list(h_grid),
        target=target,
    )
    check_probe(g, probe)
    return probe


def make_interior_probe(
    g: MetricGraph, point: GraphPoint, q: float = 1.0, radius: Optional[float] = None, h_grid: Sequence[float] = (0.01,)
) -> GeneratorProbe:
    """Quadratic bump (q/2)(y - x)^2 around an edge-interior point x."""
    edge = g.edge(point.edge)
    x = point.coord
    room = min(x, edge.length - x)
    if room <= 0:
        raise ProbeError(f"{point} is not in the interior of {edge.id}")
    radius = radius or min(PROBE_RADIUS, room / 2.0)
    coeffs = (0.5 * q * x * x, -q * x, 0.5 * q)
    probe = GeneratorProbe(
        pieces=[ProbePiece(edge=edge.id, coeffs=coeffs, center=x, radius=radius)],
        point=point,
        h_grid=list(h_grid),
        target=float(operator_value(edge, coeffs, np.array([x]))[0]),
    )
    check_probe(g, probe)
    return probe


def make_constant_probe(
    g: MetricGraph, value: float = 1.0, point: Optional[GraphPoint] = None, h_grid: Sequence[float] = (0.01,)
) -> GeneratorProbe:
    """f identically equal to `value`; its generator is 0."""
    return GeneratorProbe(
        pieces=[ProbePiece(edge=e.id, coeffs=(value,), center=0.0, radius=math.inf) for e in g.edges],
        point=point or graph_point_at_vertex(g, default_root(g)),
        h_grid=list(h_grid),
        target=0.0,
    )


def generator_check(
    g: MetricGraph,
    probe: GeneratorProbe,
    n_paths: int,
    cfg: SimConfig,
    root: Optional[str] = None,
    threads: int = 1,
    chunk_size: int = 32,
    calculator: Optional[StatisticsCalculator] = None,
) -> GeneratorCheckResult:
    """
    Monte Carlo estimate of (E_x f(X(h)) - f(x)) / h for every h in the probe grid.

    Args:
        g: Valid metric graph.
        probe: Test function and start point.
        n_paths: Replicas.
        cfg: Simulation config; the horizon is set to max(h_grid).
        root: Allocation root (defaults to the probe vertex if interior).
        threads: Worker threads.
        chunk_size: Replicas per batch.
        calculator: Statistics calculator.

    Returns:
        GeneratorCheckResult: Estimates, standard errors and deviations.

    Raises:
        ProbeError: If the probe is outside the generator domain.
    """
    check_probe(g, probe)
    calculator = calculator or StatisticsCalculator()
    steps = np.array([int(round(h / cfg.dt)) for h in probe.h_grid])
    if steps.min() < 1:
        raise ValueError("every h must be at least one time step")
    h = steps * cfg.dt
    run_cfg = _with_horizon(cfg, float(h.max()))
    if root is None:
        root = probe.vertex if probe.vertex in interior_vertices(g) else default_root(g)
    f_x = float(probe_values(g, probe, np.array([g.edge_index(probe.point.edge)]), np.array([probe.point.coord]))[0])
    started = time.time()

    def increments(_: int, gp: GraphPath) -> np.ndarray:
        return probe_values(g, probe, gp.edge_index[steps], gp.coords[steps]) - f_x

    rows = np.vstack(
        run_replicas(g, root, run_cfg, n_paths, increments, start=probe.point, threads=threads, chunk_size=chunk_size)
    )
    quotients = rows / h
    summaries = [calculator.mean_with_error(quotients[:, k]) for k in range(h.size)]
    estimates = [s["mean"] for s in summaries]
    deviations = [e - probe.target for e in estimates]
    within = [abs(d) <= s["ci_halfwidth"] + 1e-12 for d, s in zip(deviations, summaries)]

    filled = probe.model_copy(
        update={"h_grid": h.tolist(), "estimates": estimates, "std_errors": [s["std_error"] for s in summaries]}
    )
    get_metrics_logger().log_experiment_metrics(
        "generator", n_paths, {"deviations": deviations}, all(within), time.time() - started
    )
    return GeneratorCheckResult(
        probe=filled, n_paths=n_paths, dt=cfg.dt, deviations=deviations, within_ci=within, passed=all(within)
    )


def generator_refinement_check(
    g: MetricGraph,
    probe: GeneratorProbe,
    n_paths: int,
    cfg: SimConfig,
    schedule: Sequence[Tuple[float, float]] = DEFAULT_SCHEDULE,
    macro_replications: int = 5,
    threads: int = 1,
    chunk_size: int = 32,
) -> ExperimentReport:
    """
    Generator error along a joint (h, dt) refinement schedule.

    Each macro-replication reseeds the run; it counts as a win if the
    coarsest-level error is at least the finest-level error. The check
    passes with at most one loss.
    """
    errors = np.zeros((macro_replications, len(schedule)))
    for m in range(macro_replications):
        for level, (h, dt) in enumerate(schedule):
            level_cfg = cfg.model_copy(update={"dt": dt, "horizon": h, "seed": (cfg.seed + m) % 2**64})
            result = generator_check(
                g, probe.model_copy(update={"h_grid": [h]}), n_paths, level_cfg, threads=threads, chunk_size=chunk_size
            )
            errors[m, level] = abs(result.deviations[0])
        logger.debug(f"Refinement replication {m}: errors {errors[m].tolist()}")

    wins = int(np.sum(errors[:, 0] >= errors[:, -1]))
    return ExperimentReport(
        experiment="generator_refinement",
        params=_params(g, cfg, schedule=[list(s) for s in schedule], macro_replications=macro_replications, n_paths=n_paths),
        statistics={"errors": errors.tolist(), "mean_error": errors.mean(axis=0).tolist(), "wins": wins},
        ci={},
        passed=wins >= macro_replications - 1,
    )


# ----------------------------------------------------------------------
# Marginal law
# ----------------------------------------------------------------------


class MarginalLawResult(BaseModel):
    """Two-sample KS comparison."""

    statistic: float = Field(..., description="KS distance")
    p_value: float = Field(..., description="Asymptotic p-value")
    threshold: float = Field(..., description="Pass threshold")
    n: int = Field(..., description="First sample size")
    m: int = Field(..., description="Second sample size")
    passed: bool = Field(..., description="statistic < threshold")


def ks_compare(
    samples: Sequence[float],
    oracle_samples: Sequence[float],
    threshold: Optional[float] = None,
    calculator: Optional[StatisticsCalculator] = None,
) -> MarginalLawResult:
    """KS distance between two sample sets (symmetric in its arguments)."""
    calculator = calculator or StatisticsCalculator()
    ks = calculator.ks_distance(samples, oracle_samples)
    n, m = len(samples), len(oracle_samples)
    threshold = threshold if threshold is not None else calculator.ks_critical_value(n, m)
    return MarginalLawResult(
        statistic=ks["statistic"],
        p_value=ks["p_value"],
        threshold=threshold,
        n=n,
        m=m,
        passed=ks["statistic"] < threshold,
    )


def graph_marginal_samples(
    g: MetricGraph,
    t: float,
    n_paths: int,
    cfg: SimConfig,
    root: Optional[str] = None,
    positive_edge: Optional[str] = None,
    threads: int = 1,
    chunk_size: int = 32,
) -> np.ndarray:
    """
    Signed arclength from the root at time t, positive on the side of `positive_edge`.

    Only meaningful on path-shaped graphs (two edges at every interior vertex).
    """
    root = root or default_root(g)
    positive_edge = positive_edge or adjacent_edges(g, root)[0]
    run_cfg = _with_horizon(cfg, t)

    def signed_end(_: int, gp: GraphPath) -> float:
        return line_coordinate(g, gp.point(gp.n_steps), root, positive_edge)

    return np.array(run_replicas(g, root, run_cfg, n_paths, signed_end, threads=threads, chunk_size=chunk_size))


def marginal_law_test(
    g: MetricGraph,
    t: float,
    n_paths: int,
    oracle_samples: Sequence[float],
    cfg: SimConfig,
    root: Optional[str] = None,
    positive_edge: Optional[str] = None,
    threshold: Optional[float] = None,
    threads: int = 1,
    chunk_size: int = 32,
) -> MarginalLawResult:
    """
    KS comparison of the graph marginal at time t with oracle samples.

    The threshold defaults to the KS critical distance at the configured
    confidence level.
    """
    samples = graph_marginal_samples(g, t, n_paths, cfg, root, positive_edge, threads, chunk_size)
    result = ks_compare(samples, oracle_samples, threshold)
    logger.info(f"Marginal law at t={t:g}: KS={result.statistic:.4f} (threshold {result.threshold:.4f})")
    return result


# ----------------------------------------------------------------------
# Invariant suite
# ----------------------------------------------------------------------


def _perturbed(gp: GraphPath) -> GraphPath:
    """Copy of gp whose first leaf clock runs ahead over the second half of the grid."""
    clocks = gp.leaf_clock_steps.copy()
    shift = max(2, int(NEGATIVE_CONTROL_SHIFT * gp.n_steps))
    clocks[0, gp.n_steps // 2 :] += shift
    return replace(gp, leaf_clock_steps=clocks)


def _solver_agreement(g: MetricGraph, root: str, gp: GraphPath, cfg: SimConfig) -> Tuple[float, int]:
    """Worst ratio-mismatch excess and bracket misses of the equation solver against the leaf clocks."""
    edges = adjacent_edges(g, root)
    ledgers = [local_time_kernel(gp.edge_paths[e], g.edge(e).vertex_coord(root), cfg.kernel_eps, vertex=root) for e in edges]
    weights = [g.weight(root, e) for e in edges]
    clocks = np.vstack([gp.leaf_clock_steps[g.edge_index(e)] for e in edges])
    excess = -math.inf
    misses = 0
    for k in np.unique(np.linspace(1, gp.n_steps, SUITE_TIMES).astype(int)):
        solution = solve_time_equations(ledgers, weights, k * gp.dt, cfg.tolerance)
        if solution.status == SolveStatus.INFEASIBLE:
            misses += 1
            continue
        excess = max(excess, solution.mismatch - (cfg.tolerance + solution.max_ratio_step))
        lower, upper = quantum_bound(ledgers, weights, solution.level, cfg.quantum)
        clock = clocks[:, k] * gp.dt
        misses += int(np.sum((clock < lower - gp.dt) | (clock > upper + gp.dt)))
    return excess, misses


def _replica_checks(g: MetricGraph, root: str, cfg: SimConfig, gp: GraphPath) -> Dict:
    max_step = max(p.max_step for p in gp.edge_paths.values())
    window = max(cfg.kernel_eps, cfg.downcross_delta) + max_step
    interior = interior_vertices(g)

    budget = float(np.max(np.abs(gp.leaf_clock_steps.sum(axis=0) - np.arange(gp.n_steps + 1)))) * gp.dt
    residuals = global_equation_residuals(g, gp, cfg.kernel_eps)
    ratio_excess = max(
        [r["ratio"] - (cfg.quantum + r["ratio_step"]) for r in residuals.values()], default=-math.inf
    )
    checks = {
        "budget_conservation": budget,
        "adjacency_continuity": float(len(check_adjacency_continuity(g, gp, window))),
        "star_exclusivity": float(sum(len(check_star_exclusivity(g, gp, v, cfg.kernel_eps)) for v in interior)),
        "equation_residual": ratio_excess,
        "max_ratio_spread": max([r["ratio"] for r in residuals.values()], default=0.0),
    }

    flat: Optional[FlatCheckReport] = None
    if len(interior) == 1:
        excess, misses = _solver_agreement(g, root, gp, cfg)
        checks["allocate_vs_solve"] = excess
        checks["solve_bracket"] = float(misses)
        edges = adjacent_edges(g, root)
        flat = no_simultaneous_flat_check(
            [local_time_kernel(gp.edge_paths[e], g.edge(e).vertex_coord(root), cfg.kernel_eps, vertex=root) for e in edges],
            [g.weight(root, e) for e in edges],
        )
    return {"checks": checks, "flat": flat}


def run_invariant_suite(
    g: MetricGraph,
    cfg: SimConfig,
    n_paths: int,
    root: Optional[str] = None,
    negative_control: bool = False,
    threads: int = 1,
    chunk_size: int = 32,
) -> ExperimentReport:
    """
    Run every structural check on n_paths replicas.

    Checks (worst value over replicas, pass if value <= threshold):
        budget_conservation: max |sum_i T_i(t) - t| against dt.
        adjacency_continuity: steps jumping between edges away from a shared vertex.
        star_exclusivity: steps with two edges at a vertex outside their windows.
        equation_residual: ratio spread at each interior vertex minus (quantum + one ratio step).
        allocate_vs_solve, solve_bracket (stars): solver mismatch excess and bracket misses.
        no_simultaneous_flat (stars): pooled violation fraction.

    Args:
        g: Valid metric graph.
        cfg: Simulation config.
        n_paths: Replicas.
        root: Allocation root (defaults to the first interior vertex).
        negative_control: Advance one leaf clock artificially before checking.
        threads: Worker threads.
        chunk_size: Replicas per batch.

    Returns:
        ExperimentReport: Named checks with values, thresholds and verdicts.
    """
    root = root or default_root(g)
    started = time.time()

    def checks_for(_: int, gp: GraphPath) -> Dict:
        return _replica_checks(g, root, cfg, _perturbed(gp) if negative_control else gp)

    per_replica = run_replicas(g, root, cfg, n_paths, checks_for, threads=threads, chunk_size=chunk_size)

    def worst(name: str) -> float:
        return max(r["checks"][name] for r in per_replica)

    thresholds = {
        "budget_conservation": cfg.dt * (1.0 + 1e-9),
        "adjacency_continuity": 0.0,
        "star_exclusivity": 0.0,
        "equation_residual": 1e-12,
    }
    if "allocate_vs_solve" in per_replica[0]["checks"]:
        thresholds["allocate_vs_solve"] = 1e-12
        thresholds["solve_bracket"] = 0.0

    checks: Dict[str, CheckOutcome] = {}
    for name, threshold in thresholds.items():
        value = worst(name)
        checks[name] = CheckOutcome(value=value if math.isfinite(value) else 0.0, threshold=threshold, passed=value <= threshold)

    flats = [r["flat"] for r in per_replica if r["flat"] is not None]
    statistics: Dict = {"max_ratio_spread": worst("max_ratio_spread"), "n_paths": n_paths}
    if flats:
        fraction = pooled_violation_fraction(flats)
        checks["no_simultaneous_flat"] = CheckOutcome(
            value=fraction, threshold=FLAT_FRACTION_THRESHOLD, passed=fraction <= FLAT_FRACTION_THRESHOLD
        )
        statistics["flat_candidate_levels"] = sum(f.n_candidate_levels for f in flats)

    statistics["checks"] = {name: check.model_dump(by_alias=True) for name, check in checks.items()}
    statistics["failed_checks"] = sorted(name for name, check in checks.items() if not check.passed)
    passed = not statistics["failed_checks"]

    get_metrics_logger().log_experiment_metrics(
        "invariant_suite", n_paths, {"failed_checks": statistics["failed_checks"]}, passed, time.time() - started
    )
    if not passed:
        logger.warning(f"Invariant suite failed: {statistics['failed_checks']}")
    return ExperimentReport(
        experiment="invariant_suite",
        params=_params(g, cfg, root=root, n_paths=n_paths, negative_control=negative_control),
        statistics=statistics,
        ci={},
        passed=passed,
    )
