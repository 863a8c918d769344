"""
Monte Carlo driver over independent replicas.

Replicas are simulated in chunks: every edge of a chunk is integrated as one
vectorized batch, then each replica is spliced on its own. Chunks go to a
thread pool and results come back in replica order, so outputs do not
depend on the thread count or the chunk size.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from ..graph.metric_graph import GraphPoint, MetricGraph, embed, graph_point_at_vertex
from ..utils.logging_config import get_metrics_logger
from .assembler import GraphPath, assemble_recursive
from .edge_dynamics import SimConfig, simulate_reflected_edges
from .rng import edge_stream

logger = logging.getLogger(__name__)

T = TypeVar("T")


def _chunks(n_paths: int, chunk_size: int) -> List[range]:
    return [range(lo, min(lo + chunk_size, n_paths)) for lo in range(0, n_paths, chunk_size)]


def run_replicas(
    g: MetricGraph,
    root: str,
    cfg: SimConfig,
    n_paths: int,
    fn: Callable[[int, GraphPath], T],
    start: Optional[GraphPoint] = None,
    threads: int = 1,
    chunk_size: int = 32,
) -> List[T]:
    """
    Simulate n_paths graph paths and reduce each with `fn`.

    Args:
        g: Valid metric graph.
        root: Interior root vertex.
        cfg: Simulation config; replica r uses streams keyed (cfg.seed, r, edge).
        n_paths: Number of replicas.
        fn: Called as fn(replica, path); only its result is kept.
        start: Common start point (defaults to the root).
        threads: Worker threads over chunks.
        chunk_size: Replicas per vectorized batch.

    Returns:
        List[T]: fn results in replica order.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    start = start or graph_point_at_vertex(g, root)
    y0 = embed(g, start)
    started = time.time()

    def run_chunk(replicas: Sequence[int]) -> List[T]:
        batches = {
            e.id: simulate_reflected_edges(
                e, float(y0[i]), cfg, [edge_stream(cfg.seed, r, i) for r in replicas]
            )
            for i, e in enumerate(g.edges)
        }
        results = []
        for row, replica in enumerate(replicas):
            paths = {edge_id: batch.row(row) for edge_id, batch in batches.items()}
            results.append(fn(replica, assemble_recursive(g, root, cfg, start=start, edge_paths=paths)))
        return results

    chunks = _chunks(n_paths, chunk_size)
    logger.info(f"Simulating {n_paths} paths on {g.name or 'graph'} in {len(chunks)} chunks, {threads} thread(s)")
    try:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            outputs = list(pool.map(run_chunk, chunks))
    except Exception as e:
        get_metrics_logger().log_simulation_metrics(
            graph=g.name or "graph",
            n_edges=len(g.edges),
            n_steps=cfg.n_steps,
            n_paths=n_paths,
            processing_time=time.time() - started,
            success=False,
            error_message=str(e),
        )
        logger.error(f"Monte Carlo run failed: {e}")
        raise

    get_metrics_logger().log_simulation_metrics(
        graph=g.name or "graph",
        n_edges=len(g.edges),
        n_steps=cfg.n_steps,
        n_paths=n_paths,
        processing_time=time.time() - started,
        success=True,
    )
    return [item for chunk in outputs for item in chunk]


def simulate_graph_paths(
    g: MetricGraph,
    root: str,
    cfg: SimConfig,
    n_paths: int,
    start: Optional[GraphPoint] = None,
    threads: int = 1,
    chunk_size: int = 32,
) -> List[GraphPath]:
    """Full graph paths for n_paths replicas (replica r matches EdgeStreams(cfg.seed, r))."""
    return run_replicas(g, root, cfg, n_paths, lambda _, gp: gp, start, threads, chunk_size)
