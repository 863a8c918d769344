import numpy as np
import pytest

from src.simulation.assembler import assemble_recursive
from src.simulation.monte_carlo import run_replicas, simulate_graph_paths
from src.simulation.rng import EdgeStreams


def _final(_, gp):
    return (int(gp.edge_index[-1]), float(gp.coords[-1]))


def test_results_do_not_depend_on_threads_or_chunks(star3, fast_cfg):
    serial = run_replicas(star3, "v0", fast_cfg, 10, _final, threads=1, chunk_size=10)
    parallel = run_replicas(star3, "v0", fast_cfg, 10, _final, threads=3, chunk_size=3)
    assert serial == parallel


def test_replica_matches_single_assembly(h_tree, fast_cfg):
    paths = simulate_graph_paths(h_tree, "u", fast_cfg, 4, chunk_size=2)
    single = assemble_recursive(h_tree, "u", fast_cfg, rng=EdgeStreams(fast_cfg.seed, 2))
    np.testing.assert_array_equal(paths[2].coords, single.coords)
    np.testing.assert_array_equal(paths[2].edge_index, single.edge_index)


def test_replica_numbers_are_passed_in_order(star3, fast_cfg):
    assert run_replicas(star3, "v0", fast_cfg, 5, lambda r, _: r, threads=2, chunk_size=2) == [0, 1, 2, 3, 4]


def test_needs_at_least_one_path(star3, fast_cfg):
    with pytest.raises(ValueError):
        simulate_graph_paths(star3, "v0", fast_cfg, 0)
