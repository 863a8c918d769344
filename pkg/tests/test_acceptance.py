"""
Full-scale statistical runs against independent oracles.

Deselected by default; run with `pytest -m slow`. Each test takes minutes.
"""

import math

import numpy as np
import pytest

from src.evaluation.oracles import brownian_marginal, skew_bm_flip_sampler
from src.evaluation.verify import (
    delta_refinement,
    exit_direction_experiment,
    generator_check,
    generator_refinement_check,
    graph_marginal_samples,
    make_admissible_probe,
    make_interior_probe,
    marginal_law_test,
    run_invariant_suite,
)
from src.graph.metric_graph import EdgeSpec, GraphPoint
from src.simulation.bandit_clock import no_simultaneous_flat_check, pooled_violation_fraction
from src.simulation.edge_dynamics import (
    DOWNCROSSING_CALIBRATION,
    SimConfig,
    calibrate_downcrossing_constant,
    local_time_kernel,
    local_time_kernel_batch,
    simulate_reflected_edges,
)
from src.simulation.rng import edge_stream
from src.utils.config import settings

pytestmark = pytest.mark.slow

N_PATHS = 10_000
THREADS = 4


def _cfg(dt: float, horizon: float = 1.0, seed: int = 20240601, eps: float = 0.01) -> SimConfig:
    return SimConfig(dt=dt, horizon=horizon, seed=seed, kernel_eps=eps, downcross_delta=eps, quantum=2**-10)


def _half_line_batch(n_paths: int, cfg: SimConfig, edge_index: int = 0, first_replica: int = 0):
    edge = EdgeSpec(id="half_line", endpoints=("v",), length=math.inf)
    streams = [edge_stream(cfg.seed, r, edge_index) for r in range(first_replica, first_replica + n_paths)]
    return simulate_reflected_edges(edge, 0.0, cfg, streams)


def _flat_fraction(cfg: SimConfig, n_paths: int = 1000, chunk: int = 100) -> float:
    """Pooled simultaneous-flat fraction of two independent reflected BMs at one vertex."""
    reports = []
    for first in range(0, n_paths, chunk):
        a = _half_line_batch(chunk, cfg, edge_index=0, first_replica=first)
        b = _half_line_batch(chunk, cfg, edge_index=1, first_replica=first)
        for r in range(chunk):
            ledgers = [local_time_kernel(p.row(r), 0.0, cfg.kernel_eps) for p in (a, b)]
            reports.append(no_simultaneous_flat_check(ledgers, [0.5, 0.5]))
    return pooled_violation_fraction(reports)


class TestEdgeEstimators:
    def test_kernel_local_time_mean(self):
        batch = _half_line_batch(1000, _cfg(1e-4))
        final = local_time_kernel_batch(batch.coords, batch.qv_increments, 0.0, 0.01)[:, -1]
        assert final.mean() == pytest.approx(math.sqrt(2.0 / math.pi), abs=4 * final.std() / math.sqrt(1000) + 0.01)

    def test_kernel_is_stable_under_halving(self):
        batch = _half_line_batch(1000, _cfg(1e-4))
        wide = local_time_kernel_batch(batch.coords, batch.qv_increments, 0.0, 0.02)[:, -1].mean()
        narrow = local_time_kernel_batch(batch.coords, batch.qv_increments, 0.0, 0.01)[:, -1].mean()
        assert abs(wide - narrow) / wide < 0.15

    def test_downcrossing_agrees_with_kernel(self):
        constant = calibrate_downcrossing_constant(200, _cfg(1e-5))
        assert constant == pytest.approx(DOWNCROSSING_CALIBRATION, rel=0.1)


class TestExitDirection:
    def test_three_edge_star(self, star3):
        result = exit_direction_experiment(star3, "v0", 0.05, N_PATHS, _cfg(1e-5), threads=THREADS, chunk_size=250)
        assert result.unexited < N_PATHS // 100
        for frequency, weight in zip(result.frequencies, result.weights):
            assert abs(frequency - weight) < 0.02

    def test_skew_star(self, star2_skew):
        result = exit_direction_experiment(star2_skew, "v0", 0.05, N_PATHS, _cfg(1e-5), threads=THREADS, chunk_size=250)
        assert result.frequencies[0] == pytest.approx(0.7, abs=0.015)

    @pytest.mark.parametrize("root, weights", [("u", [0.4, 0.3, 0.3]), ("w", [0.5, 0.25, 0.25])])
    def test_h_tree_vertices(self, h_tree, root, weights):
        result = exit_direction_experiment(h_tree, root, 0.05, N_PATHS, _cfg(1e-5), threads=THREADS, chunk_size=250)
        assert result.unexited < N_PATHS // 100
        np.testing.assert_allclose(result.frequencies, weights, atol=0.02)

    def test_delta_refinement(self, star3):
        report = delta_refinement(star3, "v0", 0.1, 4000, _cfg(1e-5), threads=THREADS, chunk_size=250)
        assert report.passed, report.statistics


class TestMarginalLaw:
    def test_equal_weight_star_is_brownian(self, walsh2):
        oracle = brownian_marginal(1.0, N_PATHS, dt=1e-4, seed=101)
        result = marginal_law_test(
            walsh2, 1.0, N_PATHS, oracle, _cfg(1e-4), positive_edge="plus",
            threshold=settings.KS_THRESHOLD, threads=THREADS, chunk_size=250,
        )
        assert result.passed, result

    def test_skew_star_matches_flip_sampler(self, star2_skew):
        oracle = skew_bm_flip_sampler(0.7, 1.0, N_PATHS, dt=1e-4, seed=102)
        samples = graph_marginal_samples(
            star2_skew, 1.0, N_PATHS, _cfg(1e-4), positive_edge="e1", threads=THREADS, chunk_size=250
        )
        assert (samples > 0).mean() == pytest.approx(0.7, abs=0.015)
        result = marginal_law_test(
            star2_skew, 1.0, N_PATHS, oracle, _cfg(1e-4), positive_edge="e1",
            threshold=settings.KS_THRESHOLD, threads=THREADS, chunk_size=250,
        )
        assert result.passed, result

    def test_equal_weight_path_is_brownian(self, path3):
        oracle = brownian_marginal(1.0, N_PATHS, dt=1e-4, seed=103)
        result = marginal_law_test(
            path3, 1.0, N_PATHS, oracle, _cfg(1e-4), root="v1", positive_edge="m",
            threshold=settings.KS_THRESHOLD, threads=THREADS, chunk_size=250,
        )
        assert result.passed, result


class TestTimeChange:
    @pytest.mark.parametrize("fixture", ["star3", "h_tree"])
    def test_invariant_suite(self, request, fixture):
        report = run_invariant_suite(request.getfixturevalue(fixture), _cfg(1e-4), 200, threads=THREADS)
        assert report.passed, report.failed_checks

    def test_simultaneous_flats_thin_out(self):
        fractions = [_flat_fraction(_cfg(dt)) for dt in (1e-3, 1e-4, 1e-5)]
        assert fractions[1] < fractions[0]
        assert fractions[2] < fractions[1]

        cfg = _cfg(1e-3)
        twin = _half_line_batch(1, cfg).row(0)
        ledger = local_time_kernel(twin, 0.0, cfg.kernel_eps)
        duplicated = no_simultaneous_flat_check([ledger, ledger], [0.5, 0.5])
        assert pooled_violation_fraction([duplicated]) > 0.9


class TestGenerator:
    def test_star_vertex(self, star3):
        probe = make_admissible_probe(star3, "v0", h_grid=[0.01])
        result = generator_check(star3, probe, 20_000, _cfg(1e-4, horizon=0.01), threads=THREADS, chunk_size=500)
        assert abs(result.deviations[0]) <= 3 * result.probe.std_errors[0]

    def test_edge_interior(self, single_edge):
        probe = make_interior_probe(single_edge, GraphPoint(edge="e", coord=0.5), h_grid=[0.01])
        result = generator_check(
            single_edge, probe, 100_000, _cfg(1e-5, horizon=0.01), threads=THREADS, chunk_size=1000
        )
        assert abs(result.deviations[0]) < 0.1 * abs(probe.target)

    def test_error_shrinks_under_refinement(self, star3):
        probe = make_admissible_probe(star3, "v0")
        report = generator_refinement_check(star3, probe, 4000, _cfg(1e-4), threads=THREADS, chunk_size=500)
        assert report.passed, report.statistics
