import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from src.graph.coefficients import Coefficient, CoefficientFamily
from src.graph.metric_graph import EdgeSpec
from src.simulation.edge_dynamics import (
    DOWNCROSSING_CALIBRATION,
    EdgePath,
    LocalTimeLedger,
    SimConfig,
    compose_ledger,
    fold_into_edge,
    inverse_local_time,
    ledger_at,
    ledgers_for_edge,
    local_time_downcrossing,
    local_time_kernel,
    local_time_kernel_batch,
    simulate_reflected_edge,
    simulate_reflected_edges,
)
from src.simulation.rng import EdgeStreams, batch_normals, edge_stream
from src.utils.config import Settings
from src.utils.exceptions import SimulationDivergedError

UNIT = EdgeSpec(id="e", endpoints=("a", "b"), length=1.0)
HALF_LINE = EdgeSpec(id="h", endpoints=("v",), length=math.inf)


class TestSimConfig:
    def test_horizon_shorter_than_dt(self):
        with pytest.raises(ValidationError):
            SimConfig(dt=0.1, horizon=0.05, seed=1, kernel_eps=0.1, downcross_delta=0.1)

    def test_non_positive_dt(self):
        with pytest.raises(ValidationError):
            SimConfig(dt=0.0, horizon=1.0, seed=1, kernel_eps=0.1, downcross_delta=0.1)

    def test_step_counts(self):
        cfg = SimConfig(dt=1e-3, horizon=0.5, edge_horizon=0.8, seed=1, kernel_eps=0.1, downcross_delta=0.1)
        assert cfg.n_steps == 500
        assert cfg.edge_steps == 800
        assert cfg.tolerance == cfg.quantum

    def test_from_settings_ignores_missing_overrides(self):
        cfg = SimConfig.from_settings(Settings(), dt=2e-3, seed=None)
        assert cfg.dt == 2e-3
        assert cfg.seed == Settings().SEED

    def test_resolution_warning(self):
        cfg = SimConfig(dt=1e-2, horizon=1.0, seed=1, kernel_eps=0.01, downcross_delta=0.01)
        assert not cfg.check_resolution(1.0)
        assert SimConfig(dt=1e-6, horizon=1.0, seed=1, kernel_eps=0.1, downcross_delta=0.1).check_resolution(1.0)


def test_fold_into_edge():
    np.testing.assert_allclose(fold_into_edge(np.array([-0.25, 0.5, 1.25, 2.5]), 1.0), [0.25, 0.5, 0.75, 0.5])
    np.testing.assert_allclose(fold_into_edge(np.array([-3.0, 2.0]), math.inf), [3.0, 2.0])


class TestStreams:
    def test_same_key_same_draws(self):
        a = edge_stream(5, 2, 1).standard_normal(10)
        b = EdgeStreams(5, 2).for_edge(1).standard_normal(10)
        np.testing.assert_array_equal(a, b)

    def test_distinct_keys_differ(self):
        base = edge_stream(5, 0, 0).standard_normal(10)
        assert not np.array_equal(base, edge_stream(5, 1, 0).standard_normal(10))
        assert not np.array_equal(base, edge_stream(5, 0, 1).standard_normal(10))
        assert not np.array_equal(base, edge_stream(6, 0, 0).standard_normal(10))

    def test_batch_normals_rows(self):
        rows = batch_normals([edge_stream(9, 3, 2), edge_stream(9, 4, 2)], 20)
        assert rows.shape == (2, 20)
        np.testing.assert_array_equal(rows[1], edge_stream(9, 4, 2).standard_normal(20))

    def test_seed_range(self):
        with pytest.raises(ValueError):
            edge_stream(-1, 0, 0)


class TestSimulation:
    def test_stays_in_range(self, fast_cfg):
        path = simulate_reflected_edge(UNIT, 0.5, fast_cfg, edge_stream(1, 0, 0))
        assert path.n_steps == fast_cfg.edge_steps
        assert path.coords[0] == 0.5
        assert np.all((path.coords >= 0.0) & (path.coords <= 1.0))

    def test_quadratic_variation_increments(self, fast_cfg):
        edge = EdgeSpec(
            id="e",
            endpoints=("v",),
            length=math.inf,
            volatility=Coefficient(family=CoefficientFamily.CONSTANT, coeffs=(2.0,)),
        )
        path = simulate_reflected_edge(edge, 0.0, fast_cfg, edge_stream(1, 0, 0))
        np.testing.assert_allclose(path.qv_increments, 4.0 * fast_cfg.dt)

    def test_reproducible(self, fast_cfg):
        a = simulate_reflected_edge(UNIT, 0.2, fast_cfg, edge_stream(3, 0, 0))
        b = simulate_reflected_edge(UNIT, 0.2, fast_cfg, edge_stream(3, 0, 0))
        np.testing.assert_array_equal(a.coords, b.coords)

    def test_batch_rows_match_single_paths(self, fast_cfg):
        streams = [edge_stream(11, r, 0) for r in range(4)]
        batch = simulate_reflected_edges(UNIT, 0.3, fast_cfg, streams)
        assert len(batch) == 4
        single = simulate_reflected_edge(UNIT, 0.3, fast_cfg, edge_stream(11, 2, 0))
        np.testing.assert_array_equal(batch.row(2).coords, single.coords)

    def test_second_moment_of_reflected_bm(self):
        # |W_1|^2 has mean 1 and variance 2
        cfg = SimConfig(dt=1e-3, horizon=1.0, seed=31, kernel_eps=0.05, downcross_delta=0.05)
        n = 2000
        batch = simulate_reflected_edges(HALF_LINE, 0.0, cfg, [edge_stream(cfg.seed, r, 0) for r in range(n)])
        second = np.square(batch.coords[:, -1])
        assert second.mean() == pytest.approx(1.0, abs=4.0 * math.sqrt(2.0 / n))

    def test_negative_drift_keeps_exponential_law(self):
        # reflected BM with drift -1 is stationary under Exp(rate 2)
        pulled = EdgeSpec(id="h", endpoints=("v",), length=math.inf, drift=Coefficient.constant(-1.0))
        cfg = SimConfig(dt=1e-3, horizon=1.0, seed=32, kernel_eps=0.05, downcross_delta=0.05)
        n = 4000
        x0 = np.random.default_rng(cfg.seed).exponential(0.5, n)
        batch = simulate_reflected_edges(pulled, x0, cfg, [edge_stream(cfg.seed, r, 0) for r in range(n)])
        final = batch.coords[:, -1]
        assert final.mean() == pytest.approx(0.5, abs=0.03)
        assert stats.kstest(final, stats.expon(scale=0.5).cdf).statistic < 0.05

    def test_start_outside_edge(self, fast_cfg):
        with pytest.raises(ValueError):
            simulate_reflected_edge(UNIT, 1.5, fast_cfg, edge_stream(1, 0, 0))

    def test_divergence_is_reported(self):
        explosive = EdgeSpec(
            id="boom",
            endpoints=("v",),
            length=math.inf,
            drift=Coefficient(family=CoefficientFamily.POLYNOMIAL, coeffs=(0.0, 0.0, 0.0, 10.0)),
        )
        cfg = SimConfig(dt=0.1, horizon=3.0, seed=1, kernel_eps=0.1, downcross_delta=0.1)
        with pytest.raises(SimulationDivergedError) as excinfo:
            simulate_reflected_edge(explosive, 1.0, cfg, edge_stream(1, 0, 0))
        assert excinfo.value.edge == "boom"


def _path(coords, dt=0.1, qv=None):
    coords = np.asarray(coords, dtype=float)
    qv = np.full(coords.size - 1, dt) if qv is None else np.asarray(qv, dtype=float)
    return EdgePath(edge="e", dt=dt, coords=coords, qv_increments=qv)


class TestLocalTime:
    def test_kernel_counts_window_steps(self):
        path = _path([0.0, 0.05, 0.5, 0.02, 0.9], dt=0.1)
        ledger = local_time_kernel(path, 0.0, 0.1, vertex="a")
        # steps 0, 1 and 3 start inside the window, each adds dt / (2 eps)
        np.testing.assert_allclose(ledger.values, [0.0, 0.5, 1.0, 1.0, 1.5])
        assert ledger.vertex == "a"

    def test_kernel_nondecreasing_from_zero(self, fast_cfg):
        path = simulate_reflected_edge(UNIT, 0.0, fast_cfg, edge_stream(2, 0, 0))
        ledger = local_time_kernel(path, 0.0, fast_cfg.kernel_eps)
        assert ledger.values[0] == 0.0
        assert np.all(np.diff(ledger.values) >= 0.0)

    def test_away_from_vertex_is_zero(self):
        path = _path(np.linspace(0.5, 0.9, 9))
        assert not local_time_kernel(path, 0.0, 0.1).values.any()
        assert not local_time_downcrossing(path, 0.0, 0.1).values.any()

    def test_downcrossing_counts_completed_excursions(self):
        path = _path([0.0, 0.2, 0.3, 0.04, 0.25, 0.01, 0.0], qv=np.full(6, 1e-6))
        ledger = local_time_downcrossing(path, 0.0, 0.2, calibration=1.0)
        steps = np.flatnonzero(np.diff(ledger.values))
        np.testing.assert_array_equal(steps + 1, [3, 5])
        assert np.all(np.diff(ledger.values) >= 0.0)
        assert ledger.values[-1] == pytest.approx(0.4)

    @pytest.mark.parametrize("qv", [1e-6, 1e-3])
    def test_downcrossing_ledger_is_scaled_count(self, qv):
        # five excursions 0 -> 0.1 -> 0
        coords = [0.0] + [0.1, 0.0] * 5
        path = _path(coords, qv=np.full(len(coords) - 1, qv))
        assert local_time_downcrossing(path, 0.0, 0.1, calibration=1.0).values[-1] == pytest.approx(0.5)
        ledger = local_time_downcrossing(path, 0.0, 0.1)
        assert ledger.values[-1] == pytest.approx(5 * DOWNCROSSING_CALIBRATION * 0.1)

    def test_kernel_batch_matches_rows(self, fast_cfg):
        streams = [edge_stream(4, r, 0) for r in range(3)]
        batch = simulate_reflected_edges(HALF_LINE, 0.0, fast_cfg, streams)
        values = local_time_kernel_batch(batch.coords, batch.qv_increments, 0.0, 0.05)
        np.testing.assert_array_equal(values[1], local_time_kernel(batch.row(1), 0.0, 0.05).values)

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            local_time_kernel(_path([0.0, 0.1]), 0.0, 0.0)
        with pytest.raises(ValueError):
            local_time_downcrossing(_path([0.0, 0.1]), 0.0, -1.0)

    def test_reflected_bm_mean_local_time(self):
        # E L(1) = E|B_1| = sqrt(2 / pi) for reflected Brownian motion
        cfg = SimConfig(dt=2e-4, horizon=1.0, seed=21, kernel_eps=0.02, downcross_delta=0.02)
        streams = [edge_stream(cfg.seed, r, 0) for r in range(1000)]
        batch = simulate_reflected_edges(HALF_LINE, 0.0, cfg, streams)
        final = local_time_kernel_batch(batch.coords, batch.qv_increments, 0.0, cfg.kernel_eps)[:, -1]
        std_error = final.std(ddof=1) / math.sqrt(final.size)
        assert abs(final.mean() - math.sqrt(2.0 / math.pi)) < 4.0 * std_error + 0.03


class TestLedgerOperations:
    def ledger(self):
        return LocalTimeLedger(vertex="v", edge="e", dt=0.1, values=np.array([0.0, 0.0, 1.0, 2.0, 3.0]))

    def test_inverse_local_time(self):
        ledger = self.ledger()
        assert inverse_local_time(ledger, 0.5, 2.0) == pytest.approx(0.2)
        assert inverse_local_time(ledger, 0.5, 0.0) == 0.0
        assert math.isinf(inverse_local_time(ledger, 0.5, 100.0))
        with pytest.raises(ValueError):
            inverse_local_time(ledger, 0.0, 1.0)

    def test_inverse_is_monotone_and_left_continuous(self):
        ledger = LocalTimeLedger(
            vertex="v", edge="e", dt=0.1, values=np.array([0.0, 0.0, 0.2, 0.2, 0.2, 0.5, 0.9, 0.9, 1.0])
        )
        levels = np.linspace(0.01, 0.99, 50)
        inverse = np.array([inverse_local_time(ledger, 1.0, level) for level in levels])
        assert np.all(np.diff(inverse) >= 0.0)
        for level in levels:
            assert inverse_local_time(ledger, 1.0, level - 1e-12) == inverse_local_time(ledger, 1.0, level)
        # the flat at 0.2 is jumped over just above its level
        assert inverse_local_time(ledger, 1.0, 0.2 - 1e-12) == pytest.approx(0.2)
        assert inverse_local_time(ledger, 1.0, 0.2) == pytest.approx(0.2)
        assert inverse_local_time(ledger, 1.0, 0.2 + 1e-9) == pytest.approx(0.5)

    def test_compose_ledger(self):
        composed = compose_ledger(self.ledger(), np.array([0, 2, 2, 4]), vertex="w")
        np.testing.assert_array_equal(composed.values, [0.0, 1.0, 1.0, 3.0])
        assert composed.vertex == "w"
        assert ledger_at(composed, 3) == 3.0

    def test_ledgers_for_edge(self, h_tree, single_edge, fast_cfg):
        mid = h_tree.edge("mid")
        path = simulate_reflected_edge(mid, 0.0, fast_cfg, edge_stream(1, 0, 2))
        assert set(ledgers_for_edge(h_tree, mid, path, fast_cfg)) == {"u", "w"}
        edge = single_edge.edge("e")
        assert ledgers_for_edge(single_edge, edge, simulate_reflected_edge(edge, 0.0, fast_cfg, edge_stream(1, 0, 0)), fast_cfg) == {}

    def test_frames(self):
        frame = self.ledger().to_frame()
        assert list(frame.columns) == ["t", "value"]
        assert len(frame) == 5
