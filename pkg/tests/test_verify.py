import numpy as np
import pytest

from src.evaluation.oracles import brownian_marginal
from src.evaluation.verify import (
    ExitExperimentResult,
    check_probe,
    default_root,
    exit_direction_experiment,
    exit_horizon,
    generator_check,
    ks_compare,
    make_admissible_probe,
    make_constant_probe,
    make_interior_probe,
    marginal_law_test,
    probe_values,
    run_invariant_suite,
)
from src.graph.metric_graph import GraphPoint
from src.simulation.edge_dynamics import SimConfig
from src.utils.exceptions import ExperimentRejectedError, ProbeError


@pytest.mark.parametrize(
    "fixture, root", [("star3", "v0"), ("h_tree", "u"), ("single_edge", "a"), ("path3", "v1")]
)
def test_default_root(request, fixture, root):
    assert default_root(request.getfixturevalue(fixture)) == root


class TestExitDirection:
    def test_frequencies_match_weights(self, star3):
        cfg = SimConfig(dt=1e-3, horizon=1.5, seed=17, kernel_eps=0.05, downcross_delta=0.05, quantum=0.02)
        result = exit_direction_experiment(star3, "v0", 0.5, 600, cfg, chunk_size=50)
        assert result.edges == ["e1", "e2", "e3"]
        assert sum(result.counts) + result.unexited == 600
        assert sum(result.frequencies) == pytest.approx(1.0)
        assert result.max_deviation < 0.09
        assert len(result.outcomes) == 600

    @pytest.mark.parametrize(
        "root, edges, weights",
        [("u", ["l1", "l2", "mid"], [0.4, 0.3, 0.3]), ("w", ["mid", "r1", "r2"], [0.5, 0.25, 0.25])],
    )
    def test_h_tree_vertices(self, h_tree, root, edges, weights):
        cfg = SimConfig(dt=1e-3, horizon=1.5, seed=19, kernel_eps=0.05, downcross_delta=0.05, quantum=0.02)
        result = exit_direction_experiment(h_tree, root, 0.5, 600, cfg, chunk_size=50)
        assert result.edges == edges
        assert result.weights == pytest.approx(weights)
        assert sum(result.counts) + result.unexited == 600
        assert result.max_deviation < 0.09

    def test_short_horizon_is_rejected(self, star3, fast_cfg):
        cfg = fast_cfg.model_copy(update={"horizon": 0.02})
        with pytest.raises(ExperimentRejectedError):
            exit_direction_experiment(star3, "v0", 0.5, 20, cfg)

    def test_delta_must_fit_inside_edges(self, path3, fast_cfg):
        with pytest.raises(ValueError):
            exit_direction_experiment(path3, "v1", 1.0, 10, fast_cfg)

    def test_exit_horizon_scales_with_delta(self, star3, fast_cfg):
        cfg = fast_cfg.model_copy(update={"horizon": 100.0})
        assert exit_horizon(star3, "v0", 0.5, cfg) == pytest.approx(10.0)
        assert exit_horizon(star3, "v0", 0.5, fast_cfg) == fast_cfg.horizon

    def test_report_uses_pass_key(self):
        result = ExitExperimentResult(
            root="v0",
            delta=0.1,
            n_paths=10,
            edges=["e1", "e2"],
            weights=[0.5, 0.5],
            counts=[6, 4],
            frequencies=[0.6, 0.4],
            ci_halfwidth=[0.4, 0.4],
            tolerance=[0.4, 0.4],
            unexited=0,
            max_deviation=0.1,
            passed=True,
            outcomes=[0] * 6 + [1] * 4,
        )
        payload = result.to_report({"graph": "g"}).to_json_dict()
        assert payload["pass"] is True
        assert payload["statistics"]["frequencies"] == {"e1": 0.6, "e2": 0.4}
        assert "outcomes" not in result.model_dump()


class TestProbes:
    def test_admissible_probe_passes_domain_checks(self, star3, h_tree):
        probe = make_admissible_probe(star3, "v0")
        assert probe.target == 0.5
        assert len(probe.pieces) == 3
        make_admissible_probe(h_tree, "u")

    def test_discontinuous_probe_rejected(self, star3):
        probe = make_admissible_probe(star3, "v0")
        piece = probe.pieces[0]
        broken = piece.model_copy(update={"coeffs": (piece.coeffs[0] + 0.5, *piece.coeffs[1:])})
        with pytest.raises(ProbeError, match="discontinuous"):
            check_probe(star3, probe.model_copy(update={"pieces": [broken, *probe.pieces[1:]]}))

    def test_gluing_violation_rejected(self, star3):
        probe = make_admissible_probe(star3, "v0")
        piece = probe.pieces[0]
        tilted = piece.model_copy(update={"coeffs": (piece.coeffs[0], piece.coeffs[1] + 1.0, piece.coeffs[2])})
        with pytest.raises(ProbeError, match="gluing"):
            check_probe(star3, probe.model_copy(update={"pieces": [tilted, *probe.pieces[1:]]}))

    def test_interior_probe(self, single_edge):
        probe = make_interior_probe(single_edge, GraphPoint(edge="e", coord=0.5))
        assert probe.target == pytest.approx(0.5)
        assert probe.vertex is None

    def test_interior_probe_at_vertex_rejected(self, single_edge):
        with pytest.raises(ProbeError):
            make_interior_probe(single_edge, GraphPoint(edge="e", coord=0.0))

    def test_probe_vanishes_outside_taper(self, single_edge):
        probe = make_interior_probe(single_edge, GraphPoint(edge="e", coord=0.5), radius=0.1)
        values = probe_values(single_edge, probe, np.zeros(3, dtype=int), np.array([0.5, 0.55, 0.75]))
        assert values[0] == 0.0
        assert values[1] == pytest.approx(0.5 * 0.05**2)
        assert values[2] == 0.0


class TestGeneratorCheck:
    def test_constant_probe_is_exact(self, star3, fast_cfg):
        result = generator_check(star3, make_constant_probe(star3), 8, fast_cfg)
        assert result.probe.estimates == [0.0]
        assert result.passed

    def test_interior_point(self, single_edge):
        cfg = SimConfig(dt=1e-3, horizon=0.01, seed=5, kernel_eps=0.05, downcross_delta=0.05, quantum=0.02)
        probe = make_interior_probe(single_edge, GraphPoint(edge="e", coord=0.5), h_grid=[0.004])
        result = generator_check(single_edge, probe, 2000, cfg, chunk_size=250)
        assert result.probe.h_grid == pytest.approx([0.004])
        assert abs(result.deviations[0]) < 0.08


class TestMarginalLaw:
    def test_ks_compare(self):
        a = np.linspace(0.0, 1.0, 200)
        assert ks_compare(a, a).passed
        shifted = ks_compare(a, a + 0.5)
        assert not shifted.passed
        assert shifted.statistic == pytest.approx(0.5, abs=0.01)

    def test_symmetric_star_is_brownian(self, walsh2, fast_cfg):
        oracle = brownian_marginal(0.25, 800, dt=1e-3, seed=1)
        result = marginal_law_test(
            walsh2, 0.25, 800, oracle, fast_cfg, positive_edge="plus", threshold=0.1, chunk_size=100
        )
        assert result.n == 800
        assert result.passed, result


class TestInvariantSuite:
    @pytest.mark.parametrize("fixture", ["star3", "h_tree"])
    def test_passes(self, request, fixture, fast_cfg):
        report = run_invariant_suite(request.getfixturevalue(fixture), fast_cfg, 4)
        assert report.passed, report.statistics["failed_checks"]
        assert report.statistics["checks"]["budget_conservation"]["pass"] is True

    def test_star_runs_solver_checks(self, star3, fast_cfg):
        report = run_invariant_suite(star3, fast_cfg, 2)
        assert {"allocate_vs_solve", "solve_bracket", "no_simultaneous_flat"} <= set(report.statistics["checks"])

    def test_negative_control_fails(self, star3, fast_cfg):
        report = run_invariant_suite(star3, fast_cfg, 2, negative_control=True)
        assert not report.passed
        assert "budget_conservation" in report.failed_checks
        assert report.to_json_dict()["pass"] is False
