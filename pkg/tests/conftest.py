"""Shared fixtures: bundled graphs, small inline graphs and a fast simulation config."""

from pathlib import Path

import pytest

from src.graph.loader import graph_from_document, load_graph
from src.graph.metric_graph import MetricGraph
from src.simulation.edge_dynamics import SimConfig
from src.utils.config import settings

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def isolated_outputs(tmp_path, monkeypatch):
    """Keep logs and default run directories out of the working tree."""
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path / "runs"))


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture
def star3() -> MetricGraph:
    return load_graph(CONFIGS / "star3.yaml")


@pytest.fixture
def star2_skew() -> MetricGraph:
    return load_graph(CONFIGS / "star2_skew.yaml")


@pytest.fixture
def single_edge() -> MetricGraph:
    return load_graph(CONFIGS / "single_edge.yaml")


@pytest.fixture
def path3() -> MetricGraph:
    return load_graph(CONFIGS / "path3.yaml")


@pytest.fixture
def h_tree() -> MetricGraph:
    return load_graph(CONFIGS / "h_tree.yaml")


def finite_star_document(weights=(0.5, 0.5), length: float = 2.0) -> dict:
    """Star with finite edges (JSON-safe, no infinite lengths)."""
    leaves = [f"x{k + 1}" for k in range(len(weights))]
    return {
        "name": "finite_star",
        "vertices": ["v0", *leaves],
        "edges": [
            {"id": f"e{k + 1}", "endpoints": ["v0", leaf], "length": length}
            for k, leaf in enumerate(leaves)
        ],
        "weights": {"v0": {f"e{k + 1}": w for k, w in enumerate(weights)}},
    }


@pytest.fixture
def finite_star_doc() -> dict:
    return finite_star_document()


@pytest.fixture
def walsh2() -> MetricGraph:
    """Two half-lines with equal weights: the signed coordinate is a Brownian motion."""
    return graph_from_document(
        {
            "name": "walsh2",
            "vertices": ["v0"],
            "edges": [
                {"id": "plus", "endpoints": ["v0"], "length": float("inf")},
                {"id": "minus", "endpoints": ["v0"], "length": float("inf")},
            ],
            "weights": {"v0": {"plus": 0.5, "minus": 0.5}},
        }
    )


@pytest.fixture
def fast_cfg() -> SimConfig:
    """Coarse grid for structural tests."""
    return SimConfig(dt=1e-3, horizon=0.2, seed=7, kernel_eps=0.05, downcross_delta=0.05, quantum=0.02)
