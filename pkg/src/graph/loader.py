"""
YAML graph config loader.

Parses graph documents into MetricGraph instances, reporting shape errors
with the line they occur on. Degree-1 vertices without a weights row get
weight 1 on their only edge.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import yaml
from pydantic import ValidationError

from .metric_graph import MetricGraph, ValidationReport, validate_graph
from ..utils.exceptions import GraphConfigError, GraphValidationError

logger = logging.getLogger(__name__)


def _node_line(root: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    """Walk a composed YAML node tree along a pydantic error location."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == str(key)), None)
            if match is None:
                break
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def _with_leaf_weights(doc: Dict[str, Any]) -> Dict[str, Any]:
    """Fill in weight 1 for degree-1 vertices that have no weights row."""
    weights = dict(doc.get("weights") or {})
    edges = doc.get("edges") or []
    for vertex in doc.get("vertices") or []:
        if vertex in weights:
            continue
        incident = [
            e.get("id")
            for e in edges
            if isinstance(e, dict) and vertex in (e.get("endpoints") or [])
        ]
        if len(incident) == 1:
            weights[vertex] = {incident[0]: 1.0}
    return {**doc, "weights": weights}


def graph_from_document(
    doc: Any, source: Optional[str] = None, root: Optional[yaml.Node] = None
) -> MetricGraph:
    """
    Build a graph from an already parsed document (a YAML mapping or a JSON body).

    Args:
        doc: Parsed document.
        source: Path shown in error messages.
        root: Composed YAML node tree used to locate errors.

    Raises:
        GraphConfigError: On unknown keys or bad types.
    """
    if not isinstance(doc, dict):
        raise GraphConfigError("graph document must be a mapping", line=1 if root is not None else None, path=source)

    try:
        return MetricGraph.model_validate(_with_leaf_weights(doc))
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(part) for part in first["loc"])
        raise GraphConfigError(
            f"{loc}: {first['msg']}", line=_node_line(root, first["loc"]), path=source
        ) from e


def parse_graph(text: str, source: Optional[str] = None) -> MetricGraph:
    """
    Parse a YAML graph document.

    Args:
        text: YAML document.
        source: Path shown in error messages.

    Returns:
        MetricGraph: Parsed (not yet validated) graph.

    Raises:
        GraphConfigError: On YAML syntax errors, unknown keys or bad types.
    """
    try:
        doc = yaml.safe_load(text)
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise GraphConfigError(
            f"YAML syntax error: {getattr(e, 'problem', e)}",
            line=mark.line + 1 if mark is not None else None,
            path=source,
        ) from e

    graph = graph_from_document(doc, source=source, root=root)
    logger.debug(f"Parsed graph {graph.name or source}: {len(graph.vertices)} vertices, {len(graph.edges)} edges")
    return graph


def load_graph(path: Union[str, Path]) -> MetricGraph:
    """
    Load a graph config file.

    Args:
        path: Path to a YAML graph document.

    Returns:
        MetricGraph: Parsed graph.

    Raises:
        GraphConfigError: If the file is missing or malformed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise GraphConfigError(f"cannot read graph config: {e}", path=str(path)) from e
    graph = parse_graph(text, source=str(path))
    if graph.name is None:
        graph = MetricGraph(
            name=path.stem, vertices=graph.vertices, edges=graph.edges, weights=graph.weights
        )
    return graph


def load_validated_graph(path: Union[str, Path], sigma_min: float = 1e-3) -> MetricGraph:
    """
    Load a graph config and require it to satisfy every model hypothesis.

    Raises:
        GraphConfigError: If the file is malformed.
        GraphValidationError: If validation reports violations.
    """
    graph = load_graph(path)
    report: ValidationReport = validate_graph(graph, sigma_min=sigma_min)
    if not report.ok:
        for violation in report.violations:
            logger.error(f"{path}: {violation.rule} {violation.ids}: {violation.message}")
        raise GraphValidationError(report)
    return graph

