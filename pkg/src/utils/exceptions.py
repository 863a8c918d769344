"""
Exception hierarchy for the metric-graph diffusion simulator.

Graph validation problems are reported as data (see ValidationReport); the
exceptions below are reserved for conditions that stop a computation.
"""

from typing import Any, List, Optional


class GraphDiffusionError(Exception):
    """Base class for all simulator errors."""


class GraphConfigError(GraphDiffusionError):
    """A graph config document could not be parsed or has an invalid shape."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = ""
        if path:
            location += f"{path}"
        if line is not None:
            location += f":{line}" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class GraphValidationError(GraphDiffusionError):
    """A graph parsed fine but violates the model hypotheses."""

    def __init__(self, report: Any):
        self.report = report
        rules = ", ".join(sorted({v.rule for v in report.violations}))
        super().__init__(f"Graph validation failed: {rules}")


class SimulationDivergedError(GraphDiffusionError):
    """The Euler scheme produced a non-finite state."""

    def __init__(self, edge: str, step: int, value: float):
        self.edge = edge
        self.step = step
        self.value = value
        super().__init__(
            f"Edge {edge} diverged at step {step} (state={value}); "
            "check drift/volatility coefficients or reduce dt"
        )


class LedgerStarvationError(GraphDiffusionError):
    """A local-time ledger ran out before the global horizon was allocated."""

    def __init__(self, edge: str, allocated: float, horizon: float):
        self.edge = edge
        self.allocated = allocated
        self.horizon = horizon
        super().__init__(
            f"Ledger of {edge} exhausted after {allocated:.6g}s of {horizon:.6g}s allocated; "
            "simulate more edge-clock time (raise --edge-horizon)"
        )


class ExclusivityViolationError(GraphDiffusionError):
    """More than one frozen edge sits outside the vertex window."""

    def __init__(self, time: float, vertex: str, edges: List[str]):
        self.time = time
        self.vertex = vertex
        self.edges = edges
        super().__init__(
            f"At t={time:.6g} edges {edges} are simultaneously away from {vertex}; "
            "dt too coarse or ledger/clock mismatch"
        )


class ProbeError(GraphDiffusionError):
    """A generator test function is outside the generator domain."""


class ExperimentRejectedError(GraphDiffusionError):
    """An experiment produced too many unusable replicas to be trusted."""
