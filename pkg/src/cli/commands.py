"""
Command-line entry point.

Subcommands:
    simulate   one graph path (CSV) with leaf clocks
    exit-prob  exit-direction experiment (JSON report)
    verify     invariant suite, optionally a generator check (JSON report)
    validate   graph config validation report
    serve      run the FastAPI service

Exit statuses: 0 pass, 1 check failure, 2 config error, 3 runtime failure
(ledger starvation, divergence, exclusivity, rejected experiment).
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from .. import __version__
from ..api.models import ExperimentReport, RunManifest
from ..evaluation.verify import (
    default_root,
    exit_direction_experiment,
    generator_check,
    make_admissible_probe,
    run_invariant_suite,
)
from ..graph.loader import load_graph, load_validated_graph
from ..graph.metric_graph import GraphPoint, MetricGraph, validate_graph
from ..simulation.assembler import assemble_recursive
from ..simulation.edge_dynamics import SimConfig, ledgers_for_edge
from ..simulation.rng import EdgeStreams
from ..utils.config import settings
from ..utils.exceptions import (
    ExclusivityViolationError,
    ExperimentRejectedError,
    GraphConfigError,
    GraphValidationError,
    LedgerStarvationError,
    ProbeError,
    SimulationDivergedError,
)
from ..utils.file_handler import ResultStorage
from ..utils.logging_config import get_performance_logger, setup_logging

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def _parse_start(value: str) -> GraphPoint:
    edge, sep, coord = value.rpartition(":")
    if not sep or not edge:
        raise argparse.ArgumentTypeError("start must look like EDGE_ID:COORD")
    try:
        return GraphPoint(edge=edge, coord=float(coord))
    except (ValueError, ValidationError) as e:
        raise argparse.ArgumentTypeError(f"invalid start point {value!r}: {e}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", required=True, help="YAML graph config")
    parser.add_argument("--horizon", type=float, default=None, help=f"global horizon in s (default {settings.HORIZON})")
    parser.add_argument("--edge-horizon", type=float, default=None, help="edge-clock budget in s (default: horizon)")
    parser.add_argument("--dt", type=float, default=None, help=f"time step (default {settings.DT})")
    parser.add_argument("--quantum", type=float, default=None, help=f"allocation quantum (default {settings.QUANTUM})")
    parser.add_argument("--kernel-eps", type=float, default=None, help=f"kernel half-width (default {settings.KERNEL_EPS})")
    parser.add_argument(
        "--delta", type=float, default=None,
        help=f"downcrossing level (default {settings.DOWNCROSS_DELTA}); exit radius for exit-prob (default {settings.EXIT_DELTA})",
    )
    parser.add_argument("--seed", type=int, default=None, help=f"master seed (default {settings.SEED})")
    parser.add_argument("--root", default=None, help="root vertex (default: first interior vertex)")
    parser.add_argument("--out", default=None, help=f"output directory (default under {settings.OUTPUT_DIR})")
    parser.add_argument("--threads", type=int, default=settings.THREADS, help="worker threads (default %(default)s)")
    parser.add_argument("--chunk-size", type=int, default=settings.CHUNK_SIZE, help="replicas per batch (default %(default)s)")
    parser.add_argument("--sigma-min", type=float, default=settings.SIGMA_MIN, help="ellipticity floor (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(prog="graph-diffusion", description="Diffusions on loop-free metric graphs.")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="log level (default %(default)s)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="simulate one graph path")
    _add_common(simulate)
    simulate.add_argument("--start", type=_parse_start, default=None, help="start point EDGE_ID:COORD (default: root)")
    simulate.add_argument("--dump-edges", action="store_true", help="also write edge paths and local-time ledgers")
    simulate.set_defaults(func=cmd_simulate)

    exit_prob = sub.add_parser("exit-prob", help="exit-direction experiment")
    _add_common(exit_prob)
    exit_prob.add_argument("--paths", type=int, default=settings.PATHS, help="replicas (default %(default)s)")
    exit_prob.add_argument("--tolerance", type=float, default=None, help="fixed absolute tolerance (default: binomial CI)")
    exit_prob.add_argument("--raw", action="store_true", help="also write per-path outcomes CSV")
    exit_prob.set_defaults(func=cmd_exit_prob)

    verify = sub.add_parser("verify", help="invariant suite")
    _add_common(verify)
    verify.add_argument("--paths", type=int, default=settings.PATHS, help="replicas (default %(default)s)")
    verify.add_argument("--negative-control", action="store_true", help="feed a mismatched clock to the checks")
    verify.add_argument("--generator", action="store_true", help="also run a generator check at the root")
    verify.add_argument("--h", type=float, default=0.01, help="generator check time (default %(default)s)")
    verify.set_defaults(func=cmd_verify)

    validate = sub.add_parser("validate", help="validate a graph config")
    validate.add_argument("--graph", required=True, help="YAML graph config")
    validate.add_argument("--sigma-min", type=float, default=settings.SIGMA_MIN, help="ellipticity floor (default %(default)s)")
    validate.set_defaults(func=cmd_validate)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default=settings.HOST, help="bind host (default %(default)s)")
    serve.add_argument("--port", type=int, default=settings.PORT, help="bind port (default %(default)s)")
    serve.set_defaults(func=cmd_serve)
    return parser


def resolve_config(args: argparse.Namespace, **extra: Optional[float]) -> SimConfig:
    """SimConfig from settings overridden by command-line flags."""
    return SimConfig.from_settings(
        settings,
        dt=args.dt,
        horizon=args.horizon,
        edge_horizon=args.edge_horizon,
        seed=args.seed,
        kernel_eps=args.kernel_eps,
        quantum=args.quantum,
        **extra,
    )


def _storage(args: argparse.Namespace, g: MetricGraph) -> ResultStorage:
    out = args.out or str(Path(settings.OUTPUT_DIR) / f"{g.name}-{args.command}")
    return ResultStorage(out)


def _manifest(args: argparse.Namespace, cfg: SimConfig, storage: ResultStorage, **parameters: Any) -> RunManifest:
    resolved: Dict[str, Any] = {
        **cfg.model_dump(mode="json"),
        "edge_steps": cfg.edge_steps,
        "n_steps": cfg.n_steps,
        "solve_tol": cfg.tolerance,
        "threads": args.threads,
        "chunk_size": args.chunk_size,
        "sigma_min": args.sigma_min,
        **parameters,
    }
    manifest = RunManifest(
        command=args.command,
        config_path=str(args.graph),
        parameters=resolved,
        seed=cfg.seed,
        output_dir=str(storage.output_dir),
        tool_version=__version__,
    )
    storage.write_manifest(manifest)
    return manifest


def _emit(report: ExperimentReport) -> None:
    json.dump(report.to_json_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _load(args: argparse.Namespace) -> MetricGraph:
    return load_validated_graph(args.graph, sigma_min=args.sigma_min)


def cmd_simulate(args: argparse.Namespace) -> int:
    """Simulate one path and write path.csv, clocks.csv and manifest.json."""
    g = _load(args)
    cfg = resolve_config(args, downcross_delta=args.delta)
    cfg.check_resolution(max(e.sigma_max() for e in g.edges))
    root = args.root or default_root(g)
    storage = _storage(args, g)
    start = args.start.model_dump() if args.start is not None else None
    _manifest(args, cfg, storage, root=root, start=start, dump_edges=args.dump_edges)

    gp = assemble_recursive(g, root, cfg, rng=EdgeStreams(cfg.seed), start=args.start)
    storage.write_csv("path.csv", gp.to_frame())
    storage.write_csv("clocks.csv", gp.clocks_frame())
    if args.dump_edges:
        for edge in g.edges:
            path = gp.edge_paths[edge.id]
            storage.write_csv(f"edge_{edge.id}.csv", path.to_frame())
            for vertex, ledger in ledgers_for_edge(g, edge, path, cfg).items():
                storage.write_csv(f"ledger_{vertex}_{edge.id}.csv", ledger.to_frame())
    logger.info(f"Simulated {cfg.n_steps} steps on {g.name}; outputs in {storage.output_dir}")
    return EXIT_PASS


def cmd_exit_prob(args: argparse.Namespace) -> int:
    """Exit-direction experiment; exit status 1 if a frequency misses its weight."""
    g = _load(args)
    cfg = resolve_config(args, downcross_delta=args.delta)
    delta = args.delta if args.delta is not None else settings.EXIT_DELTA
    root = args.root or default_root(g)
    storage = _storage(args, g)
    _manifest(args, cfg, storage, root=root, delta=delta, paths=args.paths, tolerance=args.tolerance)

    result = exit_direction_experiment(
        g, root, delta, args.paths, cfg, threads=args.threads, chunk_size=args.chunk_size, tolerance=args.tolerance
    )
    report = result.to_report({"graph": g.name, "root": root, "delta": delta, "n_paths": args.paths, **cfg.model_dump(mode="json")})
    storage.write_json("report.json", report.to_json_dict())
    if args.raw:
        labels = [result.edges[k] if k >= 0 else "" for k in result.outcomes]
        storage.write_csv("outcomes.csv", pd.DataFrame({"replica": range(len(labels)), "exit_edge": labels}))
    _emit(report)
    return EXIT_PASS if report.passed else EXIT_CHECK_FAILED


def cmd_verify(args: argparse.Namespace) -> int:
    """Invariant suite (and optional generator check); exit status 1 naming failed checks."""
    g = _load(args)
    cfg = resolve_config(args, downcross_delta=args.delta)
    root = args.root or default_root(g)
    storage = _storage(args, g)
    _manifest(
        args, cfg, storage, root=root, paths=args.paths, negative_control=args.negative_control,
        generator=args.generator, h=args.h,
    )

    storage.write_json("report.schema.json", ExperimentReport.model_json_schema(by_alias=True))
    reports: List[ExperimentReport] = [
        run_invariant_suite(
            g, cfg, args.paths, root=root, negative_control=args.negative_control,
            threads=args.threads, chunk_size=args.chunk_size,
        )
    ]
    if args.generator:
        probe = make_admissible_probe(g, root, h_grid=[args.h])
        check = generator_check(g, probe, args.paths, cfg, root=root, threads=args.threads, chunk_size=args.chunk_size)
        reports.append(
            ExperimentReport(
                experiment="generator",
                params={"graph": g.name, "root": root, "n_paths": args.paths, **cfg.model_dump(mode="json")},
                statistics={
                    "h": check.probe.h_grid,
                    "estimates": check.probe.estimates,
                    "target": probe.target,
                    "deviations": check.deviations,
                },
                ci={"std_errors": check.probe.std_errors},
                passed=check.passed,
            )
        )

    storage.write_json("report.json", reports[0].to_json_dict())
    if len(reports) > 1:
        storage.write_json("generator.json", reports[1].to_json_dict())
    for report in reports:
        _emit(report)
        if not report.passed:
            logger.error(f"{report.experiment} failed: {report.failed_checks or 'estimate outside CI'}")
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def cmd_validate(args: argparse.Namespace) -> int:
    """Print the validation report; exit status 2 on violations."""
    g = load_graph(args.graph)
    report = validate_graph(g, sigma_min=args.sigma_min)
    json.dump(report.model_dump(mode="json"), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_PASS if report.ok else EXIT_CONFIG_ERROR


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("main:app", host=args.host, port=args.port, log_config=None)
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, set up logging and dispatch; returns the exit status."""
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level)
    started = time.time()
    try:
        status = args.func(args)
        get_performance_logger().log_execution_time(args.command, time.time() - started, {"exit_status": status})
        return status
    except (GraphConfigError, GraphValidationError, ValidationError, ProbeError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except (LedgerStarvationError, SimulationDivergedError, ExclusivityViolationError, ExperimentRejectedError) as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME_ERROR
