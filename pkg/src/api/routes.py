"""
FastAPI routes for the graph diffusion service.

Experiments run as background tasks; clients poll /status/{task_id} and
fetch the report from /result/{task_id} once the task has finished.
"""

import logging
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Tuple

from fastapi import APIRouter, BackgroundTasks, HTTPException
from pydantic import ValidationError

from .models import (
    ExitProbRequest,
    SimulationRequest,
    TaskResponse,
    TaskStatus,
    TaskStatusResponse,
    ValidationResponse,
    VerifyRequest,
)
from ..evaluation.verify import default_root, exit_direction_experiment, run_invariant_suite
from ..graph.loader import graph_from_document
from ..graph.metric_graph import MetricGraph, adjacent_edges, validate_graph
from ..simulation.assembler import assemble_recursive
from ..simulation.edge_dynamics import SimConfig
from ..simulation.rng import EdgeStreams
from ..utils.config import get_settings, settings
from ..utils.exceptions import GraphConfigError
from ..utils.file_handler import ResultStorage

logger = logging.getLogger(__name__)

router = APIRouter()

result_storage = ResultStorage(Path(settings.OUTPUT_DIR) / "tasks")

# In-memory task tracking; a restart forgets queued work
task_status: Dict[str, str] = {}
task_progress: Dict[str, str] = {}


def _build_graph(request: SimulationRequest) -> Tuple[MetricGraph, str]:
    """Parse and validate the inline graph; returns the graph and its root."""
    try:
        g = graph_from_document(request.graph, source="request.graph")
    except GraphConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))

    report = validate_graph(g, sigma_min=settings.SIGMA_MIN)
    if not report.ok:
        raise HTTPException(
            status_code=422, detail=[v.model_dump(mode="json") for v in report.violations]
        )

    root = request.root or default_root(g)
    if root not in g.vertices:
        raise HTTPException(status_code=400, detail=f"unknown root vertex {root!r}")
    return g, root


def _build_config(request: SimulationRequest, **extra: Any) -> SimConfig:
    try:
        return SimConfig.from_settings(
            get_settings(),
            dt=request.dt,
            horizon=request.horizon,
            quantum=request.quantum,
            kernel_eps=request.kernel_eps,
            seed=request.seed,
            **extra,
        )
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _enqueue(background_tasks: BackgroundTasks, task, *args: Any) -> TaskResponse:
    task_id = str(uuid.uuid4())
    task_status[task_id] = TaskStatus.QUEUED.value
    task_progress[task_id] = "Queued for simulation"
    background_tasks.add_task(task, task_id, *args)
    logger.info(f"Task queued: {task_id} ({task.__name__})")
    return TaskResponse(task_id=task_id, status=TaskStatus.QUEUED)


def _run_task(task_id: str, description: str, work) -> None:
    """Run work() and store its result or the error that stopped it."""
    task_status[task_id] = TaskStatus.RUNNING.value
    task_progress[task_id] = description
    try:
        result = work()
        result["task_id"] = task_id
        result["completed_at"] = datetime.now(timezone.utc).isoformat()
        result_storage.write_json(f"{task_id}.json", result)
        task_status[task_id] = TaskStatus.COMPLETED.value
        task_progress[task_id] = "Completed"
        logger.info(f"Task completed: {task_id}")
    except Exception as e:
        logger.error(f"Task {task_id} failed: {type(e).__name__}: {e}")
        try:
            result_storage.write_json(
                f"{task_id}.json",
                {
                    "task_id": task_id,
                    "status": TaskStatus.FAILED.value,
                    "error_type": type(e).__name__,
                    "error_message": str(e),
                    "completed_at": datetime.now(timezone.utc).isoformat(),
                },
            )
        except OSError as save_error:
            logger.error(f"Failed to save error result for task {task_id}: {save_error}")
        task_status[task_id] = TaskStatus.FAILED.value
        task_progress[task_id] = f"Failed: {e}"


def simulate_task(task_id: str, g: MetricGraph, root: str, cfg: SimConfig) -> None:
    """Background task: one graph path."""

    def work() -> Dict[str, Any]:
        gp = assemble_recursive(g, root, cfg, rng=EdgeStreams(cfg.seed))
        return {
            "status": TaskStatus.COMPLETED.value,
            "graph": g.name,
            "root": root,
            "params": cfg.model_dump(mode="json"),
            "path": gp.to_frame().to_dict(orient="list"),
            "clocks": gp.clocks_frame().to_dict(orient="list"),
        }

    _run_task(task_id, f"Simulating {cfg.n_steps} steps", work)


def exit_prob_task(task_id: str, g: MetricGraph, root: str, cfg: SimConfig, delta: float, n_paths: int) -> None:
    """Background task: exit-direction experiment."""

    def work() -> Dict[str, Any]:
        result = exit_direction_experiment(
            g, root, delta, n_paths, cfg, threads=settings.THREADS, chunk_size=settings.CHUNK_SIZE
        )
        params = {"graph": g.name, "root": root, "delta": delta, "n_paths": n_paths, **cfg.model_dump(mode="json")}
        return {"status": TaskStatus.COMPLETED.value, "report": result.to_report(params).to_json_dict()}

    _run_task(task_id, f"Exit experiment on {n_paths} paths", work)


def verify_task(task_id: str, g: MetricGraph, root: str, cfg: SimConfig, n_paths: int, negative_control: bool) -> None:
    """Background task: invariant suite."""

    def work() -> Dict[str, Any]:
        report = run_invariant_suite(
            g, cfg, n_paths, root=root, negative_control=negative_control,
            threads=settings.THREADS, chunk_size=settings.CHUNK_SIZE,
        )
        return {"status": TaskStatus.COMPLETED.value, "report": report.to_json_dict()}

    _run_task(task_id, f"Invariant suite on {n_paths} paths", work)


@router.post("/validate", response_model=ValidationResponse)
async def validate(request: Dict[str, Any]) -> ValidationResponse:
    """
    Validate an inline graph document.

    Raises:
        HTTPException: 400 if the document is malformed.
    """
    try:
        g = graph_from_document(request, source="request")
    except GraphConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))
    report = validate_graph(g, sigma_min=settings.SIGMA_MIN)
    return ValidationResponse(ok=report.ok, violations=[v.model_dump(mode="json") for v in report.violations])


@router.post("/simulate", response_model=TaskResponse, status_code=202)
async def simulate(request: SimulationRequest, background_tasks: BackgroundTasks) -> TaskResponse:
    """Queue one graph path simulation."""
    g, root = _build_graph(request)
    cfg = _build_config(request)
    return _enqueue(background_tasks, simulate_task, g, root, cfg)


@router.post("/exit-prob", response_model=TaskResponse, status_code=202)
async def exit_prob(request: ExitProbRequest, background_tasks: BackgroundTasks) -> TaskResponse:
    """Queue an exit-direction experiment."""
    g, root = _build_graph(request)
    delta = request.delta if request.delta is not None else settings.EXIT_DELTA
    too_long = [e for e in adjacent_edges(g, root) if delta >= g.edge(e).length]
    if too_long:
        raise HTTPException(status_code=400, detail=f"delta {delta} is not below the length of edges {too_long}")
    cfg = _build_config(request, downcross_delta=request.delta)
    n_paths = request.paths or settings.PATHS
    return _enqueue(background_tasks, exit_prob_task, g, root, cfg, delta, n_paths)


@router.post("/verify", response_model=TaskResponse, status_code=202)
async def verify(request: VerifyRequest, background_tasks: BackgroundTasks) -> TaskResponse:
    """Queue the invariant suite."""
    g, root = _build_graph(request)
    cfg = _build_config(request)
    n_paths = request.paths or settings.PATHS
    return _enqueue(background_tasks, verify_task, g, root, cfg, n_paths, request.negative_control)


@router.get("/status/{task_id}", response_model=TaskStatusResponse)
async def get_task_status(task_id: str) -> TaskStatusResponse:
    """
    Get the status of a task.

    Raises:
        HTTPException: 404 if the task is unknown.
    """
    if task_id not in task_status:
        raise HTTPException(status_code=404, detail="Task not found")
    return TaskStatusResponse(
        task_id=task_id,
        status=TaskStatus(task_status[task_id]),
        progress=task_progress.get(task_id),
    )


@router.get("/result/{task_id}")
async def get_task_result(task_id: str) -> Dict[str, Any]:
    """
    Get the stored result of a finished task.

    Raises:
        HTTPException: 404 if unknown, 202 while running, 409 if the task failed.
    """
    if task_id not in task_status:
        raise HTTPException(status_code=404, detail="Task not found")

    current_status = task_status[task_id]
    if current_status not in (TaskStatus.COMPLETED.value, TaskStatus.FAILED.value):
        raise HTTPException(status_code=202, detail=f"Task still running. Status: {current_status}")

    result = await result_storage.get_result(task_id)
    if not result:
        raise HTTPException(status_code=404, detail="Result not found")
    if current_status == TaskStatus.FAILED.value:
        raise HTTPException(status_code=409, detail=result.get("error_message", "Task failed"))
    return result
