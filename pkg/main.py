"""
Main FastAPI application entry point.

Serves the simulation and verification endpoints under /api.
"""
from contextlib import asynccontextmanager

from fastapi import FastAPI

from src import __version__
from src.api.models import HealthCheckResponse
from src.api.routes import router as api_router
from src.utils.config import settings
from src.utils.logging_config import setup_logging


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Initialize logging
    setup_logging()
    yield


app = FastAPI(
    title="Graph Diffusion Service",
    description="Simulate diffusions on metric graphs and verify their gluing conditions",
    version=__version__,
    lifespan=lifespan,
)

app.include_router(api_router, prefix="/api")


@app.get("/health", response_model=HealthCheckResponse)
async def health_check() -> HealthCheckResponse:
    """Health check endpoint."""
    return HealthCheckResponse(version=__version__)


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=settings.HOST, port=settings.PORT)
