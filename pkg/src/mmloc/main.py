from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from mmloc import __version__
from mmloc.config import get_settings
from mmloc.errors import MmlocError
from mmloc.logging_middleware import request_id_middleware
from mmloc.routers import router
from mmloc.telemetry import instrument_app, setup_telemetry

logger = logging.getLogger("mmloc.service")


async def toolkit_error_handler(request: Request, exc: MmlocError) -> JSONResponse:
    logger.info(
        "request_rejected",
        extra={"path": request.url.path, "error": type(exc).__name__, "detail": str(exc)},
    )
    return JSONResponse(
        status_code=422, content={"detail": str(exc), "error": type(exc).__name__}
    )


def create_app() -> FastAPI:
    settings = get_settings()
    app = FastAPI(title="mmWave Positioning API", version=__version__)

    setup_telemetry(settings.service_name, settings.otel_endpoint)
    instrument_app(app)

    app.middleware("http")(request_id_middleware)
    app.add_exception_handler(MmlocError, toolkit_error_handler)

    @app.get("/health")
    async def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/ready")
    async def ready() -> dict[str, str]:
        return {"status": "ready"}

    app.include_router(router)
    return app


app = create_app()
