from __future__ import annotations

import logging
import time
import uuid
from collections.abc import Awaitable, Callable

from fastapi import Request, Response

logger = logging.getLogger("mmloc.service")

REQUEST_ID_HEADER = "x-request-id"
SOLVE_TIME_HEADER = "x-solve-time-ms"


async def request_id_middleware(
    request: Request, call_next: Callable[[Request], Awaitable[Response]]
) -> Response:
    """Tag every request with an id and log one ``request`` line with its timing."""
    request_id = request.headers.get(REQUEST_ID_HEADER) or uuid.uuid4().hex
    request.state.request_id = request_id
    start = time.perf_counter()
    try:
        response = await call_next(request)
    except Exception:  # noqa: BLE001
        logger.exception(
            "request_error",
            extra={
                "path": request.url.path,
                "method": request.method,
                "status": 500,
                "duration_ms": round((time.perf_counter() - start) * 1000, 2),
                "request_id": request_id,
            },
        )
        raise
    duration_ms = round((time.perf_counter() - start) * 1000, 2)
    logger.info(
        "request",
        extra={
            "path": request.url.path,
            "method": request.method,
            "status": response.status_code,
            "duration_ms": duration_ms,
            "request_id": request_id,
            "mode": request.query_params.get("mode"),
        },
    )
    response.headers[REQUEST_ID_HEADER] = request_id
    response.headers[SOLVE_TIME_HEADER] = str(duration_ms)
    return response
