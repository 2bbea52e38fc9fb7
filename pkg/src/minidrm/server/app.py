"""HTTP surface of the license server.

Bodies are raw wire messages (``application/octet-stream``). Failures are
answered with an ERROR envelope and an HTTP status mapped from the code.
"""

import logging
from typing import Any, Dict

import uvicorn
from fastapi import FastAPI, Request, Response
from starlette.concurrency import run_in_threadpool

from minidrm import __version__
from minidrm.core.errors import DrmError, ErrorCode, http_status_for
from minidrm.core.logs import log_event
from minidrm.core.messages import ErrorEnvelope, LeaseAction
from minidrm.core.wire import encode
from minidrm.server.service import LicenseServer

logger = logging.getLogger(__name__)

WIRE_MEDIA_TYPE = "application/octet-stream"


def error_response(error: DrmError) -> Response:
    envelope = ErrorEnvelope(code=int(error.code), message=error.message)
    return Response(
        content=encode(envelope),
        status_code=http_status_for(error.code),
        media_type=WIRE_MEDIA_TYPE,
    )


def create_app(server: LicenseServer) -> FastAPI:
    """Build the FastAPI application serving ``server``.

    Examples
    --------
    >>> from fastapi.testclient import TestClient
    >>> client = TestClient(create_app(server))
    >>> client.get("/healthz").status_code
    200
    """
    app = FastAPI(title="minidrm license server", version=__version__)
    app.state.license_server = server

    @app.exception_handler(DrmError)
    async def _drm_error_handler(request: Request, exc: DrmError) -> Response:
        return error_response(exc)

    @app.exception_handler(Exception)
    async def _internal_error_handler(request: Request, exc: Exception) -> Response:
        logger.exception("unhandled error on %s", request.url.path)
        return error_response(DrmError(ErrorCode.INTERNAL, "internal server error"))

    @app.get("/healthz")
    async def healthz() -> Dict[str, Any]:
        return {"status": "ok", "content": len(server.registered_content())}

    @app.post("/v1/license")
    async def license_request(request: Request) -> Response:
        body = await request.body()
        ckc = await run_in_threadpool(server.handle_license_request, body)
        return Response(content=ckc, media_type=WIRE_MEDIA_TYPE)

    @app.post("/v1/lease/renew")
    async def lease_renew(request: Request) -> Response:
        body = await request.body()
        answer = await run_in_threadpool(server.handle_lease_request, body, LeaseAction.RENEW)
        return Response(content=answer, media_type=WIRE_MEDIA_TYPE)

    @app.post("/v1/lease/release")
    async def lease_release(request: Request) -> Response:
        body = await request.body()
        answer = await run_in_threadpool(server.handle_lease_request, body, LeaseAction.RELEASE)
        return Response(content=answer, media_type=WIRE_MEDIA_TYPE)

    @app.post("/v1/metering", status_code=204)
    async def metering_report(request: Request) -> Response:
        body = await request.body()
        await run_in_threadpool(server.handle_metering, body)
        return Response(status_code=204)

    @app.get("/v1/certificate")
    async def certificate() -> Response:
        return Response(content=encode(server.certificate), media_type=WIRE_MEDIA_TYPE)

    @app.get("/v1/metering/{account}")
    async def metering_counts(account: str) -> Dict[str, Any]:
        return {"account": account, "counts": server.metering_counts(account)}

    return app


def serve(server: LicenseServer, host: str = "127.0.0.1", port: int = 8400) -> None:
    """Run the service until interrupted; in-flight requests are drained on shutdown.

    Raises
    ------
    DrmError
        ``BIND_FAILED`` if the address cannot be bound
    """
    config = uvicorn.Config(create_app(server), host=host, port=port, log_level="warning")
    log_event(logger, logging.INFO, "server_starting", host=host, port=port)
    try:
        uvicorn.Server(config).run()
    except SystemExit as e:
        # uvicorn exits the process when it cannot bind
        raise DrmError(ErrorCode.BIND_FAILED, f"cannot listen on {host}:{port}") from e
    except OSError as e:
        raise DrmError(ErrorCode.BIND_FAILED, f"cannot listen on {host}:{port}: {e}") from e
    log_event(logger, logging.INFO, "server_stopped", host=host, port=port)
