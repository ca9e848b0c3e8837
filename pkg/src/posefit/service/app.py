"""HTTP service exposing the fitting pipeline.

Each endpoint wraps one command from posefit.ops; file paths in requests are
interpreted on the service host. Errors map to the same categories the CLI
reports as exit codes: 2 config, 3 numeric, 4 I/O.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import resolve_config
from ..errors import ConfigError, InvalidConfig, IoError, PosefitError
from ..ops import RUNNERS
from .schemas import (CommandRequest, CommandResponse, ErrorBody,
                      ErrorResponse, HealthResponse)

CONFIG_ERRORS = (ConfigError, InvalidConfig)
IO_ERRORS = (IoError,)


def _error_response(exc, status, exit_code):
    body = ErrorResponse(error=ErrorBody(type=type(exc).__name__,
                                         message=str(exc),
                                         exit_code=exit_code))
    return JSONResponse(status_code=status, content=body.model_dump())


def create_app() -> FastAPI:
    app = FastAPI(title="posefit", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    def make_endpoint(subcommand):
        runner = RUNNERS[subcommand]

        def endpoint(req: CommandRequest):
            try:
                cfg = resolve_config(subcommand, overrides=req.config,
                                     sets=req.sets, seed=req.seed)
                summary = runner(cfg)
            except CONFIG_ERRORS as exc:
                return _error_response(exc, 400, 2)
            except IO_ERRORS as exc:
                return _error_response(exc, 404, 4)
            except PosefitError as exc:
                return _error_response(exc, 422, 3)
            return CommandResponse(subcommand=subcommand, summary=summary)

        endpoint.__name__ = f"cmd_{subcommand.replace('-', '_')}"
        return endpoint

    for name in RUNNERS:
        app.post(f"/{name}", response_model=CommandResponse,
                 responses={400: {"model": ErrorResponse},
                            404: {"model": ErrorResponse},
                            422: {"model": ErrorResponse}})(
            make_endpoint(name))

    return app


app = create_app()
