"""Request/response bodies for the fitting service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class CommandRequest(BaseModel):
    """One command invocation.

    ``config`` is a partial config tree merged over the subcommand defaults
    (unknown keys rejected), ``sets`` are ``key=value`` overrides applied on
    top, and ``seed`` wins over both. All paths are interpreted on the
    service host.
    """

    config: dict = Field(default_factory=dict)
    sets: list[str] = Field(default_factory=list)
    seed: int | None = None


class CommandResponse(BaseModel):
    ok: bool = True
    subcommand: str
    summary: dict


class ErrorBody(BaseModel):
    type: str
    message: str
    exit_code: int


class ErrorResponse(BaseModel):
    ok: bool = False
    error: ErrorBody


class HealthResponse(BaseModel):
    status: str
    version: str
