"""Stateless batch-scoring HTTP service around the reward engine.

External RL trainers POST batches of (response, ground truth, optional token
distribution) items to /v1/score and get one reward breakdown per item, in
request order. Items fail individually: one bad distribution never costs the
rest of the batch. Scoring is deterministic, so identical request bodies
always produce identical breakdowns.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import uvicorn
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .actions import FormatError, parse_action
from .config import config_digest, effective_config, reward_config_from
from .rewards import (
    InvalidDistribution,
    RewardConfig,
    SparseRow,
    TokenDistribution,
    score_response,
)

# Per-request overrides may tune weights only; schema-affecting options stay
# fixed so results remain auditable.
OVERRIDABLE_WEIGHTS = frozenset(
    {"r_format_value", "r_type_value", "w_click_type", "w_name", "w_text", "dars"}
)


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8731
    max_batch: int = 256
    max_body_bytes: int = 8 * 1024 * 1024
    workers: int = 1
    reward: RewardConfig = field(default_factory=RewardConfig)


def service_config_from_env(environ=None) -> ServiceConfig:
    """ServiceConfig from defaults plus SHOPSIM_* environment overrides; this
    is how worker subprocesses receive their configuration."""
    config = effective_config(environ=os.environ if environ is None else environ)
    section = config["service"]
    return ServiceConfig(
        host=section["host"],
        port=int(section["port"]),
        max_batch=int(section["max_batch"]),
        max_body_bytes=int(section["max_body_bytes"]),
        workers=int(section["workers"]),
        reward=reward_config_from(config["reward"]),
    )


class SparseRowModel(BaseModel):
    top: list[tuple[int, float]]
    tail_mass: float


class DistributionModel(BaseModel):
    vocab_size: int
    rows: list[list[float] | SparseRowModel]

    def to_distribution(self) -> TokenDistribution:
        rows = [
            SparseRow(entries=tuple(row.top), tail_mass=row.tail_mass)
            if isinstance(row, SparseRowModel)
            else row
            for row in self.rows
        ]
        return TokenDistribution(vocab_size=self.vocab_size, rows=rows)


class ScoreItemModel(BaseModel):
    response_text: str
    ground_truth: dict | str
    token_distribution: DistributionModel | None = None
    rationale_span: tuple[int, int] | None = None


class ScoreRequestModel(BaseModel):
    items: list[ScoreItemModel]
    config_overrides: dict[str, float] | None = None


class BreakdownModel(BaseModel):
    r_format: float
    self_certainty: float
    self_certainty_available: bool
    r_type: float
    r_subaction: float
    dars: float
    total: float


class DiagnosticsModel(BaseModel):
    parse_bucket: str
    type_matched: bool
    matched_components: list[str]


class ItemResultModel(BaseModel):
    index: int
    ok: bool
    breakdown: BreakdownModel | None = None
    diagnostics: DiagnosticsModel | None = None
    error: str | None = None


class ScoreResponseModel(BaseModel):
    results: list[ItemResultModel]
    version: str
    timing_ms: float


class HealthModel(BaseModel):
    status: str
    version: str
    config_digest: str


def _override_config(base: RewardConfig, overrides: dict | None) -> RewardConfig:
    if not overrides:
        return base
    unknown = set(overrides) - OVERRIDABLE_WEIGHTS
    if unknown:
        raise HTTPException(
            status_code=400,
            detail=f"config_overrides may only tune weights; unknown keys: {sorted(unknown)}",
        )
    values = {key: float(value) for key, value in overrides.items()}
    try:
        return RewardConfig(
            r_format_value=values.get("r_format_value", base.r_format_value),
            r_type_value=values.get("r_type_value", base.r_type_value),
            w_click_type=values.get("w_click_type", base.w_click_type),
            w_name=values.get("w_name", base.w_name),
            w_text=values.get("w_text", base.w_text),
            dars=values.get("dars", base.dars),
            dars_per_type=base.dars_per_type,
            rationale_span_only=base.rationale_span_only,
            matcher=base.matcher,
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def _reward_digest(config: ServiceConfig) -> str:
    reward = config.reward
    return config_digest(
        {
            "r_format_value": reward.r_format_value,
            "r_type_value": reward.r_type_value,
            "w_click_type": reward.w_click_type,
            "w_name": reward.w_name,
            "w_text": reward.w_text,
            "dars": reward.dars,
            "dars_per_type": dict(reward.dars_per_type),
            "rationale_span_only": reward.rationale_span_only,
            "matcher_mode": reward.matcher.mode,
            "matcher_threshold": reward.matcher.threshold,
            "max_batch": config.max_batch,
        }
    )


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="shopsim reward service", version=__version__)

    @app.exception_handler(RequestValidationError)
    async def malformed_envelope(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.middleware("http")
    async def body_size_guard(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > config.max_body_bytes:
            return JSONResponse(
                status_code=413,
                content={"detail": f"body exceeds {config.max_body_bytes} bytes"},
            )
        return await call_next(request)

    @app.get("/healthz", response_model=HealthModel)
    def healthz():
        return HealthModel(status="ok", version=__version__, config_digest=_reward_digest(config))

    @app.post("/v1/score", response_model=ScoreResponseModel)
    def score(request: ScoreRequestModel):
        if not request.items:
            raise HTTPException(status_code=400, detail="empty batch")
        if len(request.items) > config.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(request.items)} exceeds limit {config.max_batch}",
            )
        reward_config = _override_config(config.reward, request.config_overrides)

        ground_truths = []
        for index, item in enumerate(request.items):
            try:
                ground_truths.append(parse_action(item.ground_truth, mode="strict"))
            except FormatError as exc:
                raise HTTPException(
                    status_code=422,
                    detail=f"item {index}: unparseable ground truth: {exc.reason}",
                ) from exc

        started = time.perf_counter()
        results = []
        for index, (item, gt) in enumerate(zip(request.items, ground_truths)):
            try:
                distribution = (
                    item.token_distribution.to_distribution()
                    if item.token_distribution is not None
                    else None
                )
                breakdown, diagnostics = score_response(
                    item.response_text,
                    distribution,
                    gt,
                    reward_config,
                    rationale_span=item.rationale_span,
                )
            except InvalidDistribution as exc:
                results.append(ItemResultModel(index=index, ok=False, error=str(exc)))
                continue
            results.append(
                ItemResultModel(
                    index=index,
                    ok=True,
                    breakdown=BreakdownModel(
                        r_format=breakdown.r_format,
                        self_certainty=breakdown.self_certainty,
                        self_certainty_available=breakdown.self_certainty_available,
                        r_type=breakdown.r_type,
                        r_subaction=breakdown.r_subaction,
                        dars=breakdown.dars,
                        total=breakdown.total,
                    ),
                    diagnostics=DiagnosticsModel(
                        parse_bucket=diagnostics.parse_bucket,
                        type_matched=diagnostics.type_matched,
                        matched_components=list(diagnostics.matched_components),
                    ),
                )
            )
        timing_ms = (time.perf_counter() - started) * 1000.0
        return ScoreResponseModel(results=results, version=__version__, timing_ms=timing_ms)

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service until signalled; uvicorn drains in-flight requests on
    SIGINT/SIGTERM before exiting.

    Multi-worker mode loads the module-level app in each subprocess, so any
    non-default settings must travel via SHOPSIM_* environment variables
    (cmd_serve exports them automatically)."""
    if config.workers > 1:
        uvicorn.run(
            "shopsim.service:app",
            host=config.host,
            port=config.port,
            workers=config.workers,
            log_level="info",
        )
    else:
        uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")


# Default app for `uvicorn shopsim.service:app`; honors SHOPSIM_* overrides.
app = create_app(service_config_from_env())
