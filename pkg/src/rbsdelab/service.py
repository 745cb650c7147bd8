"""HTTP facade over the laboratory.

The service computes; clients persist.  A scenario run returns its JSON
summary, its exit code for CI, and the emitted artifacts inline, so a thin
client on any machine can write the same byte-identical files the library
would produce locally.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .exceptions import ConfigError, ModelError
from .rbsde import verify_quadruple_csv
from .scenarios import dump_model_csv, list_scenarios, run_scenario, run_scenario_config


class HealthResponse(BaseModel):
    status: str
    version: str


class ScenarioInfo(BaseModel):
    name: str
    description: str


class ScenarioListResponse(BaseModel):
    scenarios: list[ScenarioInfo]


class Artifact(BaseModel):
    name: str
    content: str


class RunScenarioRequest(BaseModel):
    name: str | None = None
    config: dict | None = None
    include_artifacts: bool = True


class RunScenarioResponse(BaseModel):
    scenario: str
    exit_code: int
    passed: bool
    summary: dict
    artifacts: list[Artifact] = Field(default_factory=list)


class DumpModelRequest(BaseModel):
    model: dict


class DumpModelResponse(BaseModel):
    csv: str
    levels: int
    nodes: int
    diagnostics_passed: bool
    max_violation: float


class VerifyRequest(BaseModel):
    quadruple_csv: str
    barrier_csv: str
    tolerance: float = 1e-12


class VerifyResponse(BaseModel):
    passed: bool
    checks: dict


app = FastAPI(
    title="rbsdelab",
    version=__version__,
    description="Reflected-BSDE laboratory: scenario runs, model dumps, verification.",
)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.get("/scenarios", response_model=ScenarioListResponse)
def scenarios() -> ScenarioListResponse:
    return ScenarioListResponse(
        scenarios=[ScenarioInfo(**entry) for entry in list_scenarios()]
    )


@app.post("/scenarios/run", response_model=RunScenarioResponse)
def scenarios_run(request: RunScenarioRequest) -> RunScenarioResponse:
    if (request.name is None) == (request.config is None):
        raise HTTPException(
            status_code=400, detail="provide exactly one of 'name' or 'config'"
        )
    if request.name is not None:
        result = run_scenario(request.name)
    else:
        result = run_scenario_config(request.config)
    artifacts = (
        [Artifact(name=n, content=c) for n, c in result.artifacts]
        if request.include_artifacts
        else []
    )
    return RunScenarioResponse(
        scenario=result.name,
        exit_code=result.exit_code,
        passed=result.passed,
        summary=result.summary,
        artifacts=artifacts,
    )


@app.post("/model/dump", response_model=DumpModelResponse)
def model_dump(request: DumpModelRequest) -> DumpModelResponse:
    try:
        out = dump_model_csv(request.model)
    except (ConfigError, ModelError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    return DumpModelResponse(
        csv=out["csv"],
        levels=out["levels"],
        nodes=out["nodes"],
        diagnostics_passed=out["diagnosticsPassed"],
        max_violation=out["maxViolation"],
    )


@app.post("/verify", response_model=VerifyResponse)
def verify(request: VerifyRequest) -> VerifyResponse:
    try:
        checks = verify_quadruple_csv(
            request.quadruple_csv, request.barrier_csv, request.tolerance
        )
    except (ConfigError, ModelError, KeyError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=f"bad input files: {exc}")
    return VerifyResponse(passed=bool(checks.pop("passed")), checks=checks)
