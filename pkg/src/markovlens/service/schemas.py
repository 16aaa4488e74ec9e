"""Request and response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    version: str


class PanelRequest(BaseModel):
    data: list[list[float]]
    var_names: list[str] | None = None
    tau_max: int = Field(default=5, ge=2)
    alpha: float = Field(default=0.05, gt=0, lt=1)


class Link(BaseModel):
    child: str
    parent: str
    lag: int
    p_value: float
    partial_corr: float


class ContributionOut(BaseModel):
    source: int
    target: int
    lag: int
    abs_val: float
    neg_log_p: float
    weight: int


class AnalyzeResponse(BaseModel):
    T: int
    N: int
    var_names: list[str]
    links: list[Link]
    mvs: float
    n_contributing_links: int


class MvsRequest(BaseModel):
    val: list[list[list[float]]]
    p: list[list[list[float]]]
    tau_max: int = Field(default=5, ge=2)
    alpha: float = Field(default=0.05, gt=0, lt=1)


class MvsResponse(BaseModel):
    mvs: float
    N: int
    contributions: list[ContributionOut]


class ConfigCheck(BaseModel):
    valid: bool
    error: str | None = None
    conditions: dict[str, list[str]] = Field(default_factory=dict)


class ExperimentRequest(BaseModel):
    config: dict[str, Any]
    out_dir: str
    parallelism: int = Field(default=1, ge=1)
    env: str | None = None
    seed_count: int | None = Field(default=None, ge=1)
    ci: Literal["normal", "t"] = "normal"


class SummaryRow(BaseModel):
    env_name: str
    condition_id: str
    mean_return: float | None
    mvs: float | None
    seeds_completed: int
    seeds_failed: int


class ExperimentStatus(BaseModel):
    job_id: str
    state: Literal["queued", "running", "finished", "failed"]
    error: str | None = None
    failed_runs: int = 0
    summary: list[SummaryRow] = Field(default_factory=list)
