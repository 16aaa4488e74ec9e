"""FastAPI app: panel analysis, MVS scoring, config validation and background sweeps.

Sweeps run in a worker thread per job; their state lives in memory, the
artifacts on disk under the requested output directory.
"""

from __future__ import annotations

import logging
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from markovlens import __version__
from markovlens.analysis import analyze_panel, link_table
from markovlens.errors import MarkovLensError
from markovlens.mvs import MvsConfig, compute_mvs
from markovlens.pcmci import PcmciResult, TimeSeriesPanel
from markovlens.pipeline import conditions, emit_report, parse_config, run_experiment
from markovlens.pipeline.report import T95_4DF, Z95
from markovlens.service.schemas import (
    AnalyzeResponse, ConfigCheck, ContributionOut, ExperimentRequest, ExperimentStatus, Health, Link,
    MvsRequest, MvsResponse, PanelRequest, SummaryRow,
)

logger = logging.getLogger(__name__)

app = FastAPI(title="markovlens", version=__version__)

_jobs: dict[str, ExperimentStatus] = {}
_jobs_lock = threading.Lock()


@app.exception_handler(MarkovLensError)
async def _domain_error(request: Request, exc: MarkovLensError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.get("/health", response_model=Health)
def health():
    return Health(version=__version__)


@app.post("/analyze", response_model=AnalyzeResponse)
def analyze(req: PanelRequest):
    data = np.asarray(req.data, dtype=np.float64)
    if data.ndim != 2:
        raise HTTPException(422, "data must be a list of equal-length rows")
    panel = TimeSeriesPanel(data, list(req.var_names or []))
    result, report = analyze_panel(panel, req.tau_max, req.alpha)
    return AnalyzeResponse(
        T=panel.T, N=panel.N, var_names=panel.var_names,
        links=[Link(**row) for row in link_table(result)],
        mvs=report.score, n_contributing_links=report.n_contributing_links,
    )


@app.post("/mvs", response_model=MvsResponse)
def mvs(req: MvsRequest):
    val = np.asarray(req.val, dtype=np.float64)
    p = np.asarray(req.p, dtype=np.float64)
    if val.ndim != 3 or val.shape != p.shape or val.shape[0] != val.shape[1]:
        raise HTTPException(422, "val and p must both be N x N x (tau_max+1)")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(val)):
        raise HTTPException(422, "p must lie in [0, 1] and val must be finite")
    result = PcmciResult(val, p, req.alpha, val.shape[2] - 1)
    report = compute_mvs(result, MvsConfig(tau_max=req.tau_max, alpha_level=req.alpha))
    return MvsResponse(
        mvs=report.score, N=report.N,
        contributions=[ContributionOut(**c.__dict__) for c in report.contributions],
    )


@app.post("/config/validate", response_model=ConfigCheck)
def validate_config(doc: dict):
    try:
        config = parse_config(doc)
    except MarkovLensError as exc:
        return ConfigCheck(valid=False, error=str(exc))
    return ConfigCheck(valid=True, conditions={
        env.name: [c.condition_id for c in conditions(config, env)] for env in config.environments
    })


def _run_job(job_id: str, req: ExperimentRequest) -> None:
    with _jobs_lock:
        _jobs[job_id].state = "running"
    try:
        config = parse_config(req.config)
        result = run_experiment(config, req.out_dir, req.parallelism, req.env, req.seed_count)
        emit_report(result.records, req.out_dir, T95_4DF if req.ci == "t" else Z95)
        summary = [
            SummaryRow(env_name=r.env_name, condition_id=r.condition_id,
                       mean_return=r.mean_return if r.runs else None, mvs=r.mvs if r.runs else None,
                       seeds_completed=len(r.runs), seeds_failed=len(r.failures))
            for r in result.records
        ]
        with _jobs_lock:
            job = _jobs[job_id]
            job.summary = summary
            job.failed_runs = len(result.failures)
            job.state = "finished" if result.ok else "failed"
            if not result.ok:
                job.error = f"{len(result.failures)} run(s) failed"
    except Exception as exc:
        logger.exception("experiment job %s crashed", job_id)
        with _jobs_lock:
            _jobs[job_id].state = "failed"
            _jobs[job_id].error = f"{type(exc).__name__}: {exc}"


@app.post("/experiments", response_model=ExperimentStatus, status_code=202)
def start_experiment(req: ExperimentRequest):
    parse_config(req.config)  # reject bad configs before queueing
    job_id = uuid.uuid4().hex
    status = ExperimentStatus(job_id=job_id, state="queued")
    with _jobs_lock:
        _jobs[job_id] = status
    threading.Thread(target=_run_job, args=(job_id, req), daemon=True).start()
    return status


@app.get("/experiments/{job_id}", response_model=ExperimentStatus)
def experiment_status(job_id: str):
    with _jobs_lock:
        status = _jobs.get(job_id)
        if status is None:
            raise HTTPException(404, f"no experiment job {job_id}")
        return status.model_copy()
