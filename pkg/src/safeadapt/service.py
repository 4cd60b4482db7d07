"""Service operations and their FastAPI wrapper.

Every operation is a plain function taking/returning the pydantic models
from :mod:`safeadapt.schemas`; the HTTP layer adds nothing but transport.
The CLI calls these functions in-process by default and over HTTP with
``--server``, through the same models either way.

All run metrics are computed from the serialized trace CSV (parsed back),
so a report is recomputable from the CSV file alone.
"""

from __future__ import annotations

import dataclasses
import io
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .scenario import InvalidScenario, Scenario, builtin_scenarios, run_assumption_checks
from .schemas import (
    AssumptionCheck,
    CheckRequest,
    CheckResponse,
    CompareRequest,
    CompareResponse,
    CompareRow,
    ErrorBody,
    RunReport,
    ScenarioSummary,
    ScenariosResponse,
    SimulateRequest,
    SimulateResponse,
)
from .sim import METHODS, SimulationAborted, Trace, jitter_metric, run

_COMPARE_FIELDS = (
    "method",
    "smid",
    "status",
    "min_h",
    "final_tracking_error",
    "jitter",
    "time_to_term_zero",
    "final_buffer",
    "wall_clock_s",
    "abort_cause",
)


def resolve_scenario(
    source: str | dict,
    horizon: float | None = None,
    rate: float | None = None,
) -> Scenario:
    """Builtin name or inline field mapping -> validated Scenario."""
    if isinstance(source, str):
        builtins = builtin_scenarios()
        if source not in builtins:
            raise InvalidScenario(
                f"scenario: no builtin named {source!r} (builtins: {sorted(builtins)})"
            )
        scn = builtins[source]
    else:
        scn = Scenario.from_dict(source)
    overrides = {}
    if horizon is not None:
        overrides["horizon"] = float(horizon)
    if rate is not None:
        overrides["control_rate"] = float(rate)
    if overrides:
        scn = dataclasses.replace(scn, **overrides)
    scn.validate()
    return scn


def report_from_trace(trace: Trace, wall_clock_s: float = 0.0) -> RunReport:
    """Compute the run metrics from a trace.

    Callers that hold a CSV file can rebuild the identical report with
    ``report_from_trace(Trace.from_csv(path, method=..., ...))``.
    """
    err = trace.vector("x", 4) - trace.vector("x_m", 4)
    term = trace["safety_term"]
    t = trace["t"]
    time_to_zero: float | None = None
    final_buffer: float | None = None
    if trace.method in ("ebsb", "ebsf"):
        nz = np.nonzero(term)[0]
        if len(nz) == 0:
            time_to_zero = 0.0
        elif nz[-1] + 1 < len(term):
            time_to_zero = float(t[nz[-1] + 1])
        # else: still active at the horizon -> stays None
    if trace.method == "ebsb":
        final_buffer = float(term[-1])
    return RunReport(
        scenario=trace.scenario_name,
        method=trace.method,
        smid=trace.smid,
        seed=trace.seed,
        min_h=float(trace["h_x"].min()),
        final_tracking_error=float(np.linalg.norm(err[-1])),
        time_to_term_zero=time_to_zero,
        final_buffer=final_buffer,
        jitter=jitter_metric(trace),
        wall_clock_s=wall_clock_s,
    )


def _run_to_csv(scn: Scenario, method: str, smid: bool, seed: int) -> tuple[str, float]:
    started = time.perf_counter()
    trace = run(scn, method, smid_on=smid, seed=seed)
    elapsed = time.perf_counter() - started
    return trace.to_csv_text(), elapsed


def simulate(req: SimulateRequest) -> SimulateResponse:
    scn = resolve_scenario(req.scenario, req.horizon, req.rate)
    csv_text, elapsed = _run_to_csv(scn, req.method, req.smid, req.seed)
    parsed = Trace.from_csv_text(
        csv_text, method=req.method, scenario_name=scn.name, smid=req.smid, seed=req.seed
    )
    report = report_from_trace(parsed, wall_clock_s=elapsed)
    return SimulateResponse(report=report, trace_csv=csv_text if req.include_trace else None)


def methods_for(problem: int) -> list[str]:
    """Governors applicable to a problem class (the buffer one needs a
    known input gain, so it is excluded for class 2)."""
    return [m for m in METHODS if not (m == "ebsb" and problem != 1)]


def compare(req: CompareRequest) -> CompareResponse:
    scn = resolve_scenario(req.scenario, req.horizon, req.rate)
    rows: list[CompareRow] = []
    traces: dict[str, str] = {}
    smid_flags = (False, True) if req.smid else (False,)
    for method in methods_for(scn.problem):
        for smid in smid_flags:
            label = f"{method}_smid" if smid else method
            try:
                csv_text, elapsed = _run_to_csv(scn, method, smid, req.seed)
            except SimulationAborted as exc:
                rows.append(
                    CompareRow(method=method, smid=smid, status="aborted", abort_cause=str(exc))
                )
                continue
            parsed = Trace.from_csv_text(
                csv_text, method=method, scenario_name=scn.name, smid=smid, seed=req.seed
            )
            rows.append(
                CompareRow(
                    method=method,
                    smid=smid,
                    status="ok",
                    report=report_from_trace(parsed, wall_clock_s=elapsed),
                )
            )
            if req.include_traces:
                traces[label] = csv_text
    return CompareResponse(
        scenario=scn.name,
        rows=rows,
        comparison_csv=comparison_csv(rows),
        traces=traces,
        all_ok=all(row.status == "ok" for row in rows),
    )


def comparison_csv(rows: list[CompareRow]) -> str:
    buf = io.StringIO()
    buf.write(",".join(_COMPARE_FIELDS) + "\n")
    for row in rows:
        rec = {}
        if row.report is not None:
            rec.update(row.report.model_dump())
        rec["method"] = row.method
        rec["smid"] = "on" if row.smid else "off"
        rec["status"] = row.status
        rec["abort_cause"] = row.abort_cause
        cells = []
        for name in _COMPARE_FIELDS:
            value = rec.get(name)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(format(value, ".10g"))
            else:
                cells.append(str(value))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def check(req: CheckRequest) -> CheckResponse:
    scn = resolve_scenario(req.scenario)
    results = run_assumption_checks(scn, n_samples=req.samples, seed=req.seed)
    checks = [
        AssumptionCheck(name=r.name, status=r.status, method=r.method, detail=r.detail)
        for r in results
    ]
    all_exact = all(c.status == "pass" for c in checks if c.method == "exact")
    return CheckResponse(scenario=scn.name, results=checks, all_exact_pass=all_exact)


def scenario_index() -> ScenariosResponse:
    summaries = [
        ScenarioSummary(
            name=scn.name,
            problem=scn.problem,
            methods=methods_for(scn.problem),
            horizon=scn.horizon,
            control_rate=scn.control_rate,
        )
        for scn in builtin_scenarios().values()
    ]
    return ScenariosResponse(builtins=summaries)


app = FastAPI(title="safeadapt", version=__version__)


@app.exception_handler(InvalidScenario)
async def _invalid_scenario(request: Request, exc: InvalidScenario):
    body = ErrorBody(code="invalid-scenario", detail=str(exc))
    return JSONResponse(status_code=400, content=body.model_dump())


@app.exception_handler(SimulationAborted)
async def _simulation_aborted(request: Request, exc: SimulationAborted):
    body = ErrorBody(code="simulation-aborted", detail=str(exc))
    return JSONResponse(status_code=409, content=body.model_dump())


@app.get("/health")
def http_health() -> dict:
    return {"status": "ok", "version": __version__}


@app.get("/scenarios", response_model=ScenariosResponse)
def http_scenarios() -> ScenariosResponse:
    return scenario_index()


@app.post("/simulate", response_model=SimulateResponse)
def http_simulate(req: SimulateRequest) -> SimulateResponse:
    return simulate(req)


@app.post("/compare", response_model=CompareResponse)
def http_compare(req: CompareRequest) -> CompareResponse:
    return compare(req)


@app.post("/check", response_model=CheckResponse)
def http_check(req: CheckRequest) -> CheckResponse:
    return check(req)
