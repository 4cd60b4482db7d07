"""Request/response models for the HTTP service and the CLI."""

from __future__ import annotations

from pydantic import BaseModel, Field

from .sim import METHODS


class SimulateRequest(BaseModel):
    scenario: str | dict = "default_p2"
    method: str = "ebsf"
    smid: bool = False
    seed: int = 0
    horizon: float | None = Field(default=None, gt=0)
    rate: float | None = Field(default=None, gt=0)
    include_trace: bool = True


class RunReport(BaseModel):
    """Per-run metrics, all recomputable from the trace CSV alone."""

    scenario: str
    method: str
    smid: bool
    seed: int
    min_h: float
    final_tracking_error: float
    # earliest time after which the governor's safety term stays zero;
    # null when the term is still active at the end of the run
    time_to_term_zero: float | None = None
    # closing value of the error buffer (buffer governor only)
    final_buffer: float | None = None
    jitter: float
    wall_clock_s: float
    trace_path: str | None = None
    report_path: str | None = None

    def as_text(self) -> str:
        lines = []
        for name, value in self.model_dump().items():
            if value is None:
                value = "-"
            elif isinstance(value, bool):
                value = "on" if value else "off"
            elif isinstance(value, float):
                value = format(value, ".17g")
            lines.append(f"{name}: {value}")
        return "\n".join(lines) + "\n"


class SimulateResponse(BaseModel):
    report: RunReport
    trace_csv: str | None = None


class CompareRequest(BaseModel):
    scenario: str | dict = "default_p2"
    smid: bool = False  # add a second row per method with SMID enabled
    seed: int = 0
    horizon: float | None = Field(default=None, gt=0)
    rate: float | None = Field(default=None, gt=0)
    include_traces: bool = False


class CompareRow(BaseModel):
    method: str
    smid: bool
    status: str  # "ok" | "aborted"
    report: RunReport | None = None
    abort_cause: str | None = None


class CompareResponse(BaseModel):
    scenario: str
    rows: list[CompareRow]
    comparison_csv: str
    traces: dict[str, str] = {}  # "<method>[_smid]" -> trace CSV text
    all_ok: bool


class CheckRequest(BaseModel):
    scenario: str | dict = "default_p2"
    seed: int = 0
    samples: int = Field(default=2000, ge=1)


class AssumptionCheck(BaseModel):
    name: str
    status: str  # "pass" | "fail" | "indeterminate"
    method: str  # "exact" | "sampled"
    detail: str


class CheckResponse(BaseModel):
    scenario: str
    results: list[AssumptionCheck]
    all_exact_pass: bool


class ScenarioSummary(BaseModel):
    name: str
    problem: int
    methods: list[str]
    horizon: float
    control_rate: float


class ScenariosResponse(BaseModel):
    builtins: list[ScenarioSummary]
    methods: list[str] = list(METHODS)


class ErrorBody(BaseModel):
    code: str  # machine-readable: "invalid-scenario" | "simulation-aborted"
    detail: str
