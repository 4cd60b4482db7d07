"""Command-line front end.

Thin client over the service operations: every subcommand builds a request
model, calls the operation (in-process by default, over HTTP when
``--server`` is given), and writes the returned artifacts to disk. No
metric is computed here that is not in the response.

Exit codes: 0 success; 1 bad arguments (unknown scenario/method, governor
not applicable to the problem class, failed exact checks); 2 simulation
aborted mid-run (partial comparison results still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import httpx

from . import service
from .scenario import InvalidScenario, load_scenario
from .schemas import (
    CheckRequest,
    CheckResponse,
    CompareRequest,
    CompareResponse,
    SimulateRequest,
    SimulateResponse,
)
from .sim import SimulationAborted

EXIT_OK = 0
EXIT_BAD_ARGS = 1
EXIT_ABORTED = 2


class RemoteError(RuntimeError):
    """Error response from a remote server, with its machine-readable code."""

    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags by default, which collides with
    # the "simulation aborted" code; keep all argument problems at 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_ARGS, f"error: bad-arguments: {message}\n")


class InProcessClient:
    def simulate(self, req: SimulateRequest) -> SimulateResponse:
        return service.simulate(req)

    def compare(self, req: CompareRequest) -> CompareResponse:
        return service.compare(req)

    def check(self, req: CheckRequest) -> CheckResponse:
        return service.check(req)


class HttpClient:
    def __init__(self, base_url: str):
        self._http = httpx.Client(base_url=base_url, timeout=600.0)

    def _post(self, path: str, req, model):
        resp = self._http.post(path, json=req.model_dump())
        if resp.status_code != 200:
            try:
                body = resp.json()
                raise RemoteError(body.get("code", "http-error"), body.get("detail", resp.text))
            except ValueError:
                raise RemoteError("http-error", f"{resp.status_code}: {resp.text}")
        return model.model_validate(resp.json())

    def simulate(self, req: SimulateRequest) -> SimulateResponse:
        return self._post("/simulate", req, SimulateResponse)

    def compare(self, req: CompareRequest) -> CompareResponse:
        return self._post("/compare", req, CompareResponse)

    def check(self, req: CheckRequest) -> CheckResponse:
        return self._post("/check", req, CheckResponse)


def _make_client(args):
    return HttpClient(args.server) if args.server else InProcessClient()


def _scenario_arg(raw: str) -> str | dict:
    """Builtin name passes through; a path is loaded and sent inline so a
    remote server never needs the client's filesystem."""
    if Path(raw).exists():
        return load_scenario(raw).to_dict()
    return raw


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _slug(scenario: str | dict) -> str:
    if isinstance(scenario, dict):
        return str(scenario.get("name", "custom"))
    return scenario


def cmd_simulate(args) -> int:
    req = SimulateRequest(
        scenario=_scenario_arg(args.scenario),
        method=args.method,
        smid=args.smid,
        seed=args.seed,
        horizon=args.horizon,
        rate=args.rate,
    )
    resp = _make_client(args).simulate(req)
    out = Path(args.out)
    stem = f"{_slug(req.scenario)}_{args.method}{'_smid' if args.smid else ''}_seed{args.seed}"
    trace_path = out / f"{stem}.csv"
    report_path = out / f"{stem}_report.txt"
    _write_atomic(trace_path, resp.trace_csv or "")
    resp.report.trace_path = str(trace_path)
    resp.report.report_path = str(report_path)
    _write_atomic(report_path, resp.report.as_text())
    sys.stdout.write(resp.report.as_text())
    return EXIT_OK


def cmd_compare(args) -> int:
    req = CompareRequest(
        scenario=_scenario_arg(args.scenario),
        smid=args.smid,
        seed=args.seed,
        horizon=args.horizon,
        rate=args.rate,
    )
    resp = _make_client(args).compare(req)
    out = Path(args.out)
    stem = f"{_slug(req.scenario)}_compare{'_smid' if args.smid else ''}_seed{args.seed}"
    table_path = out / f"{stem}.csv"
    _write_atomic(table_path, resp.comparison_csv)
    sys.stdout.write(resp.comparison_csv)
    sys.stdout.write(f"comparison written to {table_path}\n")
    if not resp.all_ok:
        for row in resp.rows:
            if row.status != "ok":
                sys.stderr.write(
                    f"error: simulation-aborted: {row.method}"
                    f"{' (smid)' if row.smid else ''}: {row.abort_cause}\n"
                )
        return EXIT_ABORTED
    return EXIT_OK


def cmd_check(args) -> int:
    req = CheckRequest(
        scenario=_scenario_arg(args.scenario), seed=args.seed, samples=args.samples
    )
    resp = _make_client(args).check(req)
    for res in resp.results:
        sys.stdout.write(f"[{res.status:>13}] {res.name} ({res.method}): {res.detail}\n")
    if not resp.all_exact_pass:
        sys.stderr.write("error: check-failed: an exact assumption check failed\n")
        return EXIT_BAD_ARGS
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("safeadapt.service:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="safeadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method=False):
        p.add_argument("--scenario", default="default_p2", help="builtin name or scenario file")
        if method:
            p.add_argument("--method", default="ebsf", help="reference governor to run")
        p.add_argument("--smid", action="store_true", help="enable set-membership identification")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--horizon", type=float, default=None, help="override horizon (s)")
        p.add_argument("--rate", type=float, default=None, help="override control rate (Hz)")
        p.add_argument("--server", default=None, help="base URL of a running service")

    p_sim = sub.add_parser("simulate", help="run one scenario/method and write trace + report")
    common(p_sim, method=True)
    p_sim.set_defaults(fn=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run all applicable methods, write comparison CSV")
    common(p_cmp)
    p_cmp.set_defaults(fn=cmd_compare)

    p_chk = sub.add_parser("check", help="run assumption checks for a scenario")
    p_chk.add_argument("--scenario", default="default_p2")
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.add_argument("--samples", type=int, default=2000)
    p_chk.add_argument("--server", default=None)
    p_chk.set_defaults(fn=cmd_check)

    p_srv = sub.add_parser("serve", help="run the HTTP service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InvalidScenario as exc:
        sys.stderr.write(f"error: invalid-scenario: {exc}\n")
        return EXIT_BAD_ARGS
    except SimulationAborted as exc:
        sys.stderr.write(f"error: simulation-aborted: {exc}\n")
        return EXIT_ABORTED
    except RemoteError as exc:
        sys.stderr.write(f"error: {exc.code}: {exc}\n")
        return EXIT_ABORTED if exc.code == "simulation-aborted" else EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main(argv=None))
