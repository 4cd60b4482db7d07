"""Closed-loop simulator: zero-order-hold control at a fixed rate, classical
Runge-Kutta substeps in between, optional set-membership identification.

Each control period computes the desired feedforward r_*, filters it
through the selected reference governor, forms the control input, then
holds both constant while the coupled plant / reference-model / estimate
ODEs are integrated.  Everything observable lands in a :class:`Trace`
with a fixed column layout, one row per control instant (so a run of H
seconds at rate R yields H*R + 1 rows).
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from . import baselines, ebsb, ebsf, smid
from .adapt_core import (
    AdaptiveState,
    SingularLambdaHat,
    control_p1,
    control_p2,
    error_bound,
    lyapunov_value,
)
from .barrier import chain_eval
from .convex_sets import Box, PointOutsideSet, ortho_project, tangent_cone_project
from .numkit import (
    Infeasible,
    NonFiniteState,
    NotConverged,
    NotHurwitz,
    rk4_step,
)
from .scenario import (
    InvalidScenario,
    Scenario,
    build_benchmark,
    desired_trajectory,
)

__all__ = [
    "METHODS",
    "SimulationAborted",
    "Trace",
    "TRACE_COLUMNS",
    "jitter_metric",
    "run",
]

log = logging.getLogger(__name__)

METHODS = ("ideal", "ebsb", "ebsf", "acbf", "racbf")

TRACE_COLUMNS = (
    "t",
    "x_0", "x_1", "x_2", "x_3",
    "x_m_0", "x_m_1", "x_m_2", "x_m_3",
    "u_0", "u_1",
    "r_star_0", "r_star_1",
    "r_s_0", "r_s_1",
    "h_x", "h_x_m", "h_r_x",
    "safety_term", "r_s_rate",
    "theta_hat_0", "theta_hat_1",
    "lambda_hat_0", "lambda_hat_1",
    "v_lyap",
    "theta_lo_0", "theta_lo_1", "theta_hi_0", "theta_hi_1",
    "lambda_lo_0", "lambda_lo_1", "lambda_hi_0", "lambda_hi_1",
)


class SimulationAborted(RuntimeError):
    """A module-level error surfaced mid-run; carries time and cause."""

    def __init__(self, t: float, step: int, cause: BaseException):
        super().__init__(f"simulation aborted at t={t:.3f}s (step {step}): {cause}")
        self.t = t
        self.step = step
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.t, self.step, self.cause))


@dataclass(frozen=True)
class Trace:
    """Fixed-layout run record: ``data[i, j]`` is column ``columns[j]`` at
    control instant i.  ``safety_term`` holds the buffer for the
    error-based buffer governor, the interpolation weight for the filter
    governor, and zero otherwise; the ``*_lo``/``*_hi`` columns are the
    parameter boxes in effect at each instant."""

    columns: tuple[str, ...]
    data: np.ndarray
    method: str = "unknown"
    scenario_name: str = "unknown"
    smid: bool = False
    seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def vector(self, prefix: str, dim: int) -> np.ndarray:
        idx = [self.columns.index(f"{prefix}_{j}") for j in range(dim)]
        return self.data[:, idx]

    @property
    def dt(self) -> float:
        t = self["t"]
        return float(t[1] - t[0]) if len(t) > 1 else 0.0

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.data:
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv_text(cls, text: str, **meta) -> "Trace":
        lines = text.strip().splitlines()
        columns = tuple(lines[0].split(","))
        data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
        return cls(columns, data, **meta)

    @classmethod
    def from_csv(cls, path, **meta) -> "Trace":
        with open(path) as fh:
            return cls.from_csv_text(fh.read(), **meta)


def jitter_metric(trace: Trace) -> float:
    """Max reference slew ||r_s(t+dt) - r_s(t)|| / dt over the final half."""
    rate = trace["r_s_rate"]
    start = len(rate) // 2
    return float(np.max(rate[start:])) if len(rate) > start else 0.0


def _box_rate_project(box: Box, v: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Tangent-cone projection with the estimate clamped into the box first
    (intermediate Runge-Kutta stages may poke marginally outside)."""
    return tangent_cone_project(box, np.clip(v, box.lo, box.hi), raw)


_ABORTABLE = (
    ebsb.ReferenceUnsafe,
    ebsb.InfeasibleAtSingularGradient,
    Infeasible,
    NonFiniteState,
    NotConverged,
    NotHurwitz,
    PointOutsideSet,
    SingularLambdaHat,
    smid.IllConditioned,
)


def run(scn: Scenario, method: str, smid_on: bool = False, seed: int = 0) -> Trace:
    """Simulate one scenario with one reference governor.

    ``method`` is one of ``ideal`` (true parameters), ``ebsb``
    (error-based safety buffer; problem class 1 only), ``ebsf``
    (error-based safety filter), ``acbf``, or ``racbf``.  With ``smid_on``
    the parameter boxes shrink online from input/output data and all live
    estimates are re-projected after each shrink.  Runs are deterministic
    in (scenario, method, smid_on, seed).

    Raises :class:`InvalidScenario` for bad arguments and
    :class:`SimulationAborted` when a governor or numerical kernel fails
    mid-run.
    """
    if method not in METHODS:
        raise InvalidScenario(f"method: unknown method {method!r} (choose from {METHODS})")
    sys = build_benchmark(scn)
    scn = sys.scenario
    if method == "ebsb" and sys.problem != 1:
        raise InvalidScenario(
            "method: the error-based safety buffer needs a known input gain "
            "(problem class 1 scenario)"
        )

    rng = np.random.default_rng(seed)
    plant, refmodel = sys.plant, sys.refmodel
    a_mat, b_mat, a_m = plant.a, plant.b, refmodel.a_m
    k_gain = refmodel.k
    p_lyap = sys.p_lyap
    bt_p = b_mat.T @ p_lyap
    dt = scn.dt
    sub_dt = dt / scn.substeps
    steps = scn.steps
    estimates_gain = sys.problem == 2
    adaptive = method != "ideal"
    has_aux = method in ("acbf", "racbf")

    theta_box = sys.theta_box
    lambda_box = sys.lambda_box
    x = np.asarray(scn.x0, dtype=float).copy()
    x_m = np.asarray(scn.x_m0, dtype=float).copy()
    theta_hat = sys.theta_hat0.copy()
    lambda_hat = (sys.lambda_hat0 if estimates_gain else sys.lambda_known).copy()
    aux = (
        baselines.AuxEstimates(
            theta_hat.copy(), lambda_hat.copy() if estimates_gain else None
        )
        if has_aux
        else None
    )

    def make_configs():
        cfgs = {}
        if method == "ebsb":
            cfgs["ebsb"] = ebsb.EbsbConfig(
                scn.alpha_r, scn.governor_delta, sys.chain_ref, sys.w, theta_box
            )
        if method == "ebsf":
            cfgs["ebsf"] = ebsf.EbsfConfig(
                scn.alpha_r,
                scn.governor_delta,
                sys.chain_plant,
                plant.f,
                ebsf.default_error_gauge(scn.ebsf_error_gain),
                theta_box,
                lambda_box,
            )
        if method == "acbf":
            cfgs["acbf"] = baselines.CbfBaselineConfig(
                scn.alpha_r,
                acbf_depth,
                sys.chain_plant,
                theta_box,
                lambda_box,
                scn.gamma_theta_s,
                scn.gamma_lambda_s,
            )
        if method == "racbf":
            cfgs["racbf"] = baselines.CbfBaselineConfig(
                scn.alpha_r,
                baselines.racbf_buffer_depth(
                    scn.alpha_r,
                    theta_box,
                    scn.gamma_theta_s,
                    lambda_box,
                    scn.gamma_lambda_s if lambda_box is not None else None,
                ),
                sys.chain_plant,
                theta_box,
                lambda_box,
                scn.gamma_theta_s,
                scn.gamma_lambda_s,
            )
        return cfgs

    # the aCBF depth is a start-time quantity and never recomputed
    acbf_depth = (
        baselines.acbf_buffer_depth(
            theta_box,
            aux.theta_s,
            scn.gamma_theta_s,
            lambda_box,
            aux.lambda_s,
            scn.gamma_lambda_s if lambda_box is not None else None,
        )
        if method == "acbf"
        else 0.0
    )
    cfgs = make_configs()

    if method == "ebsf":
        # advisory only: the error gauge evaluated at the worst-case
        # tracking error should sit inside the barrier's reachable range,
        # otherwise the interpolation window can swallow the whole safe
        # set and the filter never leaves its worst-case mode
        worst_err = error_bound(
            p_lyap,
            x - x_m,
            theta_hat,
            theta_box,
            scn.gamma_theta,
            lambda_hat if estimates_gain else None,
            lambda_box,
            scn.gamma_lambda if estimates_gain else None,
        )
        far = x_m.copy()
        far[:2] = np.asarray(scn.pillar_center, dtype=float) + (
            np.linalg.norm(x_m[:2] - np.asarray(scn.pillar_center)) + 5.0
        ) * np.array([1.0, 0.0])
        far[2:] = 0.0
        reachable = max(
            chain_eval(sys.chain_plant, x).values[-1],
            chain_eval(sys.chain_plant, far).values[-1],
        )
        gauge_at_worst = cfgs["ebsf"].error_gauge(worst_err)
        if gauge_at_worst >= reachable:
            log.warning(
                "error gauge at the worst-case tracking error (%.3g) is not "
                "below the observed barrier range (%.3g); the filter may "
                "stay in its worst-case mode for the whole run",
                gauge_at_worst,
                reachable,
            )

    # set-membership identification state
    use_smid = bool(smid_on)
    if use_smid:
        schedule = smid.SmidSchedule(scn.smid_period, scn.smid_confidence)
        period_steps = max(int(round(schedule.update_period / dt)), 1)
        belief = smid.init_belief(
            sys.theta_hat0,
            theta_box,
            schedule.delta_conf,
            sys.lambda_hat0 if estimates_gain else None,
            lambda_box,
        )
        sigma_noise = scn.smid_sigma_scale * dt
        sigma_mat = sigma_noise**2 * np.eye(plant.m)
        zeta_star = (
            np.concatenate([plant.theta_star, plant.lambda_star])
            if estimates_gain
            else plant.theta_star.copy()
        )
        b_pinv_dt = np.linalg.pinv(b_mat * dt)
        eye_a_dt = np.eye(plant.n) + a_mat * dt

    lam_star = plant.lambda_star

    def governor(r_star):
        e = x - x_m
        if method == "ideal":
            r_s = baselines.ideal_reference(
                sys.chain_ref, refmodel, scn.alpha_r, scn.governor_delta, r_star, x
            )
            return r_s, 0.0
        if method == "ebsb":
            return ebsb.ebsb_reference(
                cfgs["ebsb"], refmodel, r_star, x, x_m, theta_hat, plant
            )
        if method == "ebsf":
            return ebsf.ebsf_reference(
                cfgs["ebsf"], refmodel, r_star, x, e, theta_hat, lambda_hat
            )
        cfg = cfgs[method]
        fn = baselines.acbf_reference if method == "acbf" else baselines.racbf_reference
        r_s = fn(
            cfg,
            refmodel,
            plant,
            r_star,
            x,
            theta_hat,
            lambda_hat if estimates_gain else None,
            aux,
        )
        return r_s, 0.0

    def control(r_s):
        state = AdaptiveState(x, x_m, theta_hat, lambda_hat)
        if method == "ideal":
            ideal_state = AdaptiveState(x, x_m, plant.theta_star, lam_star)
            return control_p2(plant, refmodel, ideal_state, r_s)
        if estimates_gain:
            return control_p2(plant, refmodel, state, r_s)
        # known gain: invert it around the identity-gain law
        return control_p1(plant, refmodel, state, r_s) / sys.lambda_known

    def pack():
        parts = [x, x_m]
        if adaptive:
            parts.append(theta_hat)
            if estimates_gain:
                parts.append(lambda_hat)
        if has_aux:
            parts.append(aux.theta_s)
            if estimates_gain:
                parts.append(aux.lambda_s)
        return np.concatenate(parts)

    def unpack(z):
        nonlocal x, x_m, theta_hat, lambda_hat
        x = z[0:4].copy()
        x_m = z[4:8].copy()
        off = 8
        if adaptive:
            theta_hat = z[off : off + plant.p].copy()
            off += plant.p
            if estimates_gain:
                lambda_hat = z[off : off + plant.m].copy()
                off += plant.m
        if has_aux:
            aux.theta_s = z[off : off + plant.p].copy()
            off += plant.p
            if estimates_gain:
                aux.lambda_s = z[off : off + plant.m].copy()

    def coupled_field(u, r_s):
        b_rs = b_mat @ r_s
        gov_cfg = cfgs.get(method)

        def field(z):
            x_ = z[0:4]
            xm_ = z[4:8]
            fx = plant.f(x_)
            dx = a_mat @ x_ + b_mat @ (lam_star * u - fx @ plant.theta_star)
            dxm = a_m @ xm_ + b_rs
            parts = [dx, dxm]
            off = 8
            if adaptive:
                e_ = x_ - xm_
                bpe = bt_p @ e_
                th = z[off : off + plant.p]
                d_th = _box_rate_project(theta_box, th, -scn.gamma_theta * (fx.T @ bpe))
                parts.append(d_th)
                off += plant.p
                if estimates_gain:
                    la = z[off : off + plant.m]
                    d_la = _box_rate_project(lambda_box, la, scn.gamma_lambda * (u * bpe))
                    parts.append(d_la)
                    off += plant.m
            if has_aux:
                ev = chain_eval(sys.chain_plant, x_)
                if method == "acbf":
                    grad_row = baselines.acbf_barrier_gradient(
                        ev.values[-1], ev.grad_top, gov_cfg.delta_depth
                    )
                else:
                    grad_row = ev.grad_top
                gb = grad_row @ b_mat
                th_s = z[off : off + plant.p]
                d_ths = _box_rate_project(
                    theta_box, th_s, scn.gamma_theta_s * (gb @ fx)
                )
                parts.append(d_ths)
                off += plant.p
                if estimates_gain:
                    la_s = z[off : off + plant.m]
                    d_las = _box_rate_project(
                        lambda_box, la_s, -scn.gamma_lambda_s * (gb * u)
                    )
                    parts.append(d_las)
            return np.concatenate(parts)

        return field

    def project_all():
        nonlocal theta_hat, lambda_hat
        if adaptive:
            theta_hat = ortho_project(theta_box, theta_hat)
            if estimates_gain:
                lambda_hat = ortho_project(lambda_box, lambda_hat)
        if has_aux:
            aux.theta_s = ortho_project(theta_box, aux.theta_s)
            if estimates_gain:
                aux.lambda_s = ortho_project(lambda_box, aux.lambda_s)

    def lyap_now():
        if not adaptive:
            return 0.0
        return lyapunov_value(
            x - x_m,
            theta_hat - plant.theta_star,
            p_lyap,
            scn.gamma_theta,
            (lambda_hat - lam_star) if estimates_gain else None,
            scn.gamma_lambda if estimates_gain else None,
        )

    rows = np.empty((steps + 1, len(TRACE_COLUMNS)))
    r_s_prev: np.ndarray | None = None

    try:
        for k in range(steps + 1):
            t = k * dt
            p_des, v_des, a_des = desired_trajectory(scn, t)
            r_star = baselines.ideal_feedforward(k_gain, p_des, v_des, a_des)
            r_s, safety_term = governor(r_star)
            u = control(r_s)
            slew = (
                float(np.linalg.norm(r_s - r_s_prev)) / dt if r_s_prev is not None else 0.0
            )
            r_s_prev = r_s
            lam_lo = lambda_box.lo if lambda_box is not None else sys.lambda_known
            lam_hi = lambda_box.hi if lambda_box is not None else sys.lambda_known
            rows[k] = np.concatenate(
                [
                    [t],
                    x,
                    x_m,
                    u,
                    r_star,
                    r_s,
                    [
                        sys.barrier.value(x),
                        sys.barrier.value(x_m),
                        chain_eval(sys.chain_plant, x).values[-1],
                        safety_term,
                        slew,
                    ],
                    theta_hat,
                    lambda_hat,
                    [lyap_now()],
                    theta_box.lo,
                    theta_box.hi,
                    lam_lo,
                    lam_hi,
                ]
            )
            if k == steps:
                break

            x_prev = x.copy()
            z = pack()
            field = coupled_field(u, r_s)
            for _ in range(scn.substeps):
                z = rk4_step(field, z, sub_dt)
            unpack(z)
            project_all()

            if use_smid:
                fx_prev = plant.f(x_prev)
                if estimates_gain:
                    phi = np.hstack([-fx_prev, np.diag(u)])
                else:
                    phi = -fx_prev
                if scn.smid_noise_mode == "proxy":
                    y = phi @ zeta_star + sigma_noise * rng.standard_normal(plant.m)
                else:
                    y = b_pinv_dt @ (x - eye_a_dt @ x_prev)
                    if not estimates_gain:
                        y = y - sys.lambda_known * u
                belief = smid.belief_update(belief, phi, y, sigma_mat)
                if (k + 1) % period_steps == 0:
                    theta_box, lambda_box = smid.smid_step(
                        theta_box, lambda_box, belief, schedule.delta_conf
                    )
                    project_all()
                    if aux is not None:
                        projected = smid.apply_resets(
                            theta_box,
                            lambda_box,
                            {"theta_s": aux.theta_s, "lambda_s": aux.lambda_s},
                        )
                        aux.theta_s = projected["theta_s"]
                        aux.lambda_s = projected["lambda_s"]
                    cfgs = make_configs()
    except _ABORTABLE as exc:
        raise SimulationAborted(k * dt, k, exc) from exc

    return Trace(
        TRACE_COLUMNS,
        rows,
        method=method,
        scenario_name=scn.name,
        smid=use_smid,
        seed=seed,
    )
