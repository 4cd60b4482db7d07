"""Baseline reference governors: ideal (true parameters), aCBF, RaCBF.

The ideal controller cancels the uncertainty exactly, so its governor
enforces the barrier constraint along the reference dynamics at the plant
state with no tightening.  The two adaptive-CBF baselines keep auxiliary
parameter estimates (theta_s, lambda_s) with their own projected laws and
buy safety with a fixed buffer depth:

* aCBF reshapes the barrier around a depth D:
      h_a = D^2                      where h_r >= D
      h_a = D^2 - (h_r - D)^2        elsewhere
  and enforces grad(h_a) . x_dot_hat >= 0 along the estimated closed loop,
  with D^2 >= ||theta_s_err(0)||^2/(2 g_th_s) + ||lambda_s_err(0)||^2/(2 g_la_s).

* RaCBF keeps h_r and enforces grad(h_r) . x_dot_hat >= -alpha_r h_r + D
  with D = (alpha_r/2)(sup||theta_s_err||^2/g_th_s + sup||lambda_s_err||^2/g_la_s).

In both, the estimated closed-loop field substitutes the applied control
law, leaving a single half-space in the governed reference r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapt_core import Plant, RefModel
from .barrier import HocbfChain, chain_eval
from .convex_sets import (
    ConvexParamSet,
    diameter,
    sup_distance,
    tangent_cone_project,
)
from .numkit import HalfSpace, qp_project

__all__ = [
    "AuxEstimates",
    "CbfBaselineConfig",
    "acbf_barrier",
    "acbf_barrier_gradient",
    "acbf_buffer_depth",
    "acbf_reference",
    "aux_rates",
    "ideal_feedforward",
    "ideal_reference",
    "racbf_buffer_depth",
    "racbf_reference",
]


@dataclass
class AuxEstimates:
    """Auxiliary estimates owned by the CBF baselines (not the control law)."""

    theta_s: np.ndarray
    lambda_s: np.ndarray | None = None


@dataclass(frozen=True)
class CbfBaselineConfig:
    """Shared data for the aCBF/RaCBF governors.

    The chain is built along the open-loop drift A.  ``lambda_set`` is None
    when the input gain is known exactly (then the lambda terms drop out of
    every expression).
    """

    alpha_r: float
    delta_depth: float  # buffer depth: aCBF's D or RaCBF's constraint offset
    chain: HocbfChain
    theta_set: ConvexParamSet
    lambda_set: ConvexParamSet | None
    gamma_theta_s: float
    gamma_lambda_s: float


def ideal_feedforward(
    k_gain: np.ndarray,
    p_des: np.ndarray,
    v_des: np.ndarray,
    a_des: np.ndarray,
) -> np.ndarray:
    """Exact reference-model inversion for a double-integrator closed loop.

    With K = [K_p K_v], feeding r_* = a_des - K_p p_des - K_v v_des into
    x_m' = A_m x_m + B r_* reproduces the desired position trajectory
    exactly.
    """
    k_gain = np.asarray(k_gain, dtype=float)
    m = k_gain.shape[0]
    k_p = k_gain[:, :m]
    k_v = k_gain[:, m : 2 * m]
    return np.asarray(a_des, dtype=float) - k_p @ p_des - k_v @ v_des


def ideal_reference(
    chain: HocbfChain,
    refmodel: RefModel,
    alpha_r: float,
    delta: float,
    r_star: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    """Governor for the true-parameter controller.

    Single half-space on the reference dynamics at the plant state:
    grad(h_r)|x . (A_m x + B r) >= -alpha_r h_r(x) + delta.
    """
    x = np.asarray(x, dtype=float)
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    ev = chain_eval(chain, x)
    g = ev.grad_top @ refmodel.b
    rhs = -alpha_r * ev.values[-1] + delta - float(ev.grad_top @ (refmodel.a_m @ x))
    return qp_project(np.eye(r_star.shape[0]), r_star, [HalfSpace(g, rhs)])


def acbf_barrier(h_r: float, depth: float) -> float:
    """Reshaped barrier: constant above the depth, parabolic below."""
    if h_r >= depth:
        return depth * depth
    return depth * depth - (h_r - depth) ** 2


def acbf_barrier_gradient(h_r: float, grad_hr: np.ndarray, depth: float) -> np.ndarray:
    """Gradient of the reshaped barrier (zero on the saturated branch)."""
    if h_r >= depth:
        return np.zeros_like(grad_hr)
    return -2.0 * (h_r - depth) * grad_hr


def _estimated_closed_loop_halfspace(
    grad_row: np.ndarray,
    refmodel: RefModel,
    plant: Plant,
    x: np.ndarray,
    theta_hat: np.ndarray,
    lambda_hat: np.ndarray | None,
    aux: AuxEstimates,
    rhs: float,
) -> HalfSpace:
    """Constraint grad . (A_m x + B(r + F (th - th_s) - diag(u)(la - la_s))) >= rhs
    as a half-space in r after substituting the applied control law."""
    f_x = plant.f(x)
    gb = grad_row @ refmodel.b
    const = float(grad_row @ (refmodel.a_m @ x)) + float(gb @ (f_x @ (theta_hat - aux.theta_s)))
    if lambda_hat is None or aux.lambda_s is None:
        normal = gb
    else:
        # diag(u)(la - la_s) = D (K x + r + F th_hat), D = diag((la - la_s)/la)
        d = (lambda_hat - aux.lambda_s) / lambda_hat
        normal = gb * (1.0 - d)
        const -= float((gb * d) @ (refmodel.k @ x + f_x @ theta_hat))
    return HalfSpace(normal, rhs - const)


def acbf_reference(
    cfg: CbfBaselineConfig,
    refmodel: RefModel,
    plant: Plant,
    r_star: np.ndarray,
    x: np.ndarray,
    theta_hat: np.ndarray,
    lambda_hat: np.ndarray | None,
    aux: AuxEstimates,
) -> np.ndarray:
    """aCBF governor: grad(h_a) . estimated closed loop >= 0.

    On the saturated branch (h_r >= depth) the gradient vanishes, the
    constraint is inactive, and r_* passes through unchanged.
    """
    x = np.asarray(x, dtype=float)
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    ev = chain_eval(cfg.chain, x)
    h_r = ev.values[-1]
    if h_r >= cfg.delta_depth:
        return r_star.copy()
    grad_ha = acbf_barrier_gradient(h_r, ev.grad_top, cfg.delta_depth)
    hs = _estimated_closed_loop_halfspace(
        grad_ha, refmodel, plant, x, theta_hat, lambda_hat, aux, 0.0
    )
    return qp_project(np.eye(r_star.shape[0]), r_star, [hs])


def racbf_reference(
    cfg: CbfBaselineConfig,
    refmodel: RefModel,
    plant: Plant,
    r_star: np.ndarray,
    x: np.ndarray,
    theta_hat: np.ndarray,
    lambda_hat: np.ndarray | None,
    aux: AuxEstimates,
) -> np.ndarray:
    """RaCBF governor: grad(h_r) . estimated closed loop >= -alpha_r h_r + D."""
    x = np.asarray(x, dtype=float)
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    ev = chain_eval(cfg.chain, x)
    rhs = -cfg.alpha_r * ev.values[-1] + cfg.delta_depth
    hs = _estimated_closed_loop_halfspace(
        ev.grad_top, refmodel, plant, x, theta_hat, lambda_hat, aux, rhs
    )
    return qp_project(np.eye(r_star.shape[0]), r_star, [hs])


def aux_rates(
    cfg: CbfBaselineConfig,
    plant: Plant,
    refmodel: RefModel,
    x: np.ndarray,
    u: np.ndarray,
    grad_row: np.ndarray,
    aux: AuxEstimates,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Projected laws for the auxiliary estimates.

    theta_s' = Proj[  g_th_s (grad . B F(x))^T ]
    lambda_s' = Proj[ -g_la_s (grad . B diag(u))^T ]

    For aCBF pass grad(h_a); for RaCBF pass grad(h_r).
    """
    gb = grad_row @ refmodel.b
    d_theta = tangent_cone_project(
        cfg.theta_set, aux.theta_s, cfg.gamma_theta_s * (gb @ plant.f(x))
    )
    if aux.lambda_s is None or cfg.lambda_set is None:
        return d_theta, None
    d_lambda = tangent_cone_project(
        cfg.lambda_set, aux.lambda_s, -cfg.gamma_lambda_s * (gb * np.asarray(u, dtype=float))
    )
    return d_theta, d_lambda


def acbf_buffer_depth(
    theta_set: ConvexParamSet,
    theta_s0: np.ndarray,
    gamma_theta_s: float,
    lambda_set: ConvexParamSet | None = None,
    lambda_s0: np.ndarray | None = None,
    gamma_lambda_s: float | None = None,
) -> float:
    """Smallest admissible aCBF depth from worst-case initial aux errors."""
    total = sup_distance(theta_set, theta_s0) ** 2 / (2.0 * gamma_theta_s)
    if lambda_set is not None:
        if lambda_s0 is None or gamma_lambda_s is None:
            raise ValueError("lambda depth needs lambda_s0 and gamma_lambda_s")
        total += sup_distance(lambda_set, lambda_s0) ** 2 / (2.0 * gamma_lambda_s)
    return math.sqrt(total)


def racbf_buffer_depth(
    alpha_r: float,
    theta_set: ConvexParamSet,
    gamma_theta_s: float,
    lambda_set: ConvexParamSet | None = None,
    gamma_lambda_s: float | None = None,
) -> float:
    """RaCBF constraint offset from the set diameters.

    The auxiliary estimates stay inside their sets for all time, so the
    set diameter bounds the estimate error uniformly.
    """
    total = diameter(theta_set) ** 2 / gamma_theta_s
    if lambda_set is not None:
        if gamma_lambda_s is None:
            raise ValueError("lambda term needs gamma_lambda_s")
        total += diameter(lambda_set) ** 2 / gamma_lambda_s
    return 0.5 * alpha_r * total
