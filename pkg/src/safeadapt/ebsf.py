"""Error-based safety filter for reference governors (unknown input gain).

When both the matched parameters and the diagonal input gain are unknown,
enforcing the barrier constraint along the worst-case closed-loop field is
safe but jittery, while enforcing it along the ideal field is smooth but
only valid once adaptation has converged.  The filter interpolates: with

    z_m(x, r) = A_m x + B r                      (ideal closed loop)
    z_p(x, r, th, la) = A x + B (diag(la) diag(la_hat)^-1 (K x + r + F th_hat) - F th)

the constraint enforced is

    min over (th, la) in Theta x L of
        grad(h_r)|x . ((1 - beta) z_m + beta z_p) >= -alpha_r h_r(x) + delta

where beta in [0, 1] rises smoothly as h_r(x) falls through a window tied
to the tracking-error gauge:

    beta = sat( (max{a(||e||), 2 delta/(3 alpha_r)} - h_r(x))
                / (max{a(||e||), 2 delta/(3 alpha_r)} - delta/(3 alpha_r)) ).

For box sets the inner minimum is exact: the theta part is a per-coordinate
supremum folded into a constant xi, and the lambda part splits into 2^m - 1
half-spaces in the scaled reference z = diag(la_hat)^-1 r, indexed by the
sign pattern J of diag(w) z with per-coordinate gains

    l_J[j] = (1 - beta) la_hat[j] + beta * (la_lo[j] if j in J else la_hi[j]).

Only one of the two uniform-sign patterns is kept (J = empty iff xi <= 0,
J = full iff xi > 0).  The filtered reference minimizes ||r - r_*|| via the
weighted projection of z_* = diag(la_hat)^-1 r_*.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapt_core import RefModel
from .barrier import HocbfChain, chain_eval
from .convex_sets import Box, ConvexParamSet, linear_max, linear_min
from .numkit import HalfSpace, Infeasible, qp_project

__all__ = [
    "EbsfConfig",
    "beta_ebsf",
    "default_error_gauge",
    "ebsf_constraints",
    "ebsf_reference",
    "xi_value",
]

_SINGULAR_GRAD = 1e-10


def default_error_gauge(gain: float) -> Callable[[float], float]:
    """The linear gauge a(||e||) = gain * ||e||."""

    def gauge(err_norm: float) -> float:
        return gain * err_norm

    return gauge


@dataclass(frozen=True)
class EbsfConfig:
    """Filter data: plant-drift chain, regressor, error gauge, both sets.

    ``regressor`` is the plant's F(x); ``lambda_set`` must be a box with a
    strictly positive lower corner (the per-coordinate gain extrema in the
    half-space construction are exact only for boxes), or None when the
    gain is known exactly — the worst case then collapses to the single
    half-space grad(h_r) B r >= xi.
    """

    alpha_r: float
    delta: float
    chain: HocbfChain
    regressor: Callable[[np.ndarray], np.ndarray]
    error_gauge: Callable[[float], float]
    theta_set: ConvexParamSet
    lambda_set: Box | None

    def __post_init__(self):
        if self.alpha_r <= 0 or self.delta <= 0:
            raise ValueError("alpha_r and delta must be positive")
        if self.lambda_set is None:
            return
        if not isinstance(self.lambda_set, Box):
            raise TypeError("lambda_set must be a Box or None")
        if np.any(self.lambda_set.lo <= 0.0):
            raise ValueError("input-gain set must have positive lower bounds")


def _window_top(cfg: EbsfConfig, e_norm: float) -> float:
    return max(cfg.error_gauge(e_norm), 2.0 * cfg.delta / (3.0 * cfg.alpha_r))


def beta_ebsf(cfg: EbsfConfig, x: np.ndarray, e_x: np.ndarray) -> float:
    """Interpolation weight in [0, 1]; 0 once h_r(x) clears the window."""
    hr = chain_eval(cfg.chain, np.asarray(x, dtype=float)).values[-1]
    top = _window_top(cfg, float(np.linalg.norm(e_x)))
    bottom = cfg.delta / (3.0 * cfg.alpha_r)
    beta = (top - hr) / (top - bottom)
    return min(max(beta, 0.0), 1.0)


def xi_value(
    cfg: EbsfConfig,
    refmodel: RefModel,
    x: np.ndarray,
    beta: float,
    theta_hat: np.ndarray,
    lambda_hat: np.ndarray,
) -> float:
    """Reference-independent part of the interpolated constraint.

    xi = -alpha_r h_r(x) + delta - grad(h_r).(A_m - beta B K) x
         + beta * max over theta of grad(h_r) B F(x) theta
         - beta * min over lambda of grad(h_r) B diag(lambda) diag(la_hat)^-1 (K x + F(x) theta_hat)

    Both extrema are exact over the box/polytope sets.
    """
    x = np.asarray(x, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    lambda_hat = np.asarray(lambda_hat, dtype=float)
    ev = chain_eval(cfg.chain, x)
    grad = ev.grad_top
    b = refmodel.b
    a_m = refmodel.a_m
    k = refmodel.k
    gb = grad @ b  # row vector of length m
    xi = -cfg.alpha_r * ev.values[-1] + cfg.delta
    xi -= float(grad @ (a_m @ x)) - beta * float(gb @ (k @ x))
    if beta != 0.0:
        f_x = cfg.regressor(x)
        xi += beta * linear_max(cfg.theta_set, gb @ f_x)
        nominal = k @ x + f_x @ theta_hat
        if cfg.lambda_set is None:
            # known gain: diag(lambda) diag(lambda_hat)^-1 is the identity
            xi -= beta * float(gb @ nominal)
        else:
            xi -= beta * linear_min(cfg.lambda_set, gb * (nominal / lambda_hat))
    return float(xi)


def ebsf_constraints(
    cfg: EbsfConfig,
    refmodel: RefModel,
    x: np.ndarray,
    beta: float,
    lambda_hat: np.ndarray,
    xi: float,
) -> list[HalfSpace]:
    """The 2^m - 1 half-spaces in z = diag(lambda_hat)^-1 r."""
    grad = chain_eval(cfg.chain, np.asarray(x, dtype=float)).grad_top
    w = grad @ refmodel.b
    m = w.shape[0]
    lambda_hat = np.asarray(lambda_hat, dtype=float)
    if cfg.lambda_set is None:
        return [HalfSpace(lambda_hat * w, xi)]
    lam_lo = cfg.lambda_set.lo
    lam_hi = cfg.lambda_set.hi
    out: list[HalfSpace] = []
    full = (1 << m) - 1
    for pattern in range(1 << m):
        if pattern == 0 and xi > 0.0:
            continue
        if pattern == full and xi <= 0.0:
            continue
        picked = np.where(
            [(pattern >> j) & 1 for j in range(m)], lam_lo, lam_hi
        )
        gains = (1.0 - beta) * lambda_hat + beta * picked
        out.append(HalfSpace(gains * w, xi))
    return out


def ebsf_reference(
    cfg: EbsfConfig,
    refmodel: RefModel,
    r_star: np.ndarray,
    x: np.ndarray,
    e_x: np.ndarray,
    theta_hat: np.ndarray,
    lambda_hat: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Filter r_* through the interpolated worst-case constraint.

    Returns (r_s, beta).  Solved as the diag(lambda_hat)^2-weighted
    projection of z_* = diag(lambda_hat)^-1 r_* onto the half-space
    intersection, mapped back by r_s = diag(lambda_hat) z_s, so the
    objective is exactly ||r - r_*||^2.  A vanishing constraint gradient
    with xi > 0 is unsatisfiable and raises :class:`Infeasible`.
    """
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    lambda_hat = np.asarray(lambda_hat, dtype=float)
    beta = beta_ebsf(cfg, x, e_x)
    xi = xi_value(cfg, refmodel, x, beta, theta_hat, lambda_hat)
    grad = chain_eval(cfg.chain, np.asarray(x, dtype=float)).grad_top
    w = grad @ refmodel.b
    if float(np.linalg.norm(w)) < _SINGULAR_GRAD:
        if xi <= 1e-9:
            return r_star.copy(), beta
        raise Infeasible(
            "filter constraint unsatisfiable with vanishing input gradient"
        )
    constraints = ebsf_constraints(cfg, refmodel, x, beta, lambda_hat, xi)
    z_star = r_star / lambda_hat
    z_s = qp_project(np.diag(lambda_hat**2), z_star, constraints)
    return lambda_hat * z_s, beta
