"""Error-based safety buffer for reference governors (known input gain).

The governor filters a desired reference r_* through a single half-space
constraint on the *reference model* state.  Because the plant tracks the
reference model only up to the adaptation transient, the constraint is
tightened by a buffer that converts the current tracking error and the
remaining parameter uncertainty into barrier units via the W matrices:

    r = 1:  D = max{ (e^T W_1 e + 2 Psi ||F^T B^T W_0 e||) / (2 h_1(x_m)), 0 }
    r > 1:  D = max{ (e^T W_r e + 2 Psi ||F^T B^T W_{r-1} e||) / (2 h_1(x_m))
                     - h_2(x_m) h_r(x_m) / h_1(x_m), 0 }

with Psi the supremum of ||theta_hat - theta|| over the parameter set.
The filtered reference solves

    min ||r - r_*||^2   s.t.   grad(h_r)|x_m . (A_m x_m + B r)
                               >= -alpha_r h_r(x_m) + delta + D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapt_core import Plant, RefModel
from .barrier import HocbfChain, WMatrices, chain_eval
from .convex_sets import ConvexParamSet, contains, sup_distance
from .numkit import HalfSpace, qp_project

__all__ = [
    "EbsbConfig",
    "InfeasibleAtSingularGradient",
    "InitialMarginsReport",
    "ReferenceUnsafe",
    "check_initial_margins",
    "delta_ebsb",
    "ebsb_reference",
    "safety_probes",
]

_H1_FLOOR = 1e-12
_SINGULAR_GRAD = 1e-10


class ReferenceUnsafe(RuntimeError):
    """Reference-model state left the safe set (h_1(x_m) <= 0)."""


class InfeasibleAtSingularGradient(RuntimeError):
    """Governor constraint unsatisfiable where grad(h_r) B vanishes."""


@dataclass(frozen=True)
class EbsbConfig:
    """Chain (built along the reference-model drift), W matrices, and the
    parameter set the buffer takes its supremum over."""

    alpha_r: float
    delta: float
    chain: HocbfChain
    w: WMatrices
    theta_set: ConvexParamSet

    def __post_init__(self):
        if self.alpha_r <= 0 or self.delta <= 0:
            raise ValueError("alpha_r and delta must be positive")
        if len(self.w.w) != self.chain.r + 1:
            raise ValueError("need W_0..W_r matching the chain degree")


def delta_ebsb(
    cfg: EbsbConfig,
    x: np.ndarray,
    x_m: np.ndarray,
    theta_hat: np.ndarray,
    plant: Plant,
) -> float:
    """Nonnegative constraint tightening from tracking error + uncertainty."""
    x = np.asarray(x, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    e = x - x_m
    ev = chain_eval(cfg.chain, x_m)
    h1 = ev.values[0]
    if h1 <= 0.0:
        raise ReferenceUnsafe(f"reference-model barrier non-positive (h_1 = {h1:.6g})")
    h1 = max(h1, _H1_FLOOR)
    psi = sup_distance(cfg.theta_set, theta_hat)
    r = cfg.chain.r
    w_r = cfg.w.w[r]
    w_rm1 = cfg.w.w[r - 1]
    coupling = float(np.linalg.norm(plant.f(x).T @ (plant.b.T @ (w_rm1 @ e))))
    head = (float(e @ w_r @ e) + 2.0 * psi * coupling) / (2.0 * h1)
    if r == 1:
        return max(head, 0.0)
    h2, hr = ev.values[1], ev.values[-1]
    return max(head - h2 * hr / h1, 0.0)


def ebsb_reference(
    cfg: EbsbConfig,
    refmodel: RefModel,
    r_star: np.ndarray,
    x: np.ndarray,
    x_m: np.ndarray,
    theta_hat: np.ndarray,
    plant: Plant,
) -> tuple[np.ndarray, float]:
    """Filter r_* through the buffered reference-model constraint.

    Returns (r_s, buffer).  Where the constraint gradient vanishes the
    constraint no longer depends on r: r_* is returned when feasible, the
    zero reference when only it is, and
    :class:`InfeasibleAtSingularGradient` is raised otherwise.
    """
    if not np.allclose(cfg.chain.drift, refmodel.a_m):
        raise ValueError("buffer chain must be built along the reference-model drift")
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    x_m = np.asarray(x_m, dtype=float)
    buffer = delta_ebsb(cfg, x, x_m, theta_hat, plant)
    ev = chain_eval(cfg.chain, x_m)
    g = ev.grad_top @ refmodel.b
    drift_term = float(ev.grad_top @ (refmodel.a_m @ x_m))
    rhs = -cfg.alpha_r * ev.values[-1] + cfg.delta + buffer - drift_term
    if float(np.linalg.norm(g)) < _SINGULAR_GRAD:
        # constraint is (numerically) independent of r
        if float(g @ r_star) >= rhs - 1e-9:
            return r_star.copy(), buffer
        if 0.0 >= rhs - 1e-9:
            return np.zeros_like(r_star), buffer
        raise InfeasibleAtSingularGradient(
            "reference constraint unsatisfiable with vanishing input gradient"
        )
    r_s = qp_project(np.eye(r_star.shape[0]), r_star, [HalfSpace(g, rhs)])
    return r_s, buffer


def safety_probes(cfg: EbsbConfig, x: np.ndarray, x_m: np.ndarray) -> tuple[float, ...]:
    """Margin signals that certify plant safety from reference safety.

    Probe 1 is h_1(x_m)^2 - e^T W_0 e; probe i >= 2 is
    2 h_1(x_m) h_i(x_m) - e^T W_{i-1} e.  Each probe nonnegative implies
    h_i at the *plant* state is nonnegative (the W quadratic form bounds
    how much tracking error can eat into the reference-model margin), and
    the buffered governor keeps all of them nonnegative from a valid
    start.
    """
    e = np.asarray(x, dtype=float) - np.asarray(x_m, dtype=float)
    ev = chain_eval(cfg.chain, np.asarray(x_m, dtype=float))
    h1 = ev.values[0]
    probes = [h1 * h1 - float(e @ cfg.w.w[0] @ e)]
    for i in range(2, cfg.chain.r + 1):
        probes.append(2.0 * h1 * ev.values[i - 1] - float(e @ cfg.w.w[i - 1] @ e))
    return tuple(probes)


@dataclass(frozen=True)
class InitialMarginsReport:
    """Startup feasibility of the buffered governor."""

    passed: bool
    reference_margins: tuple[float, ...]  # h_i(x_m(0)) minus its required floor
    plant_margin: float  # h(x(0))
    estimate_in_set: bool

    @property
    def details(self) -> str:
        margins = ", ".join(f"{m:.6g}" for m in self.reference_margins)
        return (
            f"reference margins [{margins}], plant margin "
            f"{self.plant_margin:.6g}, estimate in set: {self.estimate_in_set}"
        )


def check_initial_margins(
    cfg: EbsbConfig,
    x0: np.ndarray,
    x_m0: np.ndarray,
    theta_hat0: np.ndarray,
) -> InitialMarginsReport:
    """Exact start-up margins the buffered governor needs.

    Level 1 requires h_1(x_m(0)) >= max{ delta / prod(alphas),
    sqrt(e0^T W_0 e0) }; level i >= 2 requires h_i(x_m(0)) >=
    max{ delta / prod(alphas i..r), e0^T W_{i-1} e0 / (2 h_1(x_m(0))) }.
    The plant must start safe (h(x(0)) >= 0) and the estimate inside its
    set.
    """
    x0 = np.asarray(x0, dtype=float)
    x_m0 = np.asarray(x_m0, dtype=float)
    e0 = x0 - x_m0
    ev = chain_eval(cfg.chain, x_m0)
    alphas = cfg.chain.alphas
    r = cfg.chain.r
    h1 = ev.values[0]
    margins: list[float] = []
    tail_product = math.prod(alphas)
    floor1 = max(cfg.delta / tail_product, math.sqrt(max(float(e0 @ cfg.w.w[0] @ e0), 0.0)))
    margins.append(h1 - floor1)
    denom = max(h1, _H1_FLOOR)
    for i in range(2, r + 1):
        tail = math.prod(alphas[i - 1 :])
        floor_i = max(cfg.delta / tail, float(e0 @ cfg.w.w[i - 1] @ e0) / (2.0 * denom))
        margins.append(ev.values[i - 1] - floor_i)
    plant_margin = float(cfg.chain.base.value(x0))
    in_set = contains(cfg.theta_set, theta_hat0)
    passed = all(m >= 0.0 for m in margins) and plant_margin >= 0.0 and in_set
    return InitialMarginsReport(passed, tuple(margins), plant_margin, in_set)
