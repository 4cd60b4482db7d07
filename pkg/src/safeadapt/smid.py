"""Set-membership identification via a recursive Gaussian belief.

The stacked unknown zeta_* = [theta_*; lambda_*] enters the Euler-
discretized dynamics linearly:

    y_{k+1} = Phi_k zeta_* + noise,
    Phi_k   = [-F(x_k), diag(u_k)],
    y_{k+1} = (B dt)^+ (x_{k+1} - (I + A dt) x_k),

so a recursive least-squares update maintains a Gaussian belief
(zeta_hat, P).  High-probability element-wise bounds come from rotating
the belief into its eigenbasis, applying a per-coordinate inverse-erf
quantile at confidence 1 - delta/dim, and re-expanding; intersecting the
bounds with the running boxes gives monotonically shrinking parameter
sets, and estimates are orthogonally re-projected after each shrink.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .convex_sets import Box, ortho_project
from .numkit import inv_erf, sym_eig, symmetrize

__all__ = [
    "GaussianBelief",
    "IllConditioned",
    "SmidSchedule",
    "apply_resets",
    "belief_update",
    "extract_bounds",
    "init_belief",
    "intersect_boxes",
    "smid_step",
]

log = logging.getLogger(__name__)

_COND_CAP = 1e12
_MIN_WIDTH = 1e-12


class IllConditioned(np.linalg.LinAlgError):
    """Innovation covariance too ill-conditioned to invert reliably."""


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance over the stacked unknown parameters."""

    zeta_hat: np.ndarray
    p_cov: np.ndarray

    def __post_init__(self):
        zeta = np.atleast_1d(np.asarray(self.zeta_hat, dtype=float))
        p = symmetrize(self.p_cov)
        if p.shape != (zeta.shape[0], zeta.shape[0]):
            raise ValueError("covariance shape does not match the mean")
        object.__setattr__(self, "zeta_hat", zeta)
        object.__setattr__(self, "p_cov", p)

    @property
    def dim(self) -> int:
        return self.zeta_hat.shape[0]


@dataclass(frozen=True)
class SmidSchedule:
    """Set-update cadence and per-update confidence budget."""

    update_period: float = 0.5
    delta_conf: float = 0.05

    def __post_init__(self):
        if self.update_period <= 0.0:
            raise ValueError("update period must be positive")
        if not 0.0 < self.delta_conf < 1.0:
            raise ValueError("confidence budget must lie in (0, 1)")


def belief_update(
    belief: GaussianBelief,
    phi: np.ndarray,
    y: np.ndarray,
    sigma: np.ndarray,
) -> GaussianBelief:
    """One recursive least-squares step with measurement covariance sigma."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p = belief.p_cov
    s = sigma + phi @ p @ phi.T
    if np.linalg.cond(s) > _COND_CAP:
        raise IllConditioned("innovation covariance condition number too large")
    gain = p @ phi.T @ np.linalg.inv(s)
    zeta = belief.zeta_hat + gain @ (y - phi @ belief.zeta_hat)
    p_new = symmetrize(p - gain @ phi @ p)
    return GaussianBelief(zeta, p_new)


def extract_bounds(belief: GaussianBelief, delta_conf: float) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise high-probability bounds on the true parameters.

    Rotate into the covariance eigenbasis, take the (1 - delta/dim)
    two-sided Gaussian quantile per rotated coordinate, and re-expand:
    lo/hi = zeta_hat -/+ |V| vtilde with vtilde_i = sqrt(2 d_i) *
    inv_erf(1 - delta/dim).
    """
    v, d = sym_eig(belief.p_cov)
    quantile = inv_erf(1.0 - delta_conf / belief.dim)
    vtilde = np.sqrt(2.0 * d) * quantile
    spread = np.abs(v) @ vtilde
    return belief.zeta_hat - spread, belief.zeta_hat + spread


def intersect_boxes(current: Box, lo: np.ndarray, hi: np.ndarray, label: str) -> Box:
    """Intersect a running box with new bounds; keep the old box when the
    intersection collapses (and warn)."""
    new_lo = np.maximum(current.lo, lo)
    new_hi = np.minimum(current.hi, hi)
    if np.any(new_hi - new_lo <= _MIN_WIDTH):
        log.warning("%s bound intersection collapsed; keeping previous box", label)
        return current
    return Box(new_lo, new_hi)


def smid_step(
    theta_box: Box,
    lambda_box: Box | None,
    belief: GaussianBelief,
    delta_conf: float,
) -> tuple[Box, Box | None]:
    """Shrink the parameter boxes with the belief's current bounds.

    The belief stacks [theta; lambda]; when ``lambda_box`` is None the
    belief covers theta only.
    """
    lo, hi = extract_bounds(belief, delta_conf)
    p = theta_box.dim
    new_theta = intersect_boxes(theta_box, lo[:p], hi[:p], "theta")
    if lambda_box is None:
        return new_theta, None
    new_lambda = intersect_boxes(lambda_box, lo[p:], hi[p:], "lambda")
    return new_theta, new_lambda


def apply_resets(
    theta_box: Box,
    lambda_box: Box | None,
    estimates: dict[str, np.ndarray | None],
) -> dict[str, np.ndarray | None]:
    """Re-project live estimates into the (shrunken) sets.

    ``estimates`` maps names to vectors; keys containing "lambda" project
    into the lambda box, everything else into the theta box.  None values
    pass through.
    """
    out: dict[str, np.ndarray | None] = {}
    for name, value in estimates.items():
        if value is None:
            out[name] = None
            continue
        box = lambda_box if "lambda" in name else theta_box
        if box is None:
            out[name] = np.asarray(value, dtype=float).copy()
        else:
            out[name] = ortho_project(box, value)
    return out


def init_belief(
    theta_hat0: np.ndarray,
    theta_box: Box,
    delta_conf: float,
    lambda_hat0: np.ndarray | None = None,
    lambda_box: Box | None = None,
) -> GaussianBelief:
    """Diagonal prior whose per-coordinate quantile band encloses the boxes.

    P0_ii = (max one-sided reach of coordinate i)^2 / (2 q^2) with
    q = inv_erf(1 - delta/dim), so the first extracted bounds contain the
    initial boxes and the first intersections are no-ops.
    """
    zeta = np.atleast_1d(np.asarray(theta_hat0, dtype=float))
    lo = theta_box.lo
    hi = theta_box.hi
    if lambda_box is not None:
        if lambda_hat0 is None:
            raise ValueError("lambda prior needs lambda_hat0")
        zeta = np.concatenate([zeta, np.atleast_1d(np.asarray(lambda_hat0, dtype=float))])
        lo = np.concatenate([lo, lambda_box.lo])
        hi = np.concatenate([hi, lambda_box.hi])
    q = inv_erf(1.0 - delta_conf / zeta.shape[0])
    reach = np.maximum(hi - zeta, zeta - lo)
    return GaussianBelief(zeta, np.diag(reach**2 / (2.0 * q * q)))
