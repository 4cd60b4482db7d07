"""Model-reference adaptive control core.

Plant family::

    x' = A x + B (Lambda u - F(x) theta_*)

with unknown matched parameters theta_* (and, when the input gain is also
unknown, unknown positive diagonal Lambda = diag(lambda_*)).  A reference
model x_m' = A_m x_m + B r_s with A_m = A + B K Hurwitz defines the error
e_x = x - x_m, and tangent-cone-projected gradient laws keep the estimates
inside their convex sets while driving e_x to zero.  The Lyapunov function

    V = e_x^T P e_x + ||theta_err||^2 / gamma_theta  (+ ||lambda_err||^2 / gamma_lambda)

with  A_m^T P + P A_m = -Q  certifies the laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .convex_sets import ConvexParamSet, sup_distance, tangent_cone_project
from .numkit import solve_lyapunov, sym_eig

__all__ = [
    "AdaptiveState",
    "Plant",
    "RefModel",
    "SingularLambdaHat",
    "control_p1",
    "control_p2",
    "error_bound",
    "lyapunov_value",
    "theta_lambda_rates",
    "theta_rate",
]


class SingularLambdaHat(ZeroDivisionError):
    """Input-gain estimate too close to zero to invert."""


_LAMBDA_EPS = 1e-12


@dataclass(frozen=True)
class Plant:
    """Matched-uncertainty plant ``x' = A x + B (Lambda u - F(x) theta_*)``.

    ``f`` maps the state to the (m x p) regressor matrix.  (A, B) must be
    controllable and every true input gain strictly positive.
    """

    a: np.ndarray
    b: np.ndarray
    f: Callable[[np.ndarray], np.ndarray]
    theta_star: np.ndarray
    lambda_star: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        theta = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lambda_star, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n) or b.shape[0] != n or b.ndim != 2:
            raise ValueError("A must be n x n and B n x m")
        ctrb = np.hstack([np.linalg.matrix_power(a, k) @ b for k in range(n)])
        if np.linalg.matrix_rank(ctrb) < n:
            raise ValueError("(A, B) must be controllable")
        if lam.shape[0] != b.shape[1]:
            raise ValueError("lambda_star must have one entry per input")
        if np.any(lam <= 0.0):
            raise ValueError("true input gains must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "lambda_star", lam)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def p(self) -> int:
        return self.theta_star.shape[0]


@dataclass(frozen=True)
class RefModel:
    """Reference model ``x_m' = A_m x_m + B r_s`` with A_m = A + B K Hurwitz."""

    a_m: np.ndarray
    k: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a_m = np.asarray(self.a_m, dtype=float)
        k = np.asarray(self.k, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if np.max(np.linalg.eigvals(a_m).real) >= 0.0:
            raise ValueError("A_m must be Hurwitz")
        object.__setattr__(self, "a_m", a_m)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_gain(cls, plant: Plant, k: np.ndarray) -> "RefModel":
        k = np.asarray(k, dtype=float)
        a_m = plant.a + plant.b @ k
        model = cls(a_m, k, plant.b)
        if np.linalg.norm(model.a_m - (plant.a + plant.b @ k)) > 1e-10:
            raise ValueError("A_m inconsistent with A + B K")
        return model


@dataclass
class AdaptiveState:
    """Snapshot of the closed loop: plant/reference states and estimates."""

    x: np.ndarray
    x_m: np.ndarray
    theta_hat: np.ndarray
    lambda_hat: np.ndarray | None = None
    t: float = 0.0

    @property
    def e_x(self) -> np.ndarray:
        return self.x - self.x_m


def control_p1(plant: Plant, refmodel: RefModel, state: AdaptiveState, r_s: np.ndarray) -> np.ndarray:
    """Certainty-equivalence law for a known (identity) input gain:

    u = K x + r_s + F(x) theta_hat
    """
    return (
        refmodel.k @ state.x
        + np.asarray(r_s, dtype=float)
        + plant.f(state.x) @ state.theta_hat
    )


def control_p2(plant: Plant, refmodel: RefModel, state: AdaptiveState, r_s: np.ndarray) -> np.ndarray:
    """Certainty-equivalence law with an estimated diagonal input gain:

    u = diag(lambda_hat)^-1 (K x + r_s + F(x) theta_hat)
    """
    if state.lambda_hat is None:
        raise ValueError("control_p2 needs a lambda estimate")
    lam = np.asarray(state.lambda_hat, dtype=float)
    if np.any(np.abs(lam) < _LAMBDA_EPS):
        raise SingularLambdaHat("input-gain estimate has a near-zero entry")
    return control_p1(plant, refmodel, state, r_s) / lam


def theta_rate(
    plant: Plant,
    state: AdaptiveState,
    e_x: np.ndarray,
    p_lyap: np.ndarray,
    gamma: float,
    theta_set: ConvexParamSet,
) -> np.ndarray:
    """Projected gradient law for the matched-parameter estimate:

    theta_hat' = Proj_{T(theta_hat)}[ -gamma F(x)^T B^T P e_x ]
    """
    raw = -gamma * (plant.f(state.x).T @ (plant.b.T @ (p_lyap @ e_x)))
    return tangent_cone_project(theta_set, state.theta_hat, raw)


def theta_lambda_rates(
    plant: Plant,
    state: AdaptiveState,
    e_x: np.ndarray,
    u: np.ndarray,
    p_lyap: np.ndarray,
    gamma_theta: float,
    gamma_lambda: float,
    theta_set: ConvexParamSet,
    lambda_set: ConvexParamSet,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint projected laws when the input gain is estimated too.

    The lambda law uses the *applied* (zero-order-held) input:
    lambda_hat' = Proj[ gamma_lambda diag(u) B^T P e_x ].
    """
    dtheta = theta_rate(plant, state, e_x, p_lyap, gamma_theta, theta_set)
    raw = gamma_lambda * (np.asarray(u, dtype=float) * (plant.b.T @ (p_lyap @ e_x)))
    dlam = tangent_cone_project(lambda_set, state.lambda_hat, raw)
    return dtheta, dlam


def lyapunov_value(
    e_x: np.ndarray,
    theta_err: np.ndarray,
    p_lyap: np.ndarray,
    gamma_theta: float,
    lambda_err: np.ndarray | None = None,
    gamma_lambda: float | None = None,
) -> float:
    """V = e^T P e + ||theta_err||^2/gamma_theta (+ ||lambda_err||^2/gamma_lambda)."""
    e_x = np.asarray(e_x, dtype=float)
    v = float(e_x @ p_lyap @ e_x) + float(theta_err @ theta_err) / gamma_theta
    if lambda_err is not None:
        if gamma_lambda is None:
            raise ValueError("gamma_lambda required with a lambda error term")
        v += float(lambda_err @ lambda_err) / gamma_lambda
    return v


def error_bound(
    p_lyap: np.ndarray,
    e_x0: np.ndarray,
    theta_hat0: np.ndarray,
    theta_set: ConvexParamSet,
    gamma_theta: float,
    lambda_hat0: np.ndarray | None = None,
    lambda_set: ConvexParamSet | None = None,
    gamma_lambda: float | None = None,
) -> float:
    """Uniform bound E on ||e_x(t)|| from the decrescent Lyapunov function.

    V never increases, V(0) <= lmax(P)||e0||^2 + Psi^2 terms, and
    lmin(P)||e||^2 <= V, giving

        E^2 = ( lmax(P) ||e0||^2 + Psi_theta^2/g_th + Psi_lambda^2/g_la ) / lmin(P).
    """
    _, eigs = sym_eig(np.asarray(p_lyap, dtype=float))
    lmax, lmin = float(eigs[0]), float(eigs[-1])
    if lmin <= 0.0:
        raise ValueError("P must be positive definite")
    e_x0 = np.asarray(e_x0, dtype=float)
    total = lmax * float(e_x0 @ e_x0)
    total += sup_distance(theta_set, theta_hat0) ** 2 / gamma_theta
    if lambda_set is not None:
        if lambda_hat0 is None or gamma_lambda is None:
            raise ValueError("lambda bound needs lambda_hat0 and gamma_lambda")
        total += sup_distance(lambda_set, lambda_hat0) ** 2 / gamma_lambda
    return math.sqrt(total / lmin)


def lyapunov_matrix(refmodel: RefModel, q: np.ndarray | None = None) -> np.ndarray:
    """P solving A_m^T P + P A_m = -Q (Q defaults to the identity)."""
    n = refmodel.a_m.shape[0]
    if q is None:
        q = np.eye(n)
    return solve_lyapunov(refmodel.a_m, q)
