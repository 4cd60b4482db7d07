"""Independent reference implementations used to cross-check the kernels.

Every oracle here solves the same problem as the code under test by a
*different* method (Gaussian elimination instead of numpy's solver,
bisection instead of Newton polishing, scipy's SLSQP instead of active-set
enumeration, the information form instead of the covariance form), so
agreement between the two routes is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize


def gauss_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense linear solve by Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = a.shape[0]
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[pivot, col]) < 1e-300:
            raise np.linalg.LinAlgError("singular system")
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        for row in range(col + 1, n):
            f = a[row, col] / a[col, col]
            a[row, col:] -= f * a[col, col:]
            b[row] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def lyapunov_oracle(a_m: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve A_m^T P + P A_m = -Q by assembling the n^2 x n^2 system with
    explicit index loops (no Kronecker products) and Gaussian elimination."""
    a_m = np.asarray(a_m, dtype=float)
    q = np.asarray(q, dtype=float)
    n = a_m.shape[0]

    def idx(i, j):
        return i * n + j

    big = np.zeros((n * n, n * n))
    rhs = np.zeros(n * n)
    for i in range(n):
        for j in range(n):
            row = idx(i, j)
            rhs[row] = -q[i, j]
            for k in range(n):
                big[row, idx(k, j)] += a_m[k, i]  # (A_m^T P)[i, j]
                big[row, idx(i, k)] += a_m[k, j]  # (P A_m)[i, j]
    p = gauss_solve(big, rhs).reshape((n, n))
    return 0.5 * (p + p.T)


def qp_oracle(weight, target, constraints) -> np.ndarray:
    """Minimize (z-t)^T W (z-t) over half-spaces with scipy's SLSQP.

    ``constraints`` is any iterable of objects with .normal / .offset.
    Multiple starts guard against a bad initial point; the problem is
    convex so every converged feasible answer is global.
    """
    w = np.asarray(weight, dtype=float)
    t = np.atleast_1d(np.asarray(target, dtype=float))
    cons = [
        {
            "type": "ineq",
            "fun": lambda z, n=np.asarray(h.normal, float), o=float(h.offset): float(
                n @ z - o
            ),
        }
        for h in constraints
    ]

    def objective(z):
        d = z - t
        return float(d @ w @ d)

    best = None
    for start in (t, np.zeros_like(t), t + 1.0, t - 1.0):
        res = minimize(
            objective,
            start,
            method="SLSQP",
            constraints=cons,
            options={"ftol": 1e-12, "maxiter": 400},
        )
        # keep any feasible terminal iterate: SLSQP sometimes reports a
        # line-search stall right at the optimum, and a suboptimal feasible
        # point only weakens the one-sided objective comparison
        if any(c["fun"](res.x) < -1e-8 for c in cons):
            continue
        if best is None or objective(res.x) < objective(best):
            best = res.x
    if best is None:
        raise AssertionError("oracle QP failed to converge on a feasible point")
    return best


def inv_erf_bisect(y: float, tol: float = 1e-15) -> float:
    """Pure-bisection inverse of erf on (-1, 1)."""
    if y == 0.0:
        return 0.0
    lo, hi = (0.0, 10.0) if y > 0 else (-10.0, 0.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erf(mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def belief_info_oracle(zeta, p_cov, phi, y, sigma):
    """Recursive least squares written in the information form:
    (P+)^-1 = P^-1 + Phi^T Sigma^-1 Phi."""
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    p_cov = np.asarray(p_cov, dtype=float)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p_inv = np.linalg.inv(p_cov)
    s_inv = np.linalg.inv(sigma)
    p_new = np.linalg.inv(p_inv + phi.T @ s_inv @ phi)
    z_new = p_new @ (p_inv @ zeta + phi.T @ (s_inv @ y))
    return z_new, 0.5 * (p_new + p_new.T)


def random_hurwitz(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random strictly stable matrix: shift a random matrix left of the
    imaginary axis by its largest real eigenvalue part plus a margin."""
    m = rng.standard_normal((n, n))
    shift = float(np.max(np.linalg.eigvals(m).real)) + 0.5 + rng.random()
    return m - shift * np.eye(n)


def random_spd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    m = rng.standard_normal((n, n))
    return m @ m.T + floor * np.eye(n)
