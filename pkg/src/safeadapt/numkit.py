"""Small dense numerical kernels shared across the package.

Everything operates on plain float64 numpy arrays and is pure (no caching,
no global state).  Problem sizes are tiny (n <= 10), so the routines favor
exactness and explicit failure over asymptotic speed: the Lyapunov equation
is solved through its Kronecker vectorization, quadratic projections by
exhaustive active-set enumeration, and the symmetric eigenproblem by cyclic
Jacobi sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

__all__ = [
    "HalfSpace",
    "Infeasible",
    "NonFiniteState",
    "NotConverged",
    "NotHurwitz",
    "OutOfDomain",
    "inv_erf",
    "qp_project",
    "rk4_step",
    "solve_lyapunov",
    "sym_eig",
]


class NotHurwitz(ValueError):
    """The Lyapunov equation has no positive-definite solution."""


class Infeasible(ValueError):
    """No point satisfies every half-space constraint."""


class OutOfDomain(ValueError):
    """Argument outside the function's open domain."""


class NonFiniteState(FloatingPointError):
    """An integration stage produced NaN or +/-inf."""


class NotConverged(RuntimeError):
    """Iterative kernel exceeded its iteration cap."""


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def symmetrize(a) -> np.ndarray:
    """(A + A^T)/2 -- applied to every matrix before factorization."""
    a = _as_matrix(a)
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class HalfSpace:
    """Affine constraint ``normal . z >= offset``.

    A zero normal is accepted only when the constraint is vacuous
    (offset <= 0); otherwise the constraint is contradictory and the
    caller has a bug.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.atleast_1d(np.asarray(self.normal, dtype=float))
        offset = float(self.offset)
        if normal.ndim != 1:
            raise ValueError("half-space normal must be a vector")
        if not (np.all(np.isfinite(normal)) and math.isfinite(offset)):
            raise ValueError("half-space with non-finite data")
        if float(np.linalg.norm(normal)) == 0.0 and offset > 0.0:
            raise ValueError("zero normal with positive offset is contradictory")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", offset)

    def slack(self, z: np.ndarray) -> float:
        """normal.z - offset (>= 0 when satisfied)."""
        return float(self.normal @ np.asarray(z, dtype=float)) - self.offset


def solve_lyapunov(a_m: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``A_m^T P + P A_m = -Q`` for symmetric positive-definite P.

    The equation is vectorized with Kronecker products into an n^2 x n^2
    linear system (column-major vec convention) and solved densely.  Raises
    :class:`NotHurwitz` when the system is singular, the residual is poor,
    or P fails a positive-definiteness check -- all symptoms of A_m not
    being Hurwitz.
    """
    a_m = _as_matrix(a_m)
    q = symmetrize(q)
    n = a_m.shape[0]
    if q.shape != (n, n):
        raise ValueError("Q shape does not match A_m")
    eye = np.eye(n)
    # vec(A_m^T P) = (I (x) A_m^T) vec P, vec(P A_m) = (A_m^T (x) I) vec P
    lhs = np.kron(eye, a_m.T) + np.kron(a_m.T, eye)
    rhs = -q.flatten(order="F")
    try:
        vec_p = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NotHurwitz("Lyapunov system is singular") from exc
    p = symmetrize(vec_p.reshape((n, n), order="F"))
    residual = np.linalg.norm(a_m.T @ p + p @ a_m + q)
    if not residual <= 1e-10 * max(np.linalg.norm(q), 1e-30):
        raise NotHurwitz(f"Lyapunov residual too large ({residual:.3e})")
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NotHurwitz("Lyapunov solution is not positive definite") from exc
    return p


def qp_project(
    weight: np.ndarray,
    target: np.ndarray,
    constraints: list[HalfSpace] | tuple[HalfSpace, ...],
    tol: float = 1e-9,
) -> np.ndarray:
    """Minimize (z-target)^T W (z-target) subject to half-space constraints.

    Solved exactly by enumerating candidate active sets (all constraint
    subsets of size <= n), solving the equality-constrained KKT system for
    each, and keeping the best candidate whose multipliers are nonnegative
    and which satisfies every constraint.  Intended for the tiny QPs of the
    reference governors (a handful of constraints in <= 4 variables).

    Raises :class:`Infeasible` when no candidate satisfies all constraints.
    """
    w = symmetrize(weight)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    n = target.shape[0]
    if w.shape != (n, n):
        raise ValueError("weight shape does not match target")
    try:
        np.linalg.cholesky(w)
    except np.linalg.LinAlgError as exc:
        raise ValueError("weight matrix must be positive definite") from exc

    active: list[HalfSpace] = []
    for hs in constraints:
        if hs.normal.shape[0] != n:
            raise ValueError("constraint dimension mismatch")
        if float(np.linalg.norm(hs.normal)) == 0.0:
            continue  # vacuous by HalfSpace invariant
        active.append(hs)

    def feasible(z: np.ndarray) -> bool:
        return all(hs.slack(z) >= -tol for hs in active)

    best: np.ndarray | None = None
    best_obj = math.inf

    def consider(z: np.ndarray):
        nonlocal best, best_obj
        if not feasible(z):
            return
        obj = float((z - target) @ w @ (z - target))
        if obj < best_obj - 1e-15:
            best, best_obj = z, obj

    consider(target.copy())
    w_inv = np.linalg.inv(w)
    for size in range(1, n + 1):
        for subset in combinations(range(len(active)), size):
            a = np.stack([active[i].normal for i in subset])
            b = np.array([active[i].offset for i in subset])
            # KKT for equality-constrained subproblem:
            #   z = target + 0.5 W^-1 A^T mu,  A z = b
            gram = 0.5 * (a @ w_inv @ a.T)
            try:
                mu = np.linalg.solve(gram, b - a @ target)
            except np.linalg.LinAlgError:
                continue  # degenerate subset (duplicate faces)
            if np.any(mu < -tol):
                continue
            z = target + 0.5 * w_inv @ (a.T @ mu)
            consider(z)
    if best is None:
        raise Infeasible("no point satisfies all half-space constraints")
    return best


_WINITZKI_A = 0.147


def inv_erf(y: float, tol: float = 1e-13, max_iter: int = 60) -> float:
    """Inverse of the error function on the open interval (-1, 1).

    A Winitzki-style rational seed is polished with damped Newton steps on
    ``erf(z) - y`` (falling back to bisection when a step misbehaves).
    """
    y = float(y)
    if not math.isfinite(y) or abs(y) >= 1.0:
        raise OutOfDomain(f"inv_erf argument must lie in (-1, 1), got {y!r}")
    if y == 0.0:
        return 0.0

    # rational first guess
    ln_term = math.log1p(-y * y)
    u = 2.0 / (math.pi * _WINITZKI_A) + 0.5 * ln_term
    z = math.copysign(math.sqrt(math.sqrt(u * u - ln_term / _WINITZKI_A) - u), y)

    lo, hi = (0.0, z + 1.0) if y > 0 else (z - 1.0, 0.0)
    for _ in range(max_iter):
        err = math.erf(z) - y
        if abs(err) <= tol:
            return z
        if err > 0:
            hi = min(hi, z)
        else:
            lo = max(lo, z)
        deriv = 2.0 / math.sqrt(math.pi) * math.exp(-z * z)
        step = err / deriv if deriv > 0.0 else math.nan
        z_new = z - step
        if not math.isfinite(z_new) or not (lo <= z_new <= hi):
            z_new = 0.5 * (lo + hi)  # bisect when Newton leaves the bracket
        z = z_new
    raise NotConverged("inv_erf Newton iteration did not converge")


def rk4_step(f, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of size dt for ``x' = f(x)``."""
    x = np.asarray(x, dtype=float)

    def stage(v: np.ndarray) -> np.ndarray:
        k = np.asarray(f(v), dtype=float)
        if not np.all(np.isfinite(k)):
            raise NonFiniteState("derivative is non-finite")
        return k

    k1 = stage(x)
    k2 = stage(x + 0.5 * dt * k1)
    k3 = stage(x + 0.5 * dt * k2)
    k4 = stage(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("state is non-finite after rk4 step")
    return out


def sym_eig(p: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric PSD matrix by cyclic Jacobi sweeps.

    Returns ``(V, d)`` with orthonormal columns V and eigenvalues d sorted
    in descending order (tiny negative values from roundoff are clipped to
    zero).  Raises :class:`NotConverged` past ``max_sweeps`` sweeps.
    """
    a = symmetrize(p)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return v, np.array([max(a[0, 0], 0.0)])
    scale = max(np.linalg.norm(a), 1e-300)
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        # sum the off-diagonal entries directly: forming it as the
        # difference of total and diagonal mass bottoms out at sqrt(eps)
        # relative error and never reaches the convergence threshold
        off = float(np.linalg.norm(a[off_mask]))
        if off <= 1e-14 * scale:
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                if abs(a[i, j]) <= 1e-30 * scale:
                    continue
                # 2x2 symmetric Schur rotation annihilating a[i, j]
                tau = (a[j, j] - a[i, i]) / (2.0 * a[i, j])
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                rot = np.eye(n)
                rot[i, i] = rot[j, j] = c
                rot[i, j] = s
                rot[j, i] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    else:
        raise NotConverged("cyclic Jacobi exceeded sweep cap")
    d = np.diag(a).copy()
    order = np.argsort(d)[::-1]
    d = np.maximum(d[order], 0.0)
    return v[:, order], d
