"""Barrier functions, high-order chains, and the quadratic error bounds.

A barrier ``h`` encodes a safe region {h >= 0}.  When h has relative
degree r > 1 with respect to the input, a chain of auxiliary barriers is
built along a drift matrix::

    h_1 = h,    h_i(x) = grad(h_{i-1}) . (drift x) + alpha_{i-1} h_{i-1}(x)

The W matrices turn the chain into quadratic forms that bound how much the
barrier values can differ between two states (used by the error-based
safety buffer):  W_0 = kappa^2 C_h^T C_h for the projector C_h onto the
subspace the barrier actually depends on, and

    W_i = (alpha_1 + alpha_i) W_{i-1} + A_m^T W_{i-1} + W_{i-1} A_m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numkit import symmetrize

__all__ = [
    "AssumptionResult",
    "BarrierFn",
    "ChainEval",
    "HocbfChain",
    "LipschitzReport",
    "NonOrthonormalBasis",
    "UnsupportedDegree",
    "WMatrices",
    "build_w_matrices",
    "chain_eval",
    "check_lipschitz_bound",
    "check_sampled_assumptions",
    "softmin_bounded",
]


class UnsupportedDegree(ValueError):
    """Chain degree outside what the analytic implementation covers."""


class NonOrthonormalBasis(ValueError):
    pass


@dataclass(frozen=True)
class BarrierFn:
    """Scalar barrier with analytic first and second derivatives.

    value/gradient/hessian all take the full state vector; gradient returns
    a 1-D array of length n, hessian an (n, n) symmetric matrix.  ``kappa``
    is a bound on the gradient norm over the operating region and ``c`` the
    buffer depth used by reshaped-barrier constructions.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    kappa: float
    c: float = 1.0


@dataclass(frozen=True)
class HocbfChain:
    """High-order chain of degree r along a drift matrix.

    Degrees 1 and 2 are built in with analytic gradients; higher degrees
    require the caller to pass ``user_levels`` — one (value, gradient) pair
    per level i = 2..r.
    """

    base: BarrierFn
    drift: np.ndarray
    alphas: tuple[float, ...]
    r: int
    user_levels: tuple[tuple[Callable, Callable], ...] | None = None

    def __post_init__(self):
        drift = np.asarray(self.drift, dtype=float)
        alphas = tuple(float(a) for a in self.alphas)
        if self.r < 1:
            raise UnsupportedDegree("chain degree must be >= 1")
        if len(alphas) != self.r:
            raise ValueError("need one class-K slope per chain level")
        if any(a <= 0 for a in alphas):
            raise ValueError("chain slopes must be positive")
        if self.r > 2 and self.user_levels is None:
            raise UnsupportedDegree(
                "degrees above 2 need user-supplied level functions"
            )
        if self.user_levels is not None and len(self.user_levels) != self.r - 1:
            raise ValueError("user_levels must cover levels 2..r")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "alphas", alphas)


@dataclass(frozen=True)
class ChainEval:
    """Values h_1..h_r at a state plus the gradient of the top level."""

    values: tuple[float, ...]
    grad_top: np.ndarray


def chain_eval(chain: HocbfChain, x: np.ndarray) -> ChainEval:
    x = np.asarray(x, dtype=float)
    h1 = float(chain.base.value(x))
    g1 = np.asarray(chain.base.gradient(x), dtype=float)
    if chain.r == 1:
        return ChainEval((h1,), g1)
    if chain.user_levels is not None:
        values = [h1]
        grad = g1
        for value_fn, grad_fn in chain.user_levels:
            values.append(float(value_fn(x)))
            grad = np.asarray(grad_fn(x), dtype=float)
        return ChainEval(tuple(values), grad)
    # analytic degree 2
    drift_x = chain.drift @ x
    hess = np.asarray(chain.base.hessian(x), dtype=float)
    a1 = chain.alphas[0]
    h2 = float(g1 @ drift_x) + a1 * h1
    g2 = drift_x @ hess + g1 @ chain.drift + a1 * g1
    return ChainEval((h1, h2), g2)


@dataclass(frozen=True)
class WMatrices:
    """C_h projector plus W_0..W_r from the chain recursion."""

    c_h: np.ndarray
    w: tuple[np.ndarray, ...]


def build_w_matrices(
    basis: Sequence[np.ndarray],
    kappa: float,
    alphas: Sequence[float],
    a_m: np.ndarray,
    r: int,
) -> WMatrices:
    """Build W_0..W_r from an orthonormal basis of the dependent subspace.

    ``basis`` spans the subspace the barrier depends on; the Gram matrix
    must equal the identity to 1e-9 or :class:`NonOrthonormalBasis` is
    raised.
    """
    vecs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in basis]
    a_m = np.asarray(a_m, dtype=float)
    alphas = [float(a) for a in alphas]
    if len(alphas) != r:
        raise ValueError("need r slopes for r chain levels")
    stack = np.stack(vecs)
    gram = stack @ stack.T
    if np.max(np.abs(gram - np.eye(len(vecs)))) > 1e-9:
        raise NonOrthonormalBasis("basis Gram matrix deviates from identity")
    c_h = sum(np.outer(v, v) for v in vecs)
    w0 = kappa**2 * (c_h.T @ c_h)
    mats = [symmetrize(w0)]
    for i in range(1, r + 1):
        prev = mats[-1]
        wi = (alphas[0] + alphas[i - 1]) * prev + a_m.T @ prev + prev @ a_m
        mats.append(symmetrize(wi))
    return WMatrices(c_h, tuple(mats))


@dataclass(frozen=True)
class LipschitzReport:
    max_violation: float
    passed: bool
    n_pairs: int


def check_lipschitz_bound(
    w0: np.ndarray, fn: BarrierFn, pairs: Sequence[tuple[np.ndarray, np.ndarray]]
) -> LipschitzReport:
    """Check |h(x1) - h(x2)| <= sqrt((x1-x2)^T W_0 (x1-x2)) over sample pairs."""
    w0 = np.asarray(w0, dtype=float)
    worst = -math.inf
    for x1, x2 in pairs:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        d = x1 - x2
        bound = math.sqrt(max(float(d @ w0 @ d), 0.0))
        gap = abs(float(fn.value(x1)) - float(fn.value(x2))) - bound
        worst = max(worst, gap)
    return LipschitzReport(worst, worst <= 1e-9, len(pairs))


def softmin_bounded(fn: BarrierFn, d_radius: float) -> BarrierFn:
    """Soft minimum of a barrier and the ball ``||x||^2 <= d_radius``.

    Returns the barrier  -ln(exp(-h) + exp(||x||^2 - D)), which tracks h
    inside the ball and caps the safe set at the ball's edge, making the
    resulting super-level sets bounded.  Evaluated with a max-shift so
    neither exponential overflows.
    """

    def parts(x: np.ndarray):
        x = np.asarray(x, dtype=float)
        a = -float(fn.value(x))
        b = float(x @ x) - d_radius
        m = max(a, b)
        ea = math.exp(a - m)
        eb = math.exp(b - m)
        return x, a, b, m, ea, eb

    def value(x):
        _, _, _, m, ea, eb = parts(x)
        return -(m + math.log(ea + eb))

    def gradient(x):
        x, _, _, _, ea, eb = parts(x)
        s_a = ea / (ea + eb)
        return s_a * np.asarray(fn.gradient(x), dtype=float) - 2.0 * (1.0 - s_a) * x

    def hessian(x):
        x, _, _, _, ea, eb = parts(x)
        s_a = ea / (ea + eb)
        s_b = 1.0 - s_a
        g = np.asarray(fn.gradient(x), dtype=float)
        h = np.asarray(fn.hessian(x), dtype=float)
        u = g + 2.0 * x
        return s_a * h - 2.0 * s_b * np.eye(x.shape[0]) - s_a * s_b * np.outer(u, u)

    kappa = max(fn.kappa, 2.0 * math.sqrt(max(d_radius, 0.0)))
    return BarrierFn(value, gradient, hessian, kappa, fn.c)


@dataclass(frozen=True)
class AssumptionResult:
    """Outcome of one standing-assumption check."""

    name: str
    status: str  # "pass" | "fail" | "indeterminate"
    method: str  # "exact" | "sampled"
    detail: str
    witness: np.ndarray | None = None


def _shell_sample(box_lo, box_hi, rng, k):
    """Random point on the sampling box boundary (face k-pinned)."""
    n = box_lo.shape[0]
    x = box_lo + rng.random(n) * (box_hi - box_lo)
    j = k % n
    x[j] = box_hi[j] if (k // n) % 2 else box_lo[j]
    return x


def check_sampled_assumptions(
    chain: HocbfChain,
    b: np.ndarray,
    delta: float,
    sample_lo: np.ndarray,
    sample_hi: np.ndarray,
    rng: np.random.Generator,
    n_samples: int = 2000,
    grad_tol: float = 1e-3,
    name_prefix: str = "",
) -> list[AssumptionResult]:
    """Sampled checks of the chain-level standing assumptions.

    * gradient-bound: ||grad h|| <= kappa over the sampling box.
    * safe-set-bounded: no point of the joint super-level set
      {h_1 >= 0, ..., h_r >= 0} may sit on the sampling box boundary; a
      boundary witness is sampled evidence the set escapes every bounded
      region.
    * vanishing-gradient-margin: wherever ||grad(h_r) B|| < grad_tol inside
      the safe set, the autonomous margin alpha_r h_r + grad(h_r).(drift x)
      must still exceed delta.
    """
    b = np.asarray(b, dtype=float)
    lo = np.asarray(sample_lo, dtype=float)
    hi = np.asarray(sample_hi, dtype=float)
    prefix = f"{name_prefix}-" if name_prefix else ""
    results: list[AssumptionResult] = []

    worst_grad = 0.0
    grad_witness = None
    shell_witness = None
    vanish_checked = 0
    vanish_witness = None
    alpha_r = chain.alphas[-1]

    for k in range(n_samples):
        x = lo + rng.random(lo.shape[0]) * (hi - lo)
        gnorm = float(np.linalg.norm(chain.base.gradient(x)))
        if gnorm > worst_grad:
            worst_grad, grad_witness = gnorm, x.copy()
        ev = chain_eval(chain, x)
        if all(v >= 0.0 for v in ev.values):
            if float(np.linalg.norm(ev.grad_top @ b)) < grad_tol:
                vanish_checked += 1
                margin = alpha_r * ev.values[-1] + float(ev.grad_top @ (chain.drift @ x))
                if margin < delta and vanish_witness is None:
                    vanish_witness = x.copy()
        xs = _shell_sample(lo, hi, rng, k)
        ev_s = chain_eval(chain, xs)
        if all(v >= 0.0 for v in ev_s.values) and shell_witness is None:
            shell_witness = xs.copy()

    kappa = chain.base.kappa
    results.append(
        AssumptionResult(
            prefix + "gradient-bound",
            "pass" if worst_grad <= kappa + 1e-9 else "fail",
            "sampled",
            f"max sampled ||grad h|| = {worst_grad:.6g} against bound {kappa:.6g}",
            grad_witness if worst_grad > kappa + 1e-9 else None,
        )
    )
    if shell_witness is not None:
        results.append(
            AssumptionResult(
                prefix + "safe-set-bounded",
                "fail",
                "sampled",
                "joint super-level set reaches the sampling box boundary "
                "(evidence of unboundedness)",
                shell_witness,
            )
        )
    else:
        results.append(
            AssumptionResult(
                prefix + "safe-set-bounded",
                "indeterminate",
                "sampled",
                "no boundary witness found; boundedness not provable by sampling",
            )
        )
    if vanish_checked == 0:
        detail = (
            f"no sampled state had ||grad(h_r) B|| < {grad_tol:g}; "
            "condition vacuous over the sampling box"
        )
        results.append(
            AssumptionResult(prefix + "vanishing-gradient-margin", "pass", "sampled", detail)
        )
    else:
        ok = vanish_witness is None
        results.append(
            AssumptionResult(
                prefix + "vanishing-gradient-margin",
                "pass" if ok else "fail",
                "sampled",
                f"checked {vanish_checked} near-singular states against margin {delta:g}",
                vanish_witness,
            )
        )
    return results
