"""Closed convex parameter sets: boxes and small half-space polytopes.

These are the sets the adaptive laws project into (tangent cones keep the
estimates inside, orthogonal projection re-centers them after a set
update) and that the safety terms take suprema over.  Boxes get closed-form
fast paths because they sit on the simulation hot path; polytopes fall back
to the exact QP kernel and explicit vertex enumeration (dimension <= 4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .numkit import HalfSpace, qp_project

__all__ = [
    "Box",
    "ConvexParamSet",
    "PointOutsideSet",
    "Polytope",
    "Unbounded",
    "contains",
    "diameter",
    "linear_max",
    "linear_min",
    "ortho_project",
    "sup_distance",
    "tangent_cone_project",
    "vertices",
]

_TOL = 1e-9


class PointOutsideSet(ValueError):
    """Tangent cone requested at a point not in the set."""


class Unbounded(ValueError):
    """Supremum requested over an unbounded set."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {v : lo <= v <= hi} with lo < hi element-wise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("box must have nonzero volume (lo < hi element-wise)")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def corners(self) -> np.ndarray:
        """All 2^p corners, one per row."""
        p = self.dim
        out = np.empty((2**p, p))
        for i in range(2**p):
            for j in range(p):
                out[i, j] = self.hi[j] if (i >> j) & 1 else self.lo[j]
        return out


@dataclass(frozen=True)
class Polytope:
    """Intersection of half-spaces {v : normal_k . v >= offset_k for all k}.

    Restricted to bounded polytopes with nonempty interior in dimension
    <= 4; both properties are verified at construction (via small LPs) and
    the vertex set is enumerated once and cached on the instance.
    """

    faces: tuple[HalfSpace, ...]

    def __post_init__(self):
        faces = tuple(self.faces)
        if not faces:
            raise ValueError("polytope needs at least one face")
        dim = faces[0].normal.shape[0]
        if dim > 4:
            raise ValueError("polytope vertex enumeration limited to dimension <= 4")
        if any(f.normal.shape[0] != dim for f in faces):
            raise ValueError("inconsistent face dimensions")
        object.__setattr__(self, "faces", faces)

        a_ub = -np.stack([f.normal for f in faces])
        b_ub = -np.array([f.offset for f in faces])
        # bounded iff every axis-aligned LP is bounded
        for j in range(dim):
            for sign in (1.0, -1.0):
                c = np.zeros(dim)
                c[j] = sign
                res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * dim)
                if res.status == 3:
                    raise Unbounded("polytope is unbounded")
                if res.status == 2:
                    raise ValueError("polytope is empty")
        # Chebyshev center: nonempty interior iff the largest inscribed
        # ball has positive radius
        norms = np.linalg.norm(a_ub, axis=1)
        res = linprog(
            np.concatenate([np.zeros(dim), [-1.0]]),
            A_ub=np.hstack([a_ub, norms[:, None]]),
            b_ub=b_ub,
            bounds=[(None, None)] * dim + [(0, None)],
        )
        if not res.success or res.x[-1] <= _TOL:
            raise ValueError("polytope must have nonempty interior")

        verts: list[np.ndarray] = []
        for subset in combinations(range(len(faces)), dim):
            a = np.stack([faces[i].normal for i in subset])
            b = np.array([faces[i].offset for i in subset])
            try:
                v = np.linalg.solve(a, b)
            except np.linalg.LinAlgError:
                continue
            if all(f.slack(v) >= -1e-7 for f in faces):
                if not any(np.linalg.norm(v - u) <= 1e-7 for u in verts):
                    verts.append(v)
        object.__setattr__(self, "_vertices", np.stack(verts))

    @property
    def dim(self) -> int:
        return self.faces[0].normal.shape[0]


ConvexParamSet = Box | Polytope


def contains(cset: ConvexParamSet, point: np.ndarray, tol: float = _TOL) -> bool:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if isinstance(cset, Box):
        return bool(np.all(point >= cset.lo - tol) and np.all(point <= cset.hi + tol))
    return all(f.slack(point) >= -tol for f in cset.faces)


def vertices(cset: ConvexParamSet) -> np.ndarray:
    if isinstance(cset, Box):
        return cset.corners()
    return getattr(cset, "_vertices")


def tangent_cone_project(cset: ConvexParamSet, v: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Euclidean projection of z onto the tangent cone of the set at v.

    Interior points return z unchanged; on the boundary the projection is
    restricted to directions that do not exit through any active face.
    Raises :class:`PointOutsideSet` when v is not in the set (tolerance
    1e-9).
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not contains(cset, v):
        raise PointOutsideSet("tangent cone requested outside the set")
    if isinstance(cset, Box):
        out = z.copy()
        out[(v >= cset.hi - _TOL) & (out > 0.0)] = 0.0
        out[(v <= cset.lo + _TOL) & (out < 0.0)] = 0.0
        return out
    active = [f for f in cset.faces if f.slack(v) <= _TOL]
    if not active:
        return z.copy()
    cons = [HalfSpace(f.normal, 0.0) for f in active]
    return qp_project(np.eye(z.shape[0]), z, cons)


def ortho_project(cset: ConvexParamSet, point: np.ndarray) -> np.ndarray:
    """Closest point of the set (box: clamp; polytope: exact QP)."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if isinstance(cset, Box):
        return np.clip(point, cset.lo, cset.hi)
    return qp_project(np.eye(cset.dim), point, list(cset.faces))


def sup_distance(cset: ConvexParamSet, theta_hat: np.ndarray) -> float:
    """sup over the set of ||theta_hat - theta|| (attained at a vertex)."""
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if isinstance(cset, Box):
        reach = np.maximum(theta_hat - cset.lo, cset.hi - theta_hat)
        return float(np.linalg.norm(reach))
    return float(max(np.linalg.norm(theta_hat - v) for v in vertices(cset)))


def linear_max(cset: ConvexParamSet, c: np.ndarray) -> float:
    """max over the set of c . v."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if isinstance(cset, Box):
        return float(np.sum(np.where(c >= 0.0, c * cset.hi, c * cset.lo)))
    return float(max(c @ v for v in vertices(cset)))


def linear_min(cset: ConvexParamSet, c: np.ndarray) -> float:
    return -linear_max(cset, -np.atleast_1d(np.asarray(c, dtype=float)))


def diameter(cset: ConvexParamSet) -> float:
    """sup over the set of pairwise distances."""
    if isinstance(cset, Box):
        return float(np.linalg.norm(cset.hi - cset.lo))
    verts = vertices(cset)
    best = 0.0
    for i in range(len(verts)):
        for j in range(i + 1, len(verts)):
            best = max(best, float(np.linalg.norm(verts[i] - verts[j])))
    return best
