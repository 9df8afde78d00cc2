"""Motions that are not minimal.

A motion whose velocities span a lower-dimensional affine set is studied
through the coordinate projection onto that set.  A motion with more than
``D + 1`` velocities is the first-``D``-coordinate marginal of a minimal motion
in R^M; its density at ``x`` is a sum over the velocity subsets whose face
contains ``x``, each either a minimal density or an integral of a lifted
density over the fibre above ``x``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

from .analytic.densities import (
    DEFAULT_TOL,
    DensityValue,
    FaceChart,
    minimal_density,
    occupation_density_values,
)
from .analytic.masses import vertex_mass
from .errors import AlreadyFullDim, ConvergenceError, MotionError, OutsideSupport
from .geometry import (
    RegionKind,
    VelocitySet,
    build_projection,
    classify_point,
    in_relative_interior,
    pivoted_rank,
)
from .model import MotionModel
from .quadrature import adaptive_simplex, gauss_legendre01

MAX_VELOCITIES = 9


def reduce_model(model: MotionModel):
    """Projection onto the state-space dimension and the projected model."""
    vs = model.velocities
    R = vs.state_space_dim()
    if R == vs.D:
        raise AlreadyFullDim("the velocities already span the full dimension")
    pm = build_projection(vs)
    return pm, model.with_velocities(pm.project_velocities(vs))


@dataclass(frozen=True, eq=False)
class LiftedModel:
    original: MotionModel
    lifted: MotionModel
    tails: np.ndarray  # (M - D) x (M + 1)

    @property
    def D(self):
        return self.original.D

    def truncate(self, X):
        """First ``D`` coordinates of lifted positions."""
        return np.asarray(X)[..., : self.D]


def lift_tails(vs: VelocitySet):
    """Rows completing ``[1^T; V]`` to an invertible matrix.

    Canonical rows ``e_0, e_1, ...`` of R^{M+1} are appended in order whenever
    they increase the rank.
    """
    A = vs.augmented()
    n = vs.size
    tol = vs.tolerance
    rank = pivoted_rank(A, tol)
    if rank != vs.D + 1:
        raise MotionError("velocities do not span the full dimension; reduce the model first")
    tails = []
    for j in range(n):
        if rank == n:
            break
        row = np.zeros(n)
        row[j] = 1.0
        trial = np.vstack([A] + tails + [row])
        r = pivoted_rank(trial, tol)
        if r > rank:
            tails.append(row)
            rank = r
    return np.array(tails).reshape(len(tails), n)


def lift_model(model: MotionModel) -> LiftedModel:
    """Minimal motion in R^M whose first ``D`` coordinates reproduce ``model``."""
    vs = model.velocities
    tails = lift_tails(vs)
    if tails.shape[0] == 0:
        return LiftedModel(model, model, tails)
    lifted_vs = VelocitySet(np.vstack([vs.V, tails]), vs.labels)
    return LiftedModel(model, model.with_velocities(lifted_vs), tails)


def affine_dim(V):
    V = np.asarray(V, dtype=float)
    if V.shape[1] == 1:
        return 0
    tol = 1e-9 * max(1.0, float(np.max(np.abs(V))))
    return pivoted_rank(V[:, 1:] - V[:, :1], tol)


def containing_subsets(vs: VelocitySet, x, t):
    """All velocity subsets (two or more) whose face has ``x`` in its relative interior."""
    if vs.size > MAX_VELOCITIES:
        raise MotionError(f"subset enumeration is limited to {MAX_VELOCITIES} velocities")
    out = []
    for size in range(2, vs.size + 1):
        for S in itertools.combinations(range(vs.size), size):
            if in_relative_interior(vs, x, t, S):
                out.append(S)
    return out


# ---------------------------------------------------------------------------
# fibre integration


def _fibre_setup(sub: VelocitySet, t, x):
    """Affine map ``y -> T(x, y)`` of lifted occupation times and its Jacobian."""
    tails = lift_tails(sub)
    lifted = np.vstack([sub.V, tails])
    aug = np.vstack([np.ones((1, sub.size)), lifted])
    inv = np.linalg.inv(aug)
    base = inv[:, : sub.D + 1] @ np.concatenate([[t], np.asarray(x, dtype=float)])
    slope = inv[:, sub.D + 1:]
    return base, slope, abs(float(np.linalg.det(aug)))


def _interval(base, slope):
    lo, hi = -math.inf, math.inf
    for c, s in zip(base, slope[:, 0]):
        if s > 0:
            lo = max(lo, -c / s)
        elif s < 0:
            hi = min(hi, -c / s)
        elif c < 0:
            return None
    return (lo, hi) if lo < hi else None


def _polytope_vertices(base, slope):
    """Vertices of ``{y : base + slope y >= 0}``."""
    m, d = slope.shape
    pts = []
    scale = 1.0 + float(np.max(np.abs(base)))
    for rows in itertools.combinations(range(m), d):
        A = slope[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        y = np.linalg.solve(A, -base[list(rows)])
        if np.all(base + slope @ y >= -1e-10 * scale):
            if not any(np.allclose(y, q, atol=1e-12 * scale) for q in pts):
                pts.append(y)
    return np.array(pts)


def fibre_integral(func, base, slope, tol=1e-11, n0=8, n_max=256):
    """Integral over ``{y : base + slope y >= 0}`` of ``func(T)`` with ``T = base + slope y``."""
    d = slope.shape[1]
    if d == 1:
        iv = _interval(base, slope)
        if iv is None:
            return 0.0, 0.0
        a, b = iv
        n = n0
        prev = None
        while n <= n_max:
            s, w = gauss_legendre01(n)
            y = a + (b - a) * s
            val = float(np.dot(w, func(base[None, :] + y[:, None] * slope[:, 0][None, :]))) * (b - a)
            if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300):
                return val, abs(val - prev)
            prev = val
            n *= 2
        raise ConvergenceError("fibre quadrature did not converge")
    verts = _polytope_vertices(base, slope)
    if verts.shape[0] < d + 1:
        return 0.0, 0.0
    tri = Delaunay(verts)
    total = 0.0
    err = 0.0
    for simplex in tri.simplices:
        val, e = adaptive_simplex(lambda Y: func(base[None, :] + Y @ slope.T), verts[simplex], tol)
        total += val
        err += e
    return total, err


def nonminimal_density(model: MotionModel, t, x, tol=DEFAULT_TOL) -> DensityValue:
    """Density of ``X(t)`` at ``x`` with a per-subset breakdown.

    Breakdown entries are ``(subset, contribution, method)`` with ``method`` in
    ``direct`` (subset of ``D + 1`` affinely independent velocities),
    ``fibre`` (larger subset, lifted and integrated) and ``singular`` (the
    subset spans a lower-dimensional face, which carries no ``D``-dimensional
    density; reported with contribution 0).
    """
    vs = model.velocities
    x = np.asarray(x, dtype=float).reshape(-1)
    if vs.state_space_dim() < vs.D:
        pm, reduced = reduce_model(model)
        return nonminimal_density(reduced, t, pm.apply(x), tol)
    if vs.is_minimal:
        dv = minimal_density(model, t, x, tol)
        face = dv.region.face if dv.region is not None else ()
        return DensityValue(dv.value, dv.region, dv.formula, dv.terms, dv.remainder,
                            ((face, dv.value, "direct"),))
    region = classify_point(vs, x, t)
    if region.kind in (RegionKind.OUTSIDE, RegionKind.BOUNDARY):
        raise OutsideSupport(f"{x.tolist()} is {region.kind.value} at t={t}")
    if region.kind == RegionKind.VERTEX:
        h = region.face[0]
        m = vertex_mass(model, t, h)
        return DensityValue(m, region, "vertex-mass", breakdown=(((h,), m, "mass"),))
    D = vs.D
    total = 0.0
    err = 0.0
    parts = []
    for S in containing_subsets(vs, x, t):
        sub = vs.subset(S)
        dim = affine_dim(sub.V)
        if dim < D:
            parts.append((S, 0.0, "singular"))
            continue
        if len(S) == D + 1:
            chart = FaceChart.build(vs, S)
            T = chart.occupation(t, x)
            val = float(occupation_density_values(model, S, T[None, :], tol)[0]) / chart.jacobian
            parts.append((S, val, "direct"))
        else:
            base, slope, jac = _fibre_setup(sub, t, x)
            val, e = fibre_integral(lambda T: occupation_density_values(model, S, T, tol) / jac,
                                    base, slope, tol=max(tol, 1e-12))
            err += e
            parts.append((S, float(val), "fibre"))
        total += val
    return DensityValue(total, region, "nonminimal", remainder=err, breakdown=tuple(parts))


def nonminimal_density_values(model: MotionModel, t, X, tol=DEFAULT_TOL):
    return np.array([nonminimal_density(model, t, x, tol).value for x in np.atleast_2d(X)])
