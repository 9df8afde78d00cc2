"""Affine geometry of velocity polytopes.

The support of a motion with velocities ``v_0, ..., v_M`` at time ``t`` is the
convex hull of ``v_h t``.  This module computes its dimension, the
coordinate projection that preserves it, lifting of projected points, and the
classification of points into vertex / face / interior regions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateSet, MotionError, NotMinimal, OutsideHull

RANK_RTOL = 1e-9
ZERO_WEIGHT = 1e-12
POSITIVE_WEIGHT = 1e-9
HULL_ATOL = 1e-10


def pivoted_rank(A, tol):
    """Rank of ``A`` by Gaussian elimination with complete pivoting."""
    A = np.array(A, dtype=float, copy=True)
    if A.size == 0:
        return 0
    m, n = A.shape
    rank = 0
    for r in range(min(m, n)):
        sub = np.abs(A[r:, r:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[i, j] <= tol:
            break
        i += r
        j += r
        A[[r, i]] = A[[i, r]]
        A[:, [r, j]] = A[:, [j, r]]
        below = A[r + 1:, r] / A[r, r]
        A[r + 1:, r:] -= np.outer(below, A[r, r:])
        rank += 1
    return rank


def first_independent_rows(A, tol):
    """Indices of the first linearly independent rows of ``A``, scanning top down."""
    A = np.asarray(A, dtype=float)
    chosen = []
    for i in range(A.shape[0]):
        trial = A[chosen + [i]]
        if pivoted_rank(trial, tol) > len(chosen):
            chosen.append(i)
    return chosen


@dataclass(frozen=True, eq=False)
class VelocitySet:
    """The ``D x (M+1)`` matrix whose columns are the velocities."""

    V: np.ndarray
    labels: tuple | None = None

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim == 1:
            V = V[None, :]
        if V.ndim != 2 or V.shape[1] < 1 or V.shape[0] < 1:
            raise DegenerateSet("velocity matrix must be D x (M+1) with D, M+1 >= 1")
        if not np.all(np.isfinite(V)):
            raise DegenerateSet("velocities must be finite")
        for a, b in itertools.combinations(range(V.shape[1]), 2):
            if np.array_equal(V[:, a], V[:, b]):
                raise DegenerateSet(f"velocities {a} and {b} coincide")
        if self.labels is not None and len(self.labels) != V.shape[1]:
            raise DegenerateSet("one label per velocity required")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @classmethod
    def from_rows(cls, rows, labels=None):
        """Build from a list of velocity vectors (one velocity per row)."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return cls(rows.T, labels)

    @classmethod
    def canonical(cls, D):
        """Velocities ``0, e_1, ..., e_D`` of R^D."""
        return cls(np.hstack([np.zeros((D, 1)), np.eye(D)]))

    @property
    def D(self):
        return self.V.shape[0]

    @property
    def M(self):
        return self.V.shape[1] - 1

    @property
    def size(self):
        return self.V.shape[1]

    @property
    def rows(self):
        return self.V.T

    @property
    def tolerance(self):
        diffs = self.V - self.V[:, :1]
        scale = np.max(np.linalg.norm(diffs, axis=0)) if self.size > 1 else 0.0
        return RANK_RTOL * max(scale, 1.0)

    def differences(self, k=0):
        """Matrix with columns ``v_h - v_k`` for ``h != k``."""
        idx = [h for h in range(self.size) if h != k]
        return self.V[:, idx] - self.V[:, [k]]

    def augmented(self):
        """The ``(D+1) x (M+1)`` matrix ``[1^T; V]``."""
        return np.vstack([np.ones((1, self.size)), self.V])

    def state_space_dim(self):
        return state_space_dim(self)

    @property
    def is_minimal(self):
        return self.M == self.D and self.state_space_dim() == self.D

    @property
    def is_canonical(self):
        return self.M == self.D and np.array_equal(self.V, VelocitySet.canonical(self.D).V)

    def subset(self, indices):
        labels = None if self.labels is None else tuple(self.labels[i] for i in indices)
        return VelocitySet(self.V[:, list(indices)], labels)

    def __repr__(self):
        return f"VelocitySet(D={self.D}, velocities={self.rows.tolist()})"


def state_space_dim(vs: VelocitySet) -> int:
    """Dimension of Conv(v_0, ..., v_M): the rank of the difference matrix."""
    if vs.size == 1:
        return 0
    return pivoted_rank(vs.differences(0), vs.tolerance)


@dataclass(frozen=True)
class ProjectionMap:
    """Coordinate selection ``x -> (x_i)_{i in rows}`` from R^D to R^R."""

    source_dim: int
    target_dim: int
    rows: tuple

    @property
    def matrix(self):
        return np.eye(self.source_dim)[list(self.rows)]

    @property
    def is_identity(self):
        return self.target_dim == self.source_dim

    def apply(self, x):
        """Project points; ``x`` has shape ``(..., D)``."""
        x = np.asarray(x, dtype=float)
        return x[..., list(self.rows)]

    def project_velocities(self, vs):
        return VelocitySet(vs.V[list(self.rows), :], vs.labels)


def projection_rows(vs: VelocitySet, pivot: int):
    """Row-index set obtained from the difference matrix anchored at ``pivot``."""
    R = state_space_dim(vs)
    rows = first_independent_rows(vs.differences(pivot), vs.tolerance)
    return tuple(rows[:R])


def build_projection(vs: VelocitySet) -> ProjectionMap:
    """Projection onto the first ``R`` independent coordinates.

    The row set is computed from every pivot velocity and the results are
    required to agree.
    """
    R = state_space_dim(vs)
    if R == 0:
        raise DegenerateSet("all velocities coincide; the hull is a point")
    sets = {projection_rows(vs, k) for k in range(vs.size)}
    if len(sets) != 1:
        raise MotionError(f"pivot-dependent projection rows {sorted(sets)}")
    rows = sets.pop()
    return ProjectionMap(vs.D, R, rows)


def minimal_support_weights(V, x, atol=HULL_ATOL):
    """Convex weights ``w`` with ``V w = x``, smallest support first.

    Subsets are tried by increasing cardinality in lexicographic order and only
    affinely independent ones are considered, so the answer is unique.
    Returns ``None`` if ``x`` is not in Conv(columns of V).
    """
    V = np.asarray(V, dtype=float)
    x = np.asarray(x, dtype=float)
    D, n = V.shape
    scale = 1.0 + np.linalg.norm(x)
    tol = RANK_RTOL * max(1.0, np.max(np.abs(V)))
    max_card = min(n, pivoted_rank(V - V[:, :1], tol) + 1)
    for card in range(1, max_card + 1):
        for S in itertools.combinations(range(n), card):
            sub = V[:, S]
            if card > 1 and pivoted_rank(sub[:, 1:] - sub[:, :1], tol) != card - 1:
                continue
            A = np.vstack([np.ones((1, card)), sub])
            b = np.concatenate([[1.0], x])
            w, *_ = np.linalg.lstsq(A, b, rcond=None)
            if np.linalg.norm(A @ w - b) > atol * scale or np.any(w < -atol):
                continue
            full = np.zeros(n)
            full[list(S)] = np.clip(w, 0.0, None)
            full /= full.sum()
            return full
    return None


def lift_point(pm: ProjectionMap, vs: VelocitySet, x_R, t=1.0):
    """Unique hull point of ``vs`` (scaled by ``t``) that projects onto ``x_R``."""
    x_R = np.asarray(x_R, dtype=float).reshape(-1)
    if x_R.shape[0] != pm.target_dim:
        raise ValueError(f"expected a point of dimension {pm.target_dim}")
    if pm.is_identity:
        return x_R.copy()
    if t == 0:
        if np.linalg.norm(x_R) > HULL_ATOL:
            raise OutsideHull("at t=0 the support is the origin")
        return np.zeros(pm.source_dim)
    VR = vs.V[list(pm.rows), :]
    w = minimal_support_weights(VR, x_R / t)
    if w is None:
        raise OutsideHull(f"{x_R.tolist()} is outside the projected hull")
    return vs.V @ w * t


class RegionKind(str, Enum):
    VERTEX = "vertex"
    FACE = "face"
    INNER = "inner"
    OUTSIDE = "outside"
    BOUNDARY = "boundary-degenerate"


@dataclass(frozen=True, eq=False)
class RegionClassification:
    kind: RegionKind
    face: tuple = ()
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dimension(self):
        return len(self.face) - 1


def barycentric(vs: VelocitySet, x, t=1.0):
    """Weights ``w`` with ``x = t * sum_h w_h v_h`` for a minimal set.

    Accepts a single point or an ``(n, D)`` array.
    """
    if not vs.is_minimal:
        raise NotMinimal("barycentric coordinates are unique only for minimal sets")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    rhs = np.vstack([np.ones(X.shape[0]), (X / t).T])
    W = np.linalg.solve(vs.augmented(), rhs).T
    return W[0] if single else W


def _band(weights):
    """Split weights into clearly zero / clearly positive / ambiguous."""
    zero = np.abs(weights) <= ZERO_WEIGHT
    positive = weights >= POSITIVE_WEIGHT
    return zero, positive, ~(zero | positive)


def _face_indices_lp(V, x):
    """Indices of velocities lying in the smallest face containing ``x``."""
    D, n = V.shape
    A_eq = np.vstack([np.ones((1, n)), V])
    b_eq = np.concatenate([[1.0], x])
    best = np.zeros(n)
    for h in range(n):
        c = np.zeros(n)
        c[h] = -1.0
        res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
        best[h] = -res.fun if res.status == 0 else 0.0
    return best


def classify_point(vs: VelocitySet, x, t=1.0) -> RegionClassification:
    """Locate ``x`` in Conv(v_0 t, ..., v_M t)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, dtype=float).reshape(-1)
    n = vs.size
    if t == 0:
        if np.linalg.norm(x) <= HULL_ATOL:
            return RegionClassification(RegionKind.VERTEX, tuple(range(n)), np.full(n, 1.0 / n))
        return RegionClassification(RegionKind.OUTSIDE)

    if vs.is_minimal:
        w = barycentric(vs, x, t)
        if np.any(w <= -POSITIVE_WEIGHT):
            return RegionClassification(RegionKind.OUTSIDE, (), w)
        zero, positive, ambiguous = _band(w)
        if np.any(ambiguous):
            return RegionClassification(RegionKind.BOUNDARY, tuple(np.flatnonzero(~zero)), w)
        w = np.where(zero, 0.0, w)
        face = tuple(int(i) for i in np.flatnonzero(positive))
    else:
        w = minimal_support_weights(vs.V, x / t)
        if w is None:
            return RegionClassification(RegionKind.OUTSIDE)
        reach = _face_indices_lp(vs.V, x / t)
        zero, positive, ambiguous = _band(reach)
        if np.any(ambiguous):
            return RegionClassification(RegionKind.BOUNDARY, tuple(np.flatnonzero(~zero)), w)
        face = tuple(int(i) for i in np.flatnonzero(positive))

    if len(face) == 1:
        kind = RegionKind.VERTEX
    elif len(face) == n:
        kind = RegionKind.INNER
    else:
        kind = RegionKind.FACE
    return RegionClassification(kind, face, w)


def in_relative_interior(vs: VelocitySet, x, t=1.0, indices=None):
    """Whether ``x`` lies in the relative interior of Conv(v_h t, h in indices).

    Solved as ``max s`` subject to convex weights ``w_h >= s``.
    """
    idx = list(range(vs.size)) if indices is None else list(indices)
    V = vs.V[:, idx]
    x = np.asarray(x, dtype=float).reshape(-1) / t
    n = len(idx)
    if n == 1:
        return bool(np.linalg.norm(V[:, 0] - x) <= HULL_ATOL * (1 + np.linalg.norm(x)))
    sub = VelocitySet(V)
    if sub.state_space_dim() == n - 1:
        A = np.vstack([np.ones((1, n)), V])
        b = np.concatenate([[1.0], x])
        w, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.linalg.norm(A @ w - b) > HULL_ATOL * (1 + np.linalg.norm(x)):
            return False
        return bool(np.all(w >= POSITIVE_WEIGHT))
    # variables (w_1..w_n, s); maximise s
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.hstack([np.vstack([np.ones((1, n)), V]), np.zeros((V.shape[0] + 1, 1))])
    b_eq = np.concatenate([[1.0], x])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n + [(None, 1.0)], method="highs")
    return bool(res.status == 0 and -res.fun >= POSITIVE_WEIGHT)
