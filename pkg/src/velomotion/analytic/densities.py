"""Densities of minimal motions on the interior and on the faces of the support.

The general formula conditions on the number of displacements per velocity
``counts`` and on the terminal velocity ``k``.  With occupation times ``T_h``
at the query point it multiplies

* the density of the sum of ``counts[h]`` waiting times at ``T_h`` (``h != k``),
* the inverse Jacobian ``|det [1^T; V]|^{-1}``,
* ``P{N_(k)(T_k) = counts[k] - 1}`` for the still running displacement,
* the probability of the allocation ``counts`` with terminal velocity ``k``.

Closed forms for cyclic and complete kernels are sums of these terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from ..errors import AtomicLaw, InconsistentCounts, MotionError, NotMinimal, OutsideFace, OutsideSupport
from ..geometry import (
    RegionClassification,
    RegionKind,
    VelocitySet,
    build_projection,
    classify_point,
    in_relative_interior,
)
from ..model import MotionModel
from ..stochastic import allocation_layers, allocation_probability, counting_tail, waiting_density
from .bessel import bessel_tilde_array

DEFAULT_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class DensityValue:
    """A density (or, on a vertex, a mass) with the formula that produced it."""

    value: float
    region: RegionClassification | None
    formula: str
    terms: int = 0
    remainder: float = 0.0
    breakdown: tuple = ()

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# face charts


@dataclass(frozen=True, eq=False)
class FaceChart:
    """Coordinates on the face spanned by ``indices`` through its coordinate projection.

    Densities on a face are taken with respect to Lebesgue measure in these
    projected coordinates.
    """

    indices: tuple
    rows: tuple
    augmented: np.ndarray  # (H+1) x (H+1), [1^T; projected velocities]
    jacobian: float

    @classmethod
    def build(cls, vs: VelocitySet, indices):
        indices = tuple(sorted(int(i) for i in indices))
        H = len(indices) - 1
        if H == 0:
            return cls(indices, (), np.ones((1, 1)), 1.0)
        sub = vs.subset(indices)
        if sub.state_space_dim() != H:
            raise NotMinimal(f"velocities {indices} are affinely dependent")
        pm = build_projection(sub)
        aug = np.vstack([np.ones((1, H + 1)), sub.V[list(pm.rows), :]])
        return cls(indices, pm.rows, aug, abs(float(np.linalg.det(aug))))

    def project(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., list(self.rows)]

    def occupation(self, t, x):
        """Occupation times of the face velocities at ``(t, x)``; ``x`` may be ``(n, D)``."""
        xr = self.project(x)
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), xr.shape[:-1])
        rhs = np.concatenate([t_arr[..., None], xr], axis=-1)
        return np.linalg.solve(self.augmented, rhs[..., None])[..., 0]


def _check_waits(wm, indices):
    for h in indices:
        if wm[h].atomic:
            raise AtomicLaw(f"velocity {h} has deterministic waiting times; no density exists")


def _term(wm, kernel, T, counts, k, jac, indices):
    alloc = allocation_probability(kernel, counts, k)
    if alloc == 0.0:
        return 0.0
    value = alloc / jac
    for pos, h in enumerate(indices):
        if h == k:
            value *= counting_tail(wm, h, T[pos], counts[h] - 1)
        else:
            value *= waiting_density(wm, h, counts[h], T[pos])
    return float(value)


def _locate(model: MotionModel, t, x, face=None):
    """Region of ``x`` and the face it is evaluated on."""
    vs = model.velocities
    if face is None:
        region = classify_point(vs, x, t)
        if region.kind in (RegionKind.OUTSIDE, RegionKind.BOUNDARY):
            raise OutsideSupport(f"{np.asarray(x).tolist()} is {region.kind.value} at t={t}")
        return region, region.face
    face = tuple(sorted(face))
    if not in_relative_interior(vs, x, t, face):
        raise OutsideFace(f"{np.asarray(x).tolist()} is not in the relative interior of face {face}")
    kind = RegionKind.INNER if len(face) == vs.size else (RegionKind.VERTEX if len(face) == 1 else RegionKind.FACE)
    return RegionClassification(kind, face), face


def minimal_joint_density(model: MotionModel, t, x, counts, k) -> DensityValue:
    """Joint density of ``X(t)`` at an inner point, the allocation ``counts`` and ``V(t) = v_k``."""
    if not model.is_minimal:
        raise NotMinimal("the joint density formula needs a minimal motion")
    counts = tuple(int(c) for c in counts)
    if len(counts) != model.size:
        raise ValueError("one count per velocity required")
    if counts[k] < 1:
        raise InconsistentCounts(f"terminal velocity {k} has no displacement")
    region = classify_point(model.velocities, x, t)
    if region.kind != RegionKind.INNER:
        raise OutsideSupport(f"{np.asarray(x).tolist()} is not an inner point at t={t}")
    return face_density(model, t, x, counts, k, face=region.face, _region=region)


def face_density(model: MotionModel, t, x, counts, k, face=None, _region=None) -> DensityValue:
    """Joint density on the face ``face`` (w.r.t. its projected coordinates).

    On a vertex the returned value is the probability of the event.
    """
    wm = model.waiting_model()
    counts = tuple(int(c) for c in counts)
    if counts[k] < 1:
        raise InconsistentCounts(f"terminal velocity {k} has no displacement")
    if _region is None:
        region, face = _locate(model, t, x, face)
    else:
        region = _region
    face = tuple(face)
    if k not in face:
        raise OutsideFace(f"terminal velocity {k} is not a vertex of face {face}")
    if any(counts[h] > 0 for h in range(model.size) if h not in face):
        return DensityValue(0.0, region, "face")
    if any(counts[h] < 1 for h in face):
        return DensityValue(0.0, region, "face")
    _check_waits(wm, face)
    chart = FaceChart.build(model.velocities, face)
    T = chart.occupation(t, x)
    tag = "master" if len(face) == model.size else ("vertex" if len(face) == 1 else "face")
    return DensityValue(_term(wm, model.kernel, T, counts, k, chart.jacobian, face), region, tag, terms=1)


# ---------------------------------------------------------------------------
# generic summation over allocations


def density_sum(model: MotionModel, t, x, face=None, terminal=None, tol=DEFAULT_TOL, max_total=2000) -> DensityValue:
    """Sum of the joint densities over all allocations on ``face``.

    Shells of equal total displacement count are added until the count
    exceeds a Poisson-type threshold and two consecutive shells are below
    ``tol`` relative to the partial sum.
    """
    region, face = _locate(model, t, x, face)
    wm = model.waiting_model()
    _check_waits(wm, face)
    chart = FaceChart.build(model.velocities, face)
    T = chart.occupation(t, x)
    means = [wm[h].mean() for h in face]
    threshold = t / min(means) + 10.0 * math.sqrt(t / min(means)) + 10.0 + len(face)
    total = 0.0
    small = 0
    terms = 0
    last = math.inf
    for L, layer in allocation_layers(model.kernel, max_total, allowed=face):
        shell = 0.0
        for c, probs in layer.items():
            if any(c[h] < 1 for h in face):
                continue
            for k in face:
                if probs[k] <= 0.0 or (terminal is not None and k != terminal):
                    continue
                value = probs[k] / chart.jacobian
                for pos, h in enumerate(face):
                    if h == k:
                        value *= counting_tail(wm, h, T[pos], c[h] - 1)
                    else:
                        value *= waiting_density(wm, h, c[h], T[pos])
                shell += float(value)
                terms += 1
        total += shell
        last = shell
        small = small + 1 if shell <= tol * total else 0
        if L >= threshold and small >= 2:
            break
    else:
        if L >= max_total:
            raise MotionError("allocation sum did not converge")
    return DensityValue(total, region, "allocation-sum", terms=terms, remainder=last)


# ---------------------------------------------------------------------------
# cyclic motions


def _cyclic_terms(lam, p, T, j, terminal=None):
    """Residue-``j`` cyclic density (before the Jacobian) at occupation rows ``T``.

    Each summand corresponds to one terminal velocity; ``terminal`` keeps one.
    """
    T = np.atleast_2d(T)
    n = T.shape[1]
    prod = np.prod(lam * T, axis=1)
    z = n * prod ** (1.0 / n)
    bessel = bessel_tilde_array(j, n, z)
    pref = np.exp(-(T @ lam))
    out = np.zeros(T.shape[0])
    for k in range(n) if terminal is None else (terminal,):
        if j == 0:
            out += p[(k + 1) % n] * np.prod(np.delete(lam, k))
        else:
            window = [(k - r) % n for r in range(1, j)]
            w = np.prod(lam[window] * T[:, window], axis=1) if window else 1.0
            out += p[(k - j + 1) % n] * T[:, k] * w * np.prod(lam)
    return pref * out * bessel


def cyclic_density(model: MotionModel, t, x, j=None) -> DensityValue:
    """Inner density of a cyclic motion with exponential waits.

    Paths are split by the residue ``j`` of the number of displacements modulo
    the number of velocities; ``j = None`` returns the sum over residues.
    """
    if model.kernel.kind != "cyclic":
        raise MotionError("cyclic_density needs a cyclic kernel")
    if not model.is_minimal:
        raise NotMinimal("cyclic closed form needs a minimal motion")
    region, face = _locate(model, t, x)
    if region.kind != RegionKind.INNER:
        raise OutsideSupport(f"{np.asarray(x).tolist()} is not an inner point at t={t}")
    vals = cyclic_density_values(model, t, np.asarray(x, dtype=float)[None, :], j)
    return DensityValue(float(vals[0]), region, "cyclic-bessel")


def cyclic_density_values(model: MotionModel, t, X, j=None):
    """Vectorised cyclic density at points ``X`` (n, D) assumed inner."""
    lam = model.exponential_rates()
    p = model.kernel.initial
    chart = FaceChart.build(model.velocities, range(model.size))
    T = chart.occupation(t, X)
    residues = range(model.size) if j is None else [int(j)]
    return sum(_cyclic_terms(lam, p, T, r) for r in residues) / chart.jacobian


# ---------------------------------------------------------------------------
# complete motions


def _series_length(Amax, n, offset, tol):
    """Shell count after which the remaining shells are below ``tol`` times the first."""
    if Amax == 0.0:
        return 0, 0.0
    first = math.lgamma(offset + 1)
    j = 0
    while True:
        nxt = j + 1
        logb = math.lgamma(nxt + offset + 1) + nxt * math.log(Amax * n) - 2 * math.lgamma(nxt + 1)
        r = (nxt + offset + 1) * n * Amax / (nxt + 1) ** 2
        if r < 1.0:
            bound = math.exp(logb - first) / (1.0 - r)
            if bound <= tol:
                return j, bound
        j += 1
        if j > 100000:
            raise MotionError("series length exploded")


def complete_series(lam, p, T, tol=DEFAULT_TOL, terminal=None):
    """Complete-motion series at occupation rows ``T`` (n_pts, H+1).

    ``(e^{-lam t}/lam) prod(lam p_h) sum_m (|m|+H+1)! prod a_h^m_h / (m_h! (m_h+1)!)``
    with ``a_h = lam p_h T_h``.  With ``terminal = k`` the joint density with
    ``V(t) = v_k`` is returned: the factorial becomes ``(|m|+H)!`` and the
    ``k``-th factor ``a_k^m / (m!)^2``.  Returns ``(values, remainder_bounds, terms)``.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    p = np.asarray(p, dtype=float)
    npts, n = T.shape
    offset = n if terminal is None else n - 1
    a = lam * p * T
    A = a.sum(axis=1)
    J, _ = _series_length(float(A.max()) if npts else 0.0, n, offset, tol)
    j = np.arange(J + 1)
    S = None
    with np.errstate(divide="ignore"):
        loga = np.log(a)
    for h in range(n):
        second = special.gammaln(j + 1) if h == terminal else special.gammaln(j + 2)
        expo = np.multiply.outer(loga[:, h], j) - special.gammaln(j + 1) - second
        expo[:, 0] = -second[0]
        c = np.exp(expo)
        if S is None:
            S = c
        else:
            nxt = np.zeros_like(S)
            for i in range(J + 1):
                nxt[:, i:] += S[:, i:i + 1] * c[:, :J + 1 - i]
            S = nxt
    with np.errstate(divide="ignore"):
        logs = np.log(S) + special.gammaln(j + offset + 1)
    series = np.exp(logs).sum(axis=1)
    t = T.sum(axis=1)
    pref = np.exp(-lam * t) / lam * np.prod(lam * p)
    # remainder bound for each point (same shell cut, its own A)
    rem = np.zeros(npts)
    for i in range(npts):
        if A[i] > 0:
            nxt_ = J + 1
            r = (nxt_ + offset + 1) * n * A[i] / (nxt_ + 1) ** 2
            logb = math.lgamma(nxt_ + offset + 1) + nxt_ * math.log(A[i] * n) - 2 * math.lgamma(nxt_ + 1)
            rem[i] = math.exp(logb) / (1.0 - r) if r < 1 else math.inf
    return pref * series, pref * rem, J + 1


def _integral_cutoff(n, tol):
    """``W`` with ``2^{n+1} Q(n+1, W/2) <= tol``."""
    W = 2.0 * (n + 1)
    while 2.0 ** (n + 1) * special.gammaincc(n + 1, W / 2.0) > tol:
        W *= 1.25
    return W


def complete_integral(lam, p, T, tol=1e-13):
    """Integral representation of :func:`complete_series` at one occupation vector.

    ``(e^{-lam t}/lam) prod sqrt(lam p_h / T_h) int_0^inf e^{-w} w^{n/2} prod I_1(2 sqrt(w lam p_h T_h)) dw``
    """
    T = np.asarray(T, dtype=float)
    p = np.asarray(p, dtype=float)
    n = T.shape[0]
    b = lam * p * T
    if np.any(b <= 0):
        raise OutsideSupport("integral form needs strictly positive occupation times")
    beta = float(np.sum(np.sqrt(b)))
    W = max(16.0 * beta ** 2, _integral_cutoff(n, tol))
    sb = np.sqrt(b)

    def integrand(w):
        if w <= 0.0:
            return 0.0
        z = 2.0 * math.sqrt(w) * sb
        log_terms = np.log(special.ive(1, z)) + z
        return math.exp(-w + 0.5 * n * math.log(w) + float(log_terms.sum()) - float(np.log(sb).sum()))

    # integrand divided by prod sqrt(b_h) so that it starts near n!
    peak = (beta + math.sqrt(beta ** 2 + 2.0 * n)) ** 2
    pts = [pk for pk in (0.5 * peak, peak, 2.0 * peak) if pk < W]
    val, err = integrate.quad(integrand, 0.0, W, points=pts or None, epsabs=0.0, epsrel=2e-14, limit=500)
    t = float(T.sum())
    pref = math.exp(-lam * t) / lam * float(np.prod(lam * p))
    return pref * val, pref * (err + tol * val)


def _complete_setup(model: MotionModel):
    lam = model.constant_rate
    if model.kernel.kind != "complete" or lam is None:
        raise MotionError("closed form needs a complete kernel and a constant common rate")
    return lam, model.kernel.initial


def complete_density(model: MotionModel, t, x, form="series", face=None, terminal=None,
                     tol=DEFAULT_TOL) -> DensityValue:
    """Density of a complete motion on the interior (or on ``face``), by series or integral."""
    lam, p = _complete_setup(model)
    region, face = _locate(model, t, x, face)
    if region.kind == RegionKind.VERTEX:
        raise OutsideSupport("vertices carry a mass, not a density")
    if region.kind == RegionKind.INNER and not model.is_minimal:
        raise NotMinimal("closed form needs a minimal motion")
    chart = FaceChart.build(model.velocities, face)
    T = chart.occupation(t, x)
    ps = p[list(face)]
    if form == "series":
        k = None if terminal is None else face.index(terminal)
        vals, rem, terms = complete_series(lam, ps, T[None, :], tol, terminal=k)
        return DensityValue(float(vals[0]) / chart.jacobian, region, "complete-series", terms, float(rem[0]) / chart.jacobian)
    if form == "integral":
        if terminal is not None:
            raise ValueError("the integral form is for the density summed over the terminal velocity")
        val, err = complete_integral(lam, ps, T, tol)
        return DensityValue(val / chart.jacobian, region, "complete-integral", 0, err / chart.jacobian)
    raise ValueError(f"unknown form {form!r}")


def complete_density_values(model: MotionModel, t, X, face=None, terminal=None, tol=DEFAULT_TOL):
    """Vectorised series density at points ``X`` assumed to be in the relative interior of ``face``."""
    lam, p = _complete_setup(model)
    face = tuple(range(model.size)) if face is None else tuple(sorted(face))
    chart = FaceChart.build(model.velocities, face)
    T = chart.occupation(t, np.atleast_2d(X))
    k = None if terminal is None else face.index(terminal)
    vals, _, _ = complete_series(lam, p[list(face)], T, tol, terminal=k)
    return vals / chart.jacobian


def minimal_density(model: MotionModel, t, x, tol=DEFAULT_TOL) -> DensityValue:
    """Density (or vertex mass) at ``x`` summed over allocations, routed by region."""
    region, face = _locate(model, t, x)
    if region.kind == RegionKind.VERTEX:
        from .masses import vertex_mass

        return DensityValue(vertex_mass(model, t, face[0]), region, "vertex-mass")
    if model.kernel.kind == "complete" and model.constant_rate is not None:
        return complete_density(model, t, x, "series", face=face, tol=tol)
    if (model.kernel.kind == "cyclic" and region.kind == RegionKind.INNER and model.is_minimal
            and model.waiting_model().is_exponential):
        return cyclic_density(model, t, x)
    return density_sum(model, t, x, face=face, tol=tol)


def occupation_density_values(model: MotionModel, face, T, tol=DEFAULT_TOL, max_total=2000):
    """Density in occupation coordinates, summed over allocations using exactly ``face``.

    ``T`` has one row of occupation times (for the velocities of ``face``) per
    point.  The result still has to be divided by the Jacobian of the chart
    in which the density is wanted.
    """
    face = tuple(sorted(face))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    wm = model.waiting_model()
    _check_waits(wm, face)
    kind = model.kernel.kind
    if kind == "complete" and model.constant_rate is not None:
        vals, _, _ = complete_series(model.constant_rate, model.kernel.initial[list(face)], T, tol)
        return vals
    if kind == "cyclic" and len(face) == model.size and wm.is_exponential:
        lam = wm.rates()
        return sum(_cyclic_terms(lam, model.kernel.initial, T, j) for j in range(model.size))
    t = float(T[0].sum())
    means = [wm[h].mean() for h in face]
    threshold = t / min(means) + 10.0 * math.sqrt(t / min(means)) + 10.0 + len(face)
    total = np.zeros(T.shape[0])
    small = 0
    for L, layer in allocation_layers(model.kernel, max_total, allowed=face):
        shell = np.zeros(T.shape[0])
        for c, probs in layer.items():
            if any(c[h] < 1 for h in face):
                continue
            for k in face:
                if probs[k] <= 0.0:
                    continue
                value = np.full(T.shape[0], probs[k])
                for pos, h in enumerate(face):
                    if h == k:
                        value = value * counting_tail(wm, h, T[:, pos], c[h] - 1)
                    else:
                        value = value * waiting_density(wm, h, c[h], T[:, pos])
                shell += value
        total += shell
        small = small + 1 if np.all(shell <= tol * total) else 0
        if L >= threshold and small >= 2:
            break
    return total
