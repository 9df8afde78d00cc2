"""Finite-difference checks of the equations satisfied by the densities.

Densities are evaluated in closed form and differentiated by central
differences; the residual of a true solution is pure discretisation error and
must shrink like ``h^2``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import stats

from .analytic.densities import DEFAULT_TOL, FaceChart, _cyclic_terms, complete_density_values
from .analytic.masses import border_mass, face_mass_complete, face_masses_complete, inner_mass_complete
from .errors import BoundaryTooClose, ConditionViolated, MotionError
from .geometry import VelocitySet, build_projection
from .model import MotionModel
from .operators import OperatorPolynomial, build_dth_order_operator
from .simulator import mc_summary, simulate_endpoints
from .stochastic import RateFunction, SwitchKernel, stream

SERIES_TOL = 1e-16


@lru_cache(maxsize=32)
def central_weights(order):
    """Second-order accurate central stencil ``(offsets, weights)`` for ``d^order/dz^order``.

    Weights are exact rationals, to be divided by ``h**order``.
    """
    if order == 0:
        return (0,), (Fraction(1),)
    r = (order + 1) // 2
    offsets = list(range(-r, r + 1))
    n = len(offsets)
    # solve sum_j w_j o_j^m = m! delta_{m,order}, m = 0..n-1, exactly
    A = [[Fraction(o) ** m for o in offsets] for m in range(n)]
    b = [Fraction(math.factorial(order)) if m == order else Fraction(0) for m in range(n)]
    for col in range(n):
        piv = next(i for i in range(col, n) if A[i][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        b[col], b[piv] = b[piv], b[col]
        for i in range(n):
            if i != col and A[i][col] != 0:
                f = A[i][col] / A[col][col]
                A[i] = [a - f * c for a, c in zip(A[i], A[col])]
                b[i] -= f * b[col]
    w = [b[i] / A[i][i] for i in range(n)]
    return tuple(offsets), tuple(w)


@dataclass(frozen=True)
class PdeStencil:
    """Evaluation points ``(t, x_1..x_D)`` and one spacing shared by every axis."""

    points: tuple
    spacing: float

    @property
    def array(self):
        return np.asarray(self.points, dtype=float)

    def refined(self, factor=2):
        return PdeStencil(self.points, self.spacing / factor)


def apply_operator(op: OperatorPolynomial, f, points, h):
    """Apply ``op`` to ``f`` at ``points`` (n, 1+D) by nested central differences.

    ``f`` maps an ``(m, 1+D)`` array of ``(t, x)`` rows to values.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    offsets_all = []
    weights_all = []
    for idx, coef in op.items():
        per_axis = [central_weights(a) for a in idx]
        scale = float(coef) / h ** sum(idx)
        for combo in itertools.product(*[list(zip(o, w)) for o, w in per_axis]):
            offs = tuple(c[0] for c in combo)
            wt = float(np.prod([float(c[1]) for c in combo])) * scale
            offsets_all.append(offs)
            weights_all.append(wt)
    # merge equal offsets
    merged = {}
    for o, w in zip(offsets_all, weights_all):
        merged[o] = merged.get(o, 0.0) + w
    offs = np.array(list(merged.keys()), dtype=float)
    wts = np.array(list(merged.values()))
    sample = points[:, None, :] + h * offs[None, :, :]
    vals = np.asarray(f(sample.reshape(-1, points.shape[1])), dtype=float).reshape(points.shape[0], -1)
    return vals @ wts


def stencil_reach(op: OperatorPolynomial):
    return max((max((a + 1) // 2 for a in idx) for idx in op.terms), default=0)


def check_margin(vs: VelocitySet, points, h, reach):
    """Every stencil point must keep all occupation times above ``2 h``."""
    chart = FaceChart.build(vs, range(vs.size))
    pts = np.atleast_2d(points)
    corners = np.array(list(itertools.product([-reach, reach], repeat=pts.shape[1]))) * h
    for p in pts:
        T = chart.occupation(p[0] + corners[:, 0], p[1:] + corners[:, 1:])
        if np.any(T < 2.0 * h):
            raise BoundaryTooClose(f"stencil around {p.tolist()} with h={h} reaches the boundary")


# ---------------------------------------------------------------------------
# per-velocity densities


def velocity_density_functions(model: MotionModel, tol=SERIES_TOL):
    """Callables ``f_i(rows of (t, x))`` for the joint density with ``V(t) = v_i``."""
    if not model.is_minimal:
        raise MotionError("per-velocity densities are implemented for minimal motions")
    n = model.size
    if model.kernel.kind == "complete" and model.constant_rate is not None:
        def make(i):
            def f(tx):
                return np.array([complete_density_values(model, row[0], row[1:][None, :], terminal=i, tol=tol)[0]
                                 for row in tx]) if _mixed_t(tx) else complete_density_values(
                    model, tx[0, 0], tx[:, 1:], terminal=i, tol=tol)
            return f
        return [make(i) for i in range(n)]
    if model.kernel.kind == "cyclic" and model.waiting_model().is_exponential:
        lam = model.exponential_rates()
        chart = FaceChart.build(model.velocities, range(n))

        def make_c(i):
            def f(tx):
                T = chart.occupation(tx[:, 0], tx[:, 1:])
                return sum(_cyclic_terms(lam, model.kernel.initial, T, j, terminal=i) for j in range(n)) / chart.jacobian
            return f
        return [make_c(i) for i in range(n)]
    raise MotionError("no closed-form per-velocity densities for this model")


def _mixed_t(tx):
    return np.any(tx[:, 0] != tx[0, 0])


def _grouped_by_t(func):
    """Evaluate ``func(t, X)`` on rows of ``(t, x)`` grouped by equal ``t``."""
    def f(tx):
        tx = np.atleast_2d(tx)
        out = np.empty(tx.shape[0])
        for t in np.unique(tx[:, 0]):
            sel = tx[:, 0] == t
            out[sel] = func(t, tx[sel, 1:])
        return out
    return f


def position_density_function(model: MotionModel, tol=SERIES_TOL):
    """Callable giving the inner density of ``X(t)`` at rows of ``(t, x)``."""
    if model.kernel.kind == "complete" and model.constant_rate is not None:
        return _grouped_by_t(lambda t, X: complete_density_values(model, t, X, tol=tol))
    fs = velocity_density_functions(model, tol)
    return lambda tx: sum(f(tx) for f in fs)


def residual_system(model: MotionModel, stencil: PdeStencil, fs=None):
    """Max residual of each equation ``d_t f_i + <grad f_i, v_i> + lam_i f_i - sum_j lam_j P_ji f_j``."""
    vs = model.velocities
    D = vs.D
    check_margin(vs, stencil.array, stencil.spacing, 1)
    if fs is None:
        fs = velocity_density_functions(model)
    fs = [_grouped_by_t(lambda t, X, f=f: f(np.column_stack([np.full(X.shape[0], t), X]))) for f in fs]
    wm = model.waiting_model()
    if not wm.is_exponential:
        raise MotionError("the first-order system needs exponential waiting times")
    lam = wm.rates()
    P = model.kernel.P
    pts = stencil.array
    h = stencil.spacing
    values = [f(pts) for f in fs]
    out = []
    for i, f in enumerate(fs):
        op = OperatorPolynomial.dt(D)
        for d in range(D):
            if vs.V[d, i] != 0:
                op = op + float(vs.V[d, i]) * OperatorPolynomial.dx(D, d + 1)
        r = apply_operator(op, f, pts, h) + lam[i] * values[i]
        for j in range(len(fs)):
            r = r - lam[j] * P[j, i] * values[j]
        out.append(float(np.max(np.abs(r))))
    return out


def residual_dth_order(model: MotionModel, stencil: PdeStencil, op: OperatorPolynomial | None = None):
    """Max residual of the scalar higher-order equation for the position density."""
    lam = model.constant_rate
    if model.kernel.kind != "complete" or lam is None or not model.velocities.is_canonical:
        raise MotionError("the scalar equation is stated for complete canonical motions with constant rate")
    D = model.D
    if op is None:
        op = build_dth_order_operator(D, lam, model.kernel.initial, check=False)
    check_margin(model.velocities, stencil.array, stencil.spacing, stencil_reach(op))
    f = position_density_function(model)
    return float(np.max(np.abs(apply_operator(op, f, stencil.array, stencil.spacing))))


def convergence_table(residual, stencil: PdeStencil, levels=4):
    """Rows ``(h, residual, observed order)``; ``residual`` maps a stencil to a number."""
    rows = []
    st = stencil
    prev = None
    for _ in range(levels):
        r = residual(st)
        order = math.log2(prev / r) if prev is not None and r > 0 else math.nan
        rows.append((st.spacing, r, order))
        prev = r
        st = st.refined()
    return rows


# ---------------------------------------------------------------------------
# conditioning on a subset of velocities


def subset_constancy(kernel: SwitchKernel, face, atol=1e-12):
    """``alpha`` with ``sum_{i in face} P[k, i] = alpha`` for every ``k`` in ``face``."""
    face = list(face)
    sums = kernel.P[np.ix_(face, face)].sum(axis=1)
    for k, s in zip(face, sums):
        if abs(s - sums[0]) > atol:
            raise ConditionViolated(f"row {k} keeps the subset with probability {s}, row {face[0]} with {sums[0]}", row=k)
    if sums[0] <= 0:
        raise ConditionViolated("the subset is left at the first event with probability 1", row=face[0])
    return float(sums[0])


def conditioning_probability(model: MotionModel, face, t):
    """``P{no velocity outside face is used by time t} = e^{-Lambda(t)(1-alpha)} sum_{i in face} p_i``."""
    alpha = subset_constancy(model.kernel, face)
    return math.exp(-model.cumulative_rate(t) * (1.0 - alpha)) * float(model.kernel.initial[list(face)].sum())


def scaled_subset_model(model: MotionModel, face):
    """Motion on ``face`` with rate ``lambda alpha``, renormalised initial law and kernel, projected."""
    face = sorted(face)
    alpha = subset_constancy(model.kernel, face)
    sub = model.velocities.subset(face)
    if sub.size > 1 and sub.state_space_dim() < sub.D:
        pm = build_projection(sub)
        sub = pm.project_velocities(sub)
    else:
        pm = None
    p = model.kernel.initial[face]
    if model.kernel.kind == "complete":
        kernel = SwitchKernel.complete(p / p.sum())
    else:
        P = model.kernel.P[np.ix_(face, face)] / alpha
        kernel = SwitchKernel.markov(p / p.sum(), P / P.sum(axis=1, keepdims=True))
    if model.rate is None:
        raise MotionError("conditioning needs a common Poisson event stream")
    rate = model.rate.scaled(alpha)
    return MotionModel(sub, kernel, rate=rate), pm


def conditional_equivalence(model: MotionModel, face, t, replicas, seed=0, samples=100_000, level=1e-3):
    """Compare ``X(t)`` given no off-face velocity with the scaled motion on the face.

    Returns a JSON-ready report with the analytic and empirical conditioning
    probabilities and per-coordinate two-sample KS tests.
    """
    face = tuple(sorted(face))
    prob = conditioning_probability(model, face, t)
    ep = simulate_endpoints(model, t, replicas, stream(seed, 0))
    off = [h for h in range(model.size) if h not in face]
    keep = np.all(ep.counts[:, off] == 0, axis=1) if off else np.ones(ep.size, dtype=bool)
    freq = float(keep.mean())
    sigma = math.sqrt(prob * (1 - prob) / replicas) if 0 < prob < 1 else 0.0
    z = (freq - prob) / sigma if sigma > 0 else 0.0
    scaled, pm = scaled_subset_model(model, face)
    cond = ep.position[keep][:samples]
    if pm is not None:
        cond = pm.apply(cond)
    n_y = max(cond.shape[0], 1)
    y = simulate_endpoints(scaled, t, n_y, stream(seed, 1)).position
    tests = []
    for d in range(y.shape[1]):
        res = stats.ks_2samp(cond[:, d], y[:, d])
        tests.append({"coordinate": d, "statistic": float(res.statistic), "pvalue": float(res.pvalue),
                      "pass": bool(res.pvalue > level)})
    return {
        "face": list(face),
        "alpha": subset_constancy(model.kernel, face),
        "analytic_probability": prob,
        "empirical_probability": freq,
        "replicas": int(replicas),
        "z_score": z,
        "probability_pass": bool(abs(z) <= 3.0),
        "conditioned_samples": int(cond.shape[0]),
        "scaled_samples": int(y.shape[0]),
        "ks_level": level,
        "ks": tests,
        "pass": bool(abs(z) <= 3.0 and all(tst["pass"] for tst in tests)),
    }


def nonhomogeneous_masses(model: MotionModel, rate: RateFunction, t, face=None):
    """Face masses of the complete motion driven by ``rate``; they depend on ``Lambda(t)`` only.

    With ``face`` the single mass is returned, otherwise a dict holding every
    face mass plus ``border`` and ``inner``.
    """
    if model.kernel.kind != "complete":
        raise MotionError("closed-form masses are for complete kernels")
    p = model.kernel.initial
    Lam = rate.cumulative(t)
    if face is not None:
        return face_mass_complete(p, Lam, face)
    out = face_masses_complete(p, Lam)
    out["border"] = border_mass(p, Lam)
    out["inner"] = inner_mass_complete(p, Lam)
    return out


def nonhomogeneous_masses_mc(model: MotionModel, rate: RateFunction, t, replicas, seed=0, workers=1):
    """Face frequencies of the motion driven by ``rate`` (arrivals by thinning)."""
    summary = mc_summary(model.with_rate(rate), t, replicas, seed=seed, workers=workers)
    return {face: c / replicas for face, c in summary.faces.items()}
