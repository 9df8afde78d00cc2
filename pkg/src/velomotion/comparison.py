"""Comparisons of exact laws with Monte Carlo summaries."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .analytic.densities import DEFAULT_TOL, complete_density_values, cyclic_density_values, minimal_density
from .analytic.masses import face_mass_complete, vertex_mass
from .general_motion import nonminimal_density_values, reduce_model
from .geometry import in_relative_interior
from .model import MotionModel
from .quadrature import gauss_legendre01
from .simulator import MonteCarloSummary, binomial_band


def inner_density_values(model: MotionModel, t, X, tol=DEFAULT_TOL):
    """Density of the full-dimensional part of the law of ``X(t)`` at rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vs = model.velocities
    if vs.state_space_dim() < vs.D:
        pm, reduced = reduce_model(model)
        return inner_density_values(reduced, t, pm.apply(X), tol)
    if not vs.is_minimal:
        return nonminimal_density_values(model, t, X, tol)
    if model.kernel.kind == "complete" and model.constant_rate is not None:
        return complete_density_values(model, t, X, tol=tol)
    if model.kernel.kind == "cyclic" and model.waiting_model().is_exponential:
        return cyclic_density_values(model, t, X)
    return np.array([minimal_density(model, t, x, tol).value for x in X])


def _pieces(lo, hi, cuts):
    inner = sorted(c for c in cuts if lo < c < hi)
    edges = [lo] + inner + [hi]
    return list(zip(edges[:-1], edges[1:]))


def interior_bins(model: MotionModel, summary: MonteCarloSummary):
    """Multi-indices of histogram bins whose closure lies inside the support."""
    vs = model.velocities
    t = summary.t
    edges = summary.spec.edges()
    out = []
    for idx in np.ndindex(*summary.histogram.shape):
        corners = np.array(np.meshgrid(*[[edges[a][i], edges[a][i + 1]] for a, i in enumerate(idx)],
                                       indexing="ij")).reshape(len(idx), -1).T
        if all(in_relative_interior(vs, c, t) for c in corners):
            out.append(idx)
    return out


def bin_probabilities(model: MotionModel, summary: MonteCarloSummary, bins, n=8, tol=DEFAULT_TOL):
    """Exact probability of each bin, by tensor Gauss-Legendre on pieces split at the
    velocity coordinates (where non-minimal densities may jump)."""
    t = summary.t
    edges = summary.spec.edges()
    cuts = [np.unique(model.velocities.V[a] * t) for a in range(model.D)]
    s, w = gauss_legendre01(n)
    pts, wts, owner = [], [], []
    for b, idx in enumerate(bins):
        per_axis = [_pieces(edges[a][i], edges[a][i + 1], cuts[a]) for a, i in enumerate(idx)]
        for combo in np.ndindex(*[len(p) for p in per_axis]):
            lo = np.array([per_axis[a][c][0] for a, c in enumerate(combo)])
            hi = np.array([per_axis[a][c][1] for a, c in enumerate(combo)])
            grid = np.meshgrid(*([s] * len(idx)), indexing="ij")
            S = np.stack([g.ravel() for g in grid], axis=1)
            W = np.prod(np.stack(np.meshgrid(*([w] * len(idx)), indexing="ij")).reshape(len(idx), -1), axis=0)
            pts.append(lo + S * (hi - lo))
            wts.append(W * np.prod(hi - lo))
            owner.append(np.full(W.shape[0], b))
    pts = np.vstack(pts)
    vals = inner_density_values(model, t, pts, tol) * np.concatenate(wts)
    return np.bincount(np.concatenate(owner), weights=vals, minlength=len(bins))


def histogram_comparison(model: MotionModel, summary: MonteCarloSummary, sigmas=3.0, threshold=0.99,
                         n=8, tol=DEFAULT_TOL):
    """Per-bin z-scores of the Monte Carlo histogram against the exact density.

    Returns ``(rows, report)``; rows are ``(bin centre..., expected, observed, z, within)``.
    """
    bins = interior_bins(model, summary)
    if not bins:
        raise ValueError("no histogram bin lies inside the support; use finer bins")
    probs = bin_probabilities(model, summary, bins, n, tol)
    N = summary.replicas
    centers = summary.spec.centers()
    rows = []
    within = 0
    for idx, p in zip(bins, probs):
        obs = int(summary.histogram[idx])
        sd = math.sqrt(max(N * p * (1.0 - p), 1e-300))
        z = (obs - N * p) / sd
        ok = abs(z) <= sigmas
        within += ok
        rows.append((*[centers[a][i] for a, i in enumerate(idx)], N * p, obs, z, ok))
    frac = within / len(bins)
    report = {
        "statistic": "fraction of interior bins with |z| <= sigmas",
        "value": float(frac),
        "sigmas": sigmas,
        "threshold": threshold,
        "bins": len(bins),
        "replicas": N,
        "max_abs_z": float(max(abs(r[-2]) for r in rows)),
        "pass": bool(frac >= threshold),
    }
    return rows, report


def mass_comparison(model: MotionModel, summary: MonteCarloSummary, sigmas=3.0):
    """Analytic face masses against Monte Carlo frequencies (complete kernels with a common rate;
    vertex masses otherwise)."""
    n = model.size
    N = summary.replicas
    rows = []
    faces = []
    if model.kernel.kind == "complete" and model.rate is not None:
        Lam = model.cumulative_rate(summary.t)
        for size in range(1, n + 1):
            for face in itertools.combinations(range(n), size):
                faces.append((face, face_mass_complete(model.kernel.initial, Lam, face)))
    else:
        faces = [((h,), vertex_mass(model, summary.t, h)) for h in range(n)]
    ok_all = True
    for face, m in faces:
        freq = summary.face_frequency(face)
        band = binomial_band(m, N, sigmas)
        ok = abs(freq - m) <= band
        ok_all &= ok
        rows.append(("|".join(map(str, face)), m, freq, band, ok))
    return rows, {"faces": len(rows), "sigmas": sigmas, "replicas": N, "pass": bool(ok_all)}

