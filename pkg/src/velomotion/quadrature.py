"""Gauss rules on intervals and simplices.

Simplex rules are collapsed (Duffy) tensor products of Gauss-Legendre rules
with the Jacobian folded into the weights.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError


@lru_cache(maxsize=64)
def gauss_legendre01(n):
    """``n``-point Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=64)
def simplex_rule(dim, n):
    """Nodes ``(N, dim)`` and weights on ``{u >= 0, sum(u) <= 1}``.

    Weights sum to ``1/dim!``.  With ``n`` points per axis the rule is exact for
    polynomials of total degree ``2n - dim``.
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    s, w = gauss_legendre01(n)
    grids = np.meshgrid(*([s] * dim), indexing="ij")
    S = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * dim), indexing="ij")]), axis=0)
    U = np.empty_like(S)
    rest = np.ones(S.shape[0])
    for j in range(dim):
        U[:, j] = rest * S[:, j]
        W = W * rest
        rest = rest * (1.0 - S[:, j])
    return U, W


def integrate_simplex(f, vertices, n=8):
    """Integral of vectorised ``f`` over the simplex spanned by ``vertices`` (k+1, m).

    The simplex may be lower dimensional than the ambient space; the measure is
    then the k-dimensional volume element.
    """
    P = np.asarray(vertices, dtype=float)
    k = P.shape[0] - 1
    U, W = simplex_rule(k, n)
    E = (P[1:] - P[0]).T
    pts = P[0] + U @ E.T
    if k == 0:
        vol = 1.0
    else:
        vol = math.sqrt(max(np.linalg.det(E.T @ E), 0.0))
    return float(np.dot(W, f(pts)) * vol)


def adaptive_simplex(f, vertices, tol=1e-10, n0=6, n_max=48):
    """p-refinement until two successive orders agree to ``tol`` (relative)."""
    n = n0
    prev = integrate_simplex(f, vertices, n)
    while n < n_max:
        n = min(2 * n, n_max)
        cur = integrate_simplex(f, vertices, n)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-300):
            return cur, abs(cur - prev)
        prev = cur
    raise ConvergenceError(f"simplex quadrature did not reach tol={tol} with {n_max} points per axis")


def integrate_box_gl(f, lower, upper, n=6):
    """Tensor Gauss-Legendre integral of vectorised ``f`` over an axis-aligned box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.shape[0]
    s, w = gauss_legendre01(n)
    grids = np.meshgrid(*([s] * d), indexing="ij")
    S = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=0).reshape(d, -1), axis=0)
    pts = lower + S * (upper - lower)
    return float(np.dot(W, f(pts)) * np.prod(upper - lower))
