"""Bessel-type series ``I~_{alpha,nu}(z) = sum_n (z/nu)^{n nu} / (n!^{nu-alpha} (n+1)!^alpha)``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import ConvergenceError


@dataclass(frozen=True)
class SeriesDiagnostics:
    terms: int
    remainder: float


def bessel_tilde(alpha, nu, z, tol=1e-16, diagnostics=False, max_terms=100000):
    """Evaluate ``I~_{alpha,nu}(z)`` for integers ``0 <= alpha <= nu``, ``z >= 0``.

    Terms are generated by their ratio
    ``r_n = (z/nu)^nu / ((n+1)^{nu-alpha} (n+2)^alpha)``, which decreases in
    ``n``; once ``r < 1`` the remainder after a term ``a`` is at most
    ``a r / (1 - r)``.
    """
    alpha, nu = int(alpha), int(nu)
    if nu < 1 or not 0 <= alpha <= nu:
        raise ValueError("need nu >= 1 and 0 <= alpha <= nu")
    if z < 0:
        raise ValueError("z must be nonnegative")
    base = (z / nu) ** nu
    term = 1.0  # n = 0
    total = 0.0
    n = 0
    while True:
        total += term
        r = base / ((n + 1) ** (nu - alpha) * (n + 2) ** alpha)
        nxt = term * r
        if r < 1.0:
            bound = nxt / (1.0 - r)
            if bound <= tol * total or nxt == 0.0:
                break
        n += 1
        term = nxt
        if n > max_terms or not math.isfinite(term):
            raise ConvergenceError(f"Bessel series did not converge for z={z}")
    if diagnostics:
        return total, SeriesDiagnostics(n + 1, bound)
    return total


def bessel_i1(z):
    """Modified Bessel function ``I_1`` through ``(z/2) I~_{1,2}(z)``."""
    return 0.5 * z * bessel_tilde(1, 2, z)


def bessel_tilde_array(alpha, nu, z, tol=1e-16):
    """Vectorised :func:`bessel_tilde` with one truncation valid for every entry."""
    alpha, nu = int(alpha), int(nu)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    zmax = float(z.max()) if z.size else 0.0
    base = (zmax / nu) ** nu
    # the n = 0 term equals 1, so a remainder below ``tol`` is relative too
    term, n = 1.0, 0
    while True:
        r = base / ((n + 1) ** (nu - alpha) * (n + 2) ** alpha)
        nxt = term * r
        if r < 1.0 and (nxt == 0.0 or nxt / (1.0 - r) <= tol):
            break
        term, n = nxt, n + 1
        if n > 100000:
            raise ConvergenceError(f"Bessel series did not converge for z={zmax}")
    k = np.arange(n + 1)
    logden = (nu - alpha) * special.gammaln(k + 1) + alpha * special.gammaln(k + 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(z / nu)
        expo = np.multiply.outer(logz, k * nu) - logden
    expo[..., 0] = -logden[0]
    return np.exp(expo).sum(axis=-1)
