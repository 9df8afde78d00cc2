"""Probability masses of the faces of the support and two combinatorial identities.

For a complete motion the first velocity and every redraw follow ``p``, and
the number of redraws is Poisson(``Lambda``).  The probability that exactly
the velocities in ``I`` are used is then, by inclusion-exclusion,
``sum_{S subset I} (-1)^{|I|-|S|} p_S e^{-Lambda (1 - p_S)}``, which equals the
product form ``e^{-Lambda} sum_{h in I} p_h e^{Lambda p_h} prod_{j != h} (e^{Lambda p_j} - 1)``.
"""
from __future__ import annotations

import decimal
import itertools
import math
from fractions import Fraction

import numpy as np

from ..errors import MotionError
from ..model import MotionModel


def _check_p(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("p must be positive and sum to 1")
    return p


def _subset_term(p, S, Lam):
    ps = float(sum(p[i] for i in S))
    return ps * math.exp(-Lam * (1.0 - ps))


def face_mass_complete(p, Lam, face, form="product"):
    """Probability that the set of used velocities is exactly ``face``.

    ``Lam`` is ``lambda t`` or, for a time-dependent rate, ``Lambda(t)``.
    The product form uses ``expm1`` and has no cancellation; ``alternating``
    is the inclusion-exclusion sum.
    """
    p = _check_p(p)
    face = tuple(sorted(face))
    if Lam < 0:
        raise ValueError("Lambda must be nonnegative")
    if form == "product":
        total = 0.0
        for h in face:
            term = p[h] * math.exp(-Lam * (1.0 - p[h]))
            for j in face:
                if j != h:
                    term *= math.expm1(Lam * p[j])
            total += term
        return total
    if form == "alternating":
        H1 = len(face)
        total = 0.0
        for size in range(1, H1 + 1):
            sign = (-1) ** (H1 - size)
            total += sign * sum(_subset_term(p, S, Lam) for S in itertools.combinations(face, size))
        return total
    raise ValueError(f"unknown form {form!r}")


def face_masses_complete(p, Lam, form="product"):
    """Mass of every face, keyed by its velocity indices (vertices and interior included)."""
    n = len(p)
    return {face: face_mass_complete(p, Lam, face, form)
            for size in range(1, n + 1) for face in itertools.combinations(range(n), size)}


def mass_exactly_H_plus_1(p, Lam, H):
    """Probability that exactly ``H + 1`` distinct velocities are used."""
    p = _check_p(p)
    n = p.shape[0]
    total = 0.0
    for h in range(1, H + 2):
        coef = (-1) ** (H + 1 - h) * math.comb(n - h, H + 1 - h)
        total += coef * sum(_subset_term(p, S, Lam) for S in itertools.combinations(range(n), h))
    return total


def border_mass(p, Lam):
    """Probability that some velocity is never used (mass of the boundary)."""
    p = _check_p(p)
    n = p.shape[0]
    D = n - 1
    total = 0.0
    for h in range(1, D + 1):
        total += (-1) ** (D - h) * sum(_subset_term(p, S, Lam) for S in itertools.combinations(range(n), h))
    return total


def inner_mass_complete(p, Lam):
    return face_mass_complete(p, Lam, tuple(range(len(p))))


def uniform_face_mass(D, Lam, H):
    """Face mass for ``p_h = 1/(D+1)`` and a face with ``H + 1`` velocities."""
    q = 1.0 / (D + 1)
    return (H + 1) * q * math.exp(-Lam * D * q) * math.expm1(Lam * q) ** H


def vertex_mass(model: MotionModel, t, h):
    """Probability of moving with ``v_h`` during all of ``[0, t]``."""
    p0 = model.kernel.initial[h]
    if model.rate is not None:
        # every event redraws; staying means each redraw returns h
        stay = model.kernel.P[h, h]
        return p0 * math.exp(-model.rate.cumulative(t) * (1.0 - stay))
    law = model.waits[h]
    if law.atomic:
        return p0 * float(law.duration > t)
    from scipy import special

    if model.kernel.P[h, h] != 0.0:
        raise MotionError("vertex mass with self-transitions needs a common event rate")
    return p0 * float(special.gammaincc(law.gamma_shape, law.rate * t))


# ---------------------------------------------------------------------------
# identities


def identity_subset_power_sum(c, m):
    """Both sides of the subset power-sum identity.

    Left: ``sum_h (-1)^{H-h} sum_{|S|=h} (c_S)^m``.  Right: ``0`` for ``m < H``,
    else ``m! [x^m] prod_i (e^{c_i x} - 1)``, i.e. the multinomial sum over
    compositions of ``m`` into ``H`` positive parts.  The identity holds for
    ``m >= 1``; at ``m = 0`` the left side is ``(-1)^(H+1)`` because the empty
    composition is not cancelled.
    """
    c = [float(v) for v in c]
    H = len(c)
    if H < 1 or m < 0:
        raise ValueError("need H >= 1 and m >= 0")
    # the alternating sum cancels heavily; evaluate it exactly on the binary inputs
    exact = [Fraction(v) for v in c]
    lhs = Fraction(0)
    for h in range(1, H + 1):
        sign = (-1) ** (H - h)
        lhs += sign * sum(sum(S) ** m for S in itertools.combinations(exact, h))
    lhs = float(lhs)
    if m < H:
        return lhs, 0.0
    # coefficients of x^j / j! in prod_i (e^{c_i x} - 1), j = 0..m
    poly = np.zeros(m + 1)
    poly[0] = 1.0
    binom = np.array([[math.comb(a, b) for b in range(m + 1)] for a in range(m + 1)], dtype=float)
    for ci in c:
        pw = np.array([ci ** j for j in range(m + 1)])
        pw[0] = 0.0
        nxt = np.zeros(m + 1)
        for j in range(m + 1):
            nxt[j] = np.dot(binom[j, :j + 1], poly[:j + 1] * pw[j::-1])
        poly = nxt
    return lhs, float(poly[m])


def identity_exp_product(c, beta):
    """Both sides of ``sum_h c_h e^{beta c_h} prod_{j != h}(e^{beta c_j} - 1)
    = sum_h (-1)^{H-h} sum_{|S|=h} c_S e^{beta c_S}``."""
    c = [float(v) for v in c]
    H = len(c)
    lhs = 0.0
    for h in range(H):
        term = c[h] * math.exp(beta * c[h])
        for j in range(H):
            if j != h:
                term *= math.expm1(beta * c[j])
        lhs += term
    # the alternating right side cancels down to O(beta^(H-1)); use 80 decimal digits
    with decimal.localcontext() as ctx:
        ctx.prec = 80
        exact = [decimal.Decimal(v) for v in c]
        b = decimal.Decimal(float(beta))
        rhs = decimal.Decimal(0)
        for h in range(1, H + 1):
            sign = (-1) ** (H - h)
            for S in itertools.combinations(exact, h):
                cs = sum(S)
                rhs += sign * cs * (b * cs).exp()
    return lhs, float(rhs)
