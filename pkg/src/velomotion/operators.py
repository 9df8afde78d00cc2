"""Constant-coefficient differential operators in ``d/dt, d/dx_1, ..., d/dx_D``.

An operator is a polynomial in the commuting symbols; coefficients are
``Fraction`` when built from rationals, otherwise floats.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction
from numbers import Number


class OperatorPolynomial:
    """Map from multi-index ``(a_t, a_1, ..., a_D)`` to coefficient."""

    __slots__ = ("D", "terms")

    def __init__(self, D, terms=None):
        self.D = int(D)
        self.terms = {}
        for idx, c in (terms or {}).items():
            idx = tuple(int(a) for a in idx)
            if len(idx) != self.D + 1 or min(idx) < 0:
                raise ValueError(f"bad multi-index {idx}")
            if c != 0:
                self.terms[idx] = self.terms.get(idx, 0) + c
        self.terms = {k: v for k, v in self.terms.items() if v != 0}

    # construction -----------------------------------------------------------
    @classmethod
    def const(cls, D, c=1):
        return cls(D, {(0,) * (D + 1): c})

    @classmethod
    def dt(cls, D, power=1):
        return cls(D, {(power,) + (0,) * D: 1})

    @classmethod
    def dx(cls, D, i, power=1):
        """``d/dx_i`` with ``i`` in ``1..D``."""
        if not 1 <= i <= D:
            raise ValueError("spatial index must be in 1..D")
        idx = [0] * (D + 1)
        idx[i] = power
        return cls(D, {tuple(idx): 1})

    @classmethod
    def monomial(cls, D, t_power, x_indices, c=1):
        idx = [t_power] + [0] * D
        for i in x_indices:
            idx[i] += 1
        return cls(D, {tuple(idx): c})

    # algebra ----------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, OperatorPolynomial):
            if other.D != self.D:
                raise ValueError("dimension mismatch")
            return other
        if isinstance(other, Number):
            return OperatorPolynomial.const(self.D, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return OperatorPolynomial(self.D, out)

    __radd__ = __add__

    def __neg__(self):
        return OperatorPolynomial(self.D, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = {}
        for (a, ca), (b, cb) in itertools.product(self.terms.items(), other.terms.items()):
            k = tuple(x + y for x, y in zip(a, b))
            out[k] = out.get(k, 0) + ca * cb
        return OperatorPolynomial(self.D, out)

    __rmul__ = __mul__

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return False
        return self.terms == other.terms

    def __hash__(self):
        return hash((self.D, frozenset(self.terms.items())))

    def allclose(self, other, tol=1e-12):
        keys = set(self.terms) | set(other.terms)
        return all(abs(float(self.terms.get(k, 0)) - float(other.terms.get(k, 0))) <= tol for k in keys)

    @property
    def order(self):
        return max((sum(k) for k in self.terms), default=0)

    def coefficient(self, idx):
        return self.terms.get(tuple(idx), 0)

    def perturbed(self, idx, factor):
        """Copy with the coefficient of ``idx`` multiplied by ``factor``."""
        terms = dict(self.terms)
        if tuple(idx) not in terms:
            raise KeyError(f"no term {idx}")
        terms[tuple(idx)] = terms[tuple(idx)] * factor
        return OperatorPolynomial(self.D, terms)

    def items(self):
        return sorted(self.terms.items())

    def __repr__(self):
        parts = []
        for idx, c in self.items():
            sym = "".join(
                (f"dt^{idx[0]}" if idx[0] > 1 else "dt" if idx[0] == 1 else "")
                + "".join(f"dx{i}" * a for i, a in enumerate(idx[1:], start=1))
            ) or "1"
            parts.append(f"({c})*{sym}")
        return " + ".join(parts) if parts else "0"


def _rational(v):
    """Keep exact types exact; floats stay floats."""
    if isinstance(v, (Fraction, int)):
        return Fraction(v)
    return float(v)


def closed_form_operator(D, lam, p):
    """Operator annihilating the position density of the complete canonical motion.

    ``sum_k sum_{|i|=k} sum_h lam^{D+1-h-k} [C(D+1-k, h) - (p_0 + sum_{j not in i} p_j) C(D-k, h)]
    d^{h+k} / dt^h dx_{i_1} ... dx_{i_k}``, with ``i`` ranging over subsets of
    ``{1..D}`` and ``j`` over ``{1..D}``.
    """
    lam = _rational(lam)
    p = [_rational(v) for v in p]
    if len(p) != D + 1:
        raise ValueError("need D+1 probabilities")
    op = OperatorPolynomial(D)
    for k in range(D + 1):
        for i in itertools.combinations(range(1, D + 1), k):
            q = p[0] + sum(p[j] for j in range(1, D + 1) if j not in i)
            for h in range(D + 2 - k):
                coef = lam ** (D + 1 - h - k) * (math.comb(D + 1 - k, h) - q * math.comb(D - k, h))
                op = op + OperatorPolynomial.monomial(D, h, i, coef)
    return op


def recursion_operators(D, lam, p, literal=False):
    """Operators ``Lambda_n``, ``Gamma_n`` for ``n = 1..D`` by the elimination recursion.

    ``d^{n+1} w_n / dt^{n+1} = Lambda_n w_n + Gamma_n sum_{j>n} f_j`` with
    ``w_n = f_0 + ... + f_n``.  Eliminating ``f_n`` gives
    ``Lambda_n = (dt + dx_n + lam) Lambda_{n-1} + lam (p_n - 1) dt^n
    + lam p_n (Gamma_{n-1} - Lambda_{n-1}) - dt^n dx_n``.  ``literal=True``
    uses ``p_0`` in place of ``p_n`` in the two middle terms; that variant
    only agrees with the closed form when ``p_n = p_0``.
    """
    lam = _rational(lam)
    p = [_rational(v) for v in p]
    dt = OperatorPolynomial.dt(D)
    one = OperatorPolynomial.const(D, 1)
    x1 = OperatorPolynomial.dx(D, 1)
    Lam = (lam ** 2 * (p[0] + p[1] - 1) * one + lam * (p[0] + p[1] - 2) * dt
           + lam * (p[0] - 1) * x1 - dt * x1)
    Gam = lam * (p[0] + p[1]) * (dt + lam * one) + lam * p[0] * x1
    out = [(Lam, Gam)]
    for n in range(2, D + 1):
        xn = OperatorPolynomial.dx(D, n)
        dtn = OperatorPolynomial.dt(D, n)
        step = dt + xn + lam * one
        q = p[0] if literal else p[n]
        Lam_n = step * Lam + lam * (q - 1) * dtn + lam * q * (Gam - Lam) - dtn * xn
        Gam_n = step * Gam + lam * p[n] * (dtn + Gam - Lam)
        Lam, Gam = Lam_n, Gam_n
        out.append((Lam, Gam))
    return out


def recursion_operator(D, lam, p, literal=False):
    """``d^{D+1}/dt^{D+1} - Lambda_D`` from :func:`recursion_operators`."""
    Lam, _ = recursion_operators(D, lam, p, literal)[-1]
    return OperatorPolynomial.dt(D, D + 1) - Lam


def determinant_operator(D, lam, p):
    """Determinant of ``d/dt - A`` for the first-order system of the complete motion.

    With ``d_i = d/dt + d/dx_i + lam`` (no spatial term for ``i = 0``) it equals
    ``prod_i d_i - lam sum_i p_i prod_{j != i} d_j``.
    """
    lam = _rational(lam)
    p = [_rational(v) for v in p]
    dt = OperatorPolynomial.dt(D)
    one = OperatorPolynomial.const(D, 1)
    d = [dt + lam * one] + [dt + OperatorPolynomial.dx(D, i) + lam * one for i in range(1, D + 1)]
    prod = one
    for di in d:
        prod = prod * di
    total = prod
    for i in range(D + 1):
        rest = one
        for j in range(D + 1):
            if j != i:
                rest = rest * d[j]
        total = total - lam * p[i] * rest
    return total


def build_dth_order_operator(D, lam, p, check=True):
    """Closed-form operator, optionally verified against the recursion."""
    op = closed_form_operator(D, lam, p)
    if check:
        rec = recursion_operator(D, lam, p)
        exact = all(isinstance(c, Fraction) for c in list(op.terms.values()) + list(rec.terms.values()))
        if (exact and op != rec) or (not exact and not op.allclose(rec, 1e-12)):
            raise ArithmeticError("closed-form operator disagrees with the recursion")
    return op
