"""Randomness sources: waiting-time laws, switching kernels, rate functions.

Samplers always take an explicit ``numpy.random.Generator``; evaluators are
pure functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import AtomicLaw, InconsistentCounts, UnboundedRate

PROB_ATOL = 1e-12
EXACT_FACTORIAL_LIMIT = 20


def stream(seed, *key):
    """Counter-based generator keyed by ``(seed, *key)``.

    Streams with distinct keys are statistically independent and do not
    depend on the order in which they are created.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# waiting times


@dataclass(frozen=True)
class WaitLaw:
    kind: str  # "exponential" | "gamma" | "deterministic"
    rate: float = 1.0
    shape: float = 1.0
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exponential", "gamma", "deterministic"):
            raise ValueError(f"unknown waiting-time law {self.kind!r}")
        if self.kind == "deterministic":
            if not self.duration > 0:
                raise ValueError("deterministic durations must be positive")
        elif not (self.rate > 0 and self.shape > 0):
            raise ValueError("rates and shapes must be positive")

    @property
    def atomic(self):
        return self.kind == "deterministic"

    @property
    def gamma_shape(self):
        return 1.0 if self.kind == "exponential" else self.shape

    def sample(self, rng, size):
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size)
        if self.kind == "gamma":
            return rng.gamma(self.shape, 1.0 / self.rate, size)
        return np.full(size, self.duration)

    def mean(self):
        if self.kind == "deterministic":
            return self.duration
        return self.gamma_shape / self.rate


@dataclass(frozen=True)
class WaitingTimeModel:
    """One waiting-time law per velocity index."""

    laws: tuple

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))
        if not self.laws:
            raise ValueError("at least one law required")

    @classmethod
    def exponential(cls, rates):
        return cls(tuple(WaitLaw("exponential", rate=float(r)) for r in rates))

    @classmethod
    def gamma(cls, shapes, rates):
        return cls(tuple(WaitLaw("gamma", rate=float(r), shape=float(k))
                         for k, r in zip(shapes, rates, strict=True)))

    @classmethod
    def deterministic(cls, durations):
        return cls(tuple(WaitLaw("deterministic", duration=float(d)) for d in durations))

    @property
    def size(self):
        return len(self.laws)

    @property
    def is_exponential(self):
        return all(law.kind == "exponential" for law in self.laws)

    def rates(self):
        return np.array([law.rate for law in self.laws])

    def __getitem__(self, h):
        return self.laws[h]


def waiting_density(model: WaitingTimeModel, h, n, s):
    """Density of the sum of ``n`` waiting times of velocity ``h`` at ``s``."""
    law = model[h]
    if n < 1:
        raise ValueError("n must be >= 1")
    if law.atomic:
        raise AtomicLaw(f"velocity {h} has deterministic waiting times")
    s = np.asarray(s, dtype=float)
    shape = n * law.gamma_shape
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = shape * math.log(law.rate) + (shape - 1) * np.log(s) - law.rate * s - math.lgamma(shape)
        out = np.where(s > 0, np.exp(logpdf), 0.0)
    if shape == 1:
        out = np.where(s == 0, law.rate, out)
    return out if out.ndim else float(out)


def _sum_cdf(law, n, s):
    """CDF at ``s`` of the sum of ``n`` i.i.d. waiting times (``n = 0`` is a unit atom at 0)."""
    if n == 0:
        return np.where(s >= 0, 1.0, 0.0)
    if law.atomic:
        return np.where(s >= n * law.duration, 1.0, 0.0)
    return special.gammainc(n * law.gamma_shape, law.rate * np.maximum(s, 0.0))


def counting_tail(model: WaitingTimeModel, h, s, n):
    """``P{N_(h)(s) = n}`` for the renewal process of velocity ``h``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    law = model[h]
    s = np.asarray(s, dtype=float)
    if law.kind == "exponential":
        mu = law.rate * np.maximum(s, 0.0)
        with np.errstate(divide="ignore"):
            logp = n * np.log(mu) - mu - math.lgamma(n + 1)
        out = np.exp(logp) if n > 0 else np.exp(-mu)
    else:
        out = _sum_cdf(law, n, s) - _sum_cdf(law, n + 1, s)
    out = np.where(s < 0, 0.0, out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# switching kernels


def _check_prob_vector(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL:
        raise ValueError(f"{name} must be a probability vector summing to 1")
    return p


@dataclass(frozen=True, eq=False)
class SwitchKernel:
    """Initial law and velocity transition matrix applied at each event."""

    kind: str  # "cyclic" | "complete" | "markov" | "orthogonal"
    initial: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        initial = _check_prob_vector(self.initial, "initial law")
        P = np.asarray(self.P, dtype=float)
        n = initial.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"transition matrix must be {n} x {n}")
        for j in range(n):
            _check_prob_vector(P[j], f"row {j} of the transition matrix")
        if self.kind == "complete" and not (np.all(P > 0) and np.allclose(P, P[0])):
            raise ValueError("a complete kernel needs identical positive rows")
        initial.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "_cum", np.cumsum(P, axis=1))

    @classmethod
    def cyclic(cls, n, initial=None):
        initial = np.full(n, 1.0 / n) if initial is None else initial
        return cls("cyclic", initial, np.roll(np.eye(n), 1, axis=1))

    @classmethod
    def complete(cls, p):
        p = np.asarray(p, dtype=float)
        return cls("complete", p, np.tile(p, (p.shape[0], 1)))

    @classmethod
    def markov(cls, initial, P):
        return cls("markov", initial, P)

    @classmethod
    def orthogonal(cls, initial=None):
        """Four planar directions; every switch changes axis, each with probability 1/2."""
        initial = np.full(4, 0.25) if initial is None else initial
        P = np.array([[0.0, 0.5, 0.0, 0.5],
                      [0.5, 0.0, 0.5, 0.0],
                      [0.0, 0.5, 0.0, 0.5],
                      [0.5, 0.0, 0.5, 0.0]])
        return cls("orthogonal", initial, P)

    @property
    def size(self):
        return self.initial.shape[0]

    def sample_initial(self, rng, size):
        return rng.choice(self.size, size=size, p=self.initial)

    def sample_next(self, current, rng):
        """Vectorised draw of the next velocity index for each entry of ``current``."""
        current = np.asarray(current)
        if self.kind == "cyclic":
            return (current + 1) % self.size
        u = rng.random(current.shape)
        cum = self._cum[current]
        return np.minimum((u[..., None] >= cum).sum(axis=-1), self.size - 1)

    def restricted_mass(self, indices):
        """Row sums of ``P`` restricted to ``indices`` for rows in ``indices``."""
        idx = list(indices)
        return self.P[np.ix_(idx, idx)].sum(axis=1)


def next_velocity(kernel: SwitchKernel, j, rng):
    if kernel.kind == "cyclic":
        return (j + 1) % kernel.size
    return int(rng.choice(kernel.size, p=kernel.P[j]))


def _multinomial(total, parts):
    """Multinomial coefficient; log-space above the exact-integer limit."""
    if total <= EXACT_FACTORIAL_LIMIT:
        out = math.factorial(total)
        for q in parts:
            out //= math.factorial(q)
        return float(out)
    return math.exp(math.lgamma(total + 1) - sum(math.lgamma(q + 1) for q in parts))


def _cyclic_counts(n, start, length):
    counts = [length // n] * n
    for r in range(length % n):
        counts[(start + r) % n] += 1
    return tuple(counts)


def _markov_allocation(initial, P, counts, k):
    shape = tuple(c + 1 for c in counts)
    n = len(counts)
    dp = np.zeros(shape + (n,))
    for h in range(n):
        if counts[h] >= 1:
            unit = [0] * n
            unit[h] = 1
            dp[tuple(unit) + (h,)] = initial[h]
    for c in np.ndindex(*shape):
        if sum(c) <= 1:
            continue
        for h in range(n):
            if c[h] == 0:
                continue
            prev = list(c)
            prev[h] -= 1
            dp[c + (h,)] = dp[tuple(prev)] @ P[:, h]
    return float(dp[tuple(counts) + (k,)])


def allocation_probability(kernel: SwitchKernel, counts, k):
    """``P{C_n = counts, V(t) = v_k}`` with ``n = sum(counts)`` displacements."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != kernel.size:
        raise ValueError("one count per velocity required")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be nonnegative")
    if counts[k] == 0:
        raise InconsistentCounts(f"terminal velocity {k} has no displacement")
    total = sum(counts)
    if kernel.kind == "complete":
        parts = list(counts)
        parts[k] -= 1
        logp = sum(c * math.log(p) for c, p in zip(counts, kernel.initial) if c)
        return _multinomial(total - 1, parts) * math.exp(logp)
    if kernel.kind == "cyclic":
        n = kernel.size
        start = (k - (total - 1)) % n
        if _cyclic_counts(n, start, total) != counts:
            return 0.0
        return float(kernel.initial[start])
    return _markov_allocation(kernel.initial, kernel.P, counts, k)


def allocation_layers(kernel: SwitchKernel, max_total, allowed=None):
    """Yield ``(L, {counts: probs_by_terminal})`` for ``L = 1..max_total``.

    Forward dynamic programme over sequences that only use ``allowed``
    velocities; zero-probability states are dropped so cyclic kernels stay
    sparse.
    """
    n = kernel.size
    allowed = tuple(range(n)) if allowed is None else tuple(sorted(allowed))
    P = kernel.P
    layer = {}
    for h in allowed:
        if kernel.initial[h] > 0:
            c = [0] * n
            c[h] = 1
            vec = np.zeros(n)
            vec[h] = kernel.initial[h]
            layer[tuple(c)] = vec
    L = 1
    while L <= max_total and layer:
        yield L, layer
        nxt = {}
        for c, vec in layer.items():
            for h in allowed:
                pr = vec @ P[:, h]
                if pr <= 0.0:
                    continue
                c2 = list(c)
                c2[h] += 1
                c2 = tuple(c2)
                if c2 not in nxt:
                    nxt[c2] = np.zeros(n)
                nxt[c2][h] += pr
        layer = nxt
        L += 1


# ---------------------------------------------------------------------------
# rate functions


@dataclass(frozen=True, eq=False)
class RateFunction:
    """Intensity ``lambda(s) >= 0`` of a (non-)homogeneous Poisson process.

    ``kind`` is one of ``constant``, ``piecewise`` (right-continuous steps;
    ``breakpoints[0] = 0`` and the last value extends to infinity),
    ``polynomial`` (coefficients in increasing degree) or ``table`` (a callable
    with a user-supplied list of ``(a, b, bound)`` envelope pieces).
    """

    kind: str
    value: float = 0.0
    breakpoints: tuple = ()
    values: tuple = ()
    coefficients: tuple = ()
    func: Callable | None = None
    envelope: tuple = ()
    cumulative_func: Callable | None = None
    pieces_per_unit: int = 4

    def __post_init__(self):
        if self.kind == "constant":
            if not self.value >= 0 or not math.isfinite(self.value):
                raise ValueError("constant rate must be finite and >= 0")
        elif self.kind == "piecewise":
            b = tuple(float(x) for x in self.breakpoints)
            v = tuple(float(x) for x in self.values)
            if len(b) != len(v) or not b or b[0] != 0.0 or any(y <= x for x, y in zip(b, b[1:])):
                raise ValueError("piecewise rate needs increasing breakpoints starting at 0, one value each")
            if any(x < 0 or not math.isfinite(x) for x in v):
                raise ValueError("piecewise rate values must be finite and >= 0")
            object.__setattr__(self, "breakpoints", b)
            object.__setattr__(self, "values", v)
        elif self.kind == "polynomial":
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
            if not self.coefficients:
                raise ValueError("polynomial rate needs coefficients")
        elif self.kind == "table":
            if self.func is None or not self.envelope:
                raise ValueError("table rate needs a callable and envelope pieces")
            object.__setattr__(self, "envelope", tuple(tuple(map(float, e)) for e in self.envelope))
        else:
            raise ValueError(f"unknown rate kind {self.kind!r}")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def piecewise(cls, breakpoints, values):
        return cls("piecewise", breakpoints=tuple(breakpoints), values=tuple(values))

    @classmethod
    def polynomial(cls, coefficients):
        return cls("polynomial", coefficients=tuple(coefficients))

    @classmethod
    def table(cls, func, envelope, cumulative=None):
        return cls("table", func=func, envelope=tuple(envelope), cumulative_func=cumulative)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            out = np.full(s.shape, self.value)
        elif self.kind == "piecewise":
            idx = np.searchsorted(self.breakpoints, s, side="right") - 1
            out = np.asarray(self.values)[np.clip(idx, 0, None)]
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(s, self.coefficients)
        else:
            out = np.asarray(self.func(s), dtype=float)
        out = np.where(s < 0, 0.0, out)
        return out if out.ndim else float(out)

    def cumulative(self, t):
        """``Lambda(t)``, the integrated rate on ``[0, t]``."""
        if t <= 0:
            return 0.0
        if self.kind == "constant":
            return self.value * t
        if self.kind == "piecewise":
            ends = self.breakpoints[1:] + (math.inf,)
            total = 0.0
            for a, b, v in zip(self.breakpoints, ends, self.values):
                if a >= t:
                    break
                total += v * (min(b, t) - a)
            return total
        if self.kind == "polynomial":
            anti = np.polynomial.polynomial.polyint(self.coefficients)
            return float(np.polynomial.polynomial.polyval(t, anti))
        if self.cumulative_func is not None:
            return float(self.cumulative_func(t))
        return float(integrate.quad(lambda s: float(self(s)), 0.0, t, limit=200)[0])

    def scaled(self, alpha):
        """The rate ``alpha * lambda``."""
        alpha = float(alpha)
        if self.kind == "constant":
            return RateFunction.constant(alpha * self.value)
        if self.kind == "piecewise":
            return RateFunction.piecewise(self.breakpoints, [alpha * v for v in self.values])
        if self.kind == "polynomial":
            return RateFunction.polynomial([alpha * c for c in self.coefficients])
        func, cum = self.func, self.cumulative_func
        return RateFunction.table(
            _Scaled(func, alpha),
            [(a, b, alpha * m) for a, b, m in self.envelope],
            None if cum is None else _Scaled(cum, alpha),
        )

    def _poly_bound(self, a, b):
        c = np.asarray(self.coefficients)
        crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(c)) if len(c) > 2 else []
        pts = [a, b] + [r.real for r in np.atleast_1d(crit) if abs(r.imag) < 1e-12 and a < r.real < b]
        vals = np.polynomial.polynomial.polyval(np.asarray(pts), c)
        if np.min(vals) < -1e-12:
            raise ValueError(f"polynomial rate is negative on [{a}, {b}]")
        return float(np.max(vals))

    def envelope_pieces(self, horizon):
        """Consecutive ``(a, b, bound)`` pieces covering ``[0, horizon]``."""
        if horizon <= 0:
            return []
        if self.kind == "constant":
            return [(0.0, float(horizon), self.value)]
        if self.kind == "piecewise":
            ends = self.breakpoints[1:] + (math.inf,)
            return [(a, min(b, horizon), v) for a, b, v in zip(self.breakpoints, ends, self.values) if a < horizon]
        if self.kind == "polynomial":
            k = max(1, int(math.ceil(horizon * self.pieces_per_unit)))
            grid = np.linspace(0.0, horizon, k + 1)
            return [(float(a), float(b), self._poly_bound(a, b)) for a, b in zip(grid, grid[1:])]
        pieces = [(a, min(b, horizon), m) for a, b, m in self.envelope if a < horizon]
        covered = 0.0
        for a, b, m in pieces:
            if a > covered + 1e-15 or not math.isfinite(m) or m < 0:
                raise UnboundedRate(f"no finite rate bound on [{covered}, {a}]")
            covered = b
        if covered < horizon:
            raise UnboundedRate(f"no finite rate bound beyond {covered}")
        return pieces

    def sup_bound(self, horizon):
        pieces = self.envelope_pieces(horizon)
        return max((m for _, _, m in pieces), default=0.0)


class _Scaled:
    """Picklable ``alpha * f``."""

    def __init__(self, func, alpha):
        self.func = func
        self.alpha = alpha

    def __call__(self, s):
        return self.alpha * np.asarray(self.func(s))


def sample_arrivals(rate: RateFunction, t, rng):
    """Event times of the Poisson process on ``(0, t]``, by thinning.

    On each envelope piece ``[a, b)`` with bound ``m`` a homogeneous stream of
    rate ``m`` is drawn and each point kept with probability ``lambda(s)/m``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = []
    for a, b, m in rate.envelope_pieces(t):
        if m <= 0:
            continue
        n = rng.poisson(m * (b - a))
        cand = np.sort(rng.uniform(a, b, n))
        keep = rng.random(n) * m <= rate(cand)
        out.append(cand[keep & (cand > 0)])
    return np.concatenate(out) if out else np.zeros(0)


def sample_arrival_batch(rate: RateFunction, t, replicas, rng):
    """Vectorised thinning for many independent streams.

    Returns ``(counts, times)`` where ``times`` is the concatenation of each
    replica's sorted event times.
    """
    counts = np.zeros(replicas, dtype=np.int64)
    chunks = []
    owners = []
    for a, b, m in rate.envelope_pieces(t):
        if m <= 0:
            continue
        n = rng.poisson(m * (b - a), size=replicas)
        total = int(n.sum())
        cand = rng.uniform(a, b, total)
        keep = rng.random(total) * m <= rate(cand)
        who = np.repeat(np.arange(replicas), n)[keep]
        chunks.append(cand[keep])
        owners.append(who)
        counts += np.bincount(who, minlength=replicas)
    if not chunks:
        return counts, np.zeros(0)
    times = np.concatenate(chunks)
    who = np.concatenate(owners)
    order = np.lexsort((times, who))
    return counts, times[order]


def next_arrival(rate: RateFunction, current, horizon, rng):
    """First event strictly after each entry of ``current``; ``inf`` past ``horizon``.

    By the Markov property of the Poisson process the past is irrelevant.
    """
    pieces = rate.envelope_pieces(horizon)
    cur = np.array(current, dtype=float, copy=True)
    out = np.full(cur.shape, np.inf)
    if not pieces:
        return out
    ends = np.array([b for _, b, _ in pieces])
    bounds = np.array([m for _, _, m in pieces])
    active = np.flatnonzero(cur < horizon)
    while active.size:
        s = cur[active]
        piece = np.searchsorted(ends, s, side="right")
        inside = piece < len(pieces)
        active, s, piece = active[inside], s[inside], piece[inside]
        if not active.size:
            break
        m = bounds[piece]
        b = ends[piece]
        with np.errstate(divide="ignore"):
            prop = s + rng.exponential(1.0, active.size) / m
        crossed = prop >= b
        cur[active[crossed]] = b[crossed]
        cand = ~crossed
        idx, p, mm = active[cand], prop[cand], m[cand]
        accept = rng.random(idx.size) * mm <= rate(p)
        out[idx[accept]] = p[accept]
        cur[idx] = p
        cur[idx[accept]] = np.inf
        active = np.flatnonzero(cur < horizon)
    return out
