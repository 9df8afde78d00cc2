"""Sample paths and Monte Carlo summaries.

Replicas are simulated in fixed blocks of ``BLOCK`` paths.  Block ``b`` draws
from the stream keyed by ``(seed, b)``, so results do not depend on how
blocks are distributed over workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NotMinimal, OutsideHull
from .geometry import HULL_ATOL, VelocitySet, pivoted_rank
from .model import MotionModel
from .stochastic import next_arrival, stream

BLOCK = 1 << 16


@dataclass(frozen=True, eq=False)
class Trajectory:
    switch_times: np.ndarray  # T_0 = 0 < T_1 < ... < T_N(t)
    velocity_indices: np.ndarray  # velocity of each segment
    occupation: np.ndarray
    counts: np.ndarray
    position: np.ndarray
    t: float

    @property
    def terminal(self):
        return int(self.velocity_indices[-1])

    @property
    def n_events(self):
        return len(self.switch_times) - 1

    def position_at(self, s, velocities: VelocitySet):
        """Point on the path at time ``0 <= s <= t``."""
        x = np.zeros(velocities.D)
        ends = np.append(self.switch_times[1:], self.t)
        for a, b, h in zip(self.switch_times, ends, self.velocity_indices):
            if s <= a:
                break
            x += velocities.V[:, h] * (min(s, b) - a)
        return x


def _draw_waits(model: MotionModel, current, rng):
    out = np.empty(current.shape[0])
    for h in np.unique(current):
        sel = current == h
        out[sel] = model.waits[int(h)].sample(rng, int(sel.sum()))
    return out


def _next_event(model: MotionModel, time, current, t, rng):
    if model.rate is not None:
        return next_arrival(model.rate, time, t, rng)
    return time + _draw_waits(model, current, rng)


def simulate_path(model: MotionModel, t, rng) -> Trajectory:
    """One path on ``[0, t]``.  An event falling exactly at ``t`` is not counted."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = model.size
    cur = model.kernel.sample_initial(rng, 1)
    times = [0.0]
    seq = [int(cur[0])]
    now = np.zeros(1)
    while True:
        nxt = _next_event(model, now, cur, t, rng)
        if not nxt[0] < t:
            break
        cur = model.kernel.sample_next(cur, rng)
        now = nxt
        times.append(float(nxt[0]))
        seq.append(int(cur[0]))
    times = np.asarray(times)
    seq = np.asarray(seq)
    durations = np.diff(np.append(times, t))
    occupation = np.bincount(seq, weights=durations, minlength=n)
    counts = np.bincount(seq, minlength=n)
    return Trajectory(times, seq, occupation, counts, model.velocities.V @ occupation, float(t))


@dataclass(frozen=True, eq=False)
class Endpoints:
    """Terminal state of a batch of replicas."""

    occupation: np.ndarray  # (n, M+1)
    counts: np.ndarray  # (n, M+1)
    terminal: np.ndarray  # (n,)
    position: np.ndarray  # (n, D)

    @property
    def size(self):
        return self.terminal.shape[0]


def simulate_endpoints(model: MotionModel, t, replicas, rng) -> Endpoints:
    """Vectorised simulation keeping only the terminal state of each replica."""
    n = model.size
    cur = model.kernel.sample_initial(rng, replicas)
    occ = np.zeros((replicas, n))
    counts = np.zeros((replicas, n), dtype=np.int64)
    rows = np.arange(replicas)
    counts[rows, cur] = 1
    now = np.zeros(replicas)
    active = rows
    while active.size:
        nxt = _next_event(model, now[active], cur[active], t, rng)
        end = np.minimum(nxt, t)
        occ[active, cur[active]] += end - now[active]
        now[active] = end
        active = active[nxt < t]
        if not active.size:
            break
        new = model.kernel.sample_next(cur[active], rng)
        cur[active] = new
        counts[active, new] += 1
    return Endpoints(occ, counts, cur, occ @ model.velocities.V.T)


def occupation_to_position(vs: VelocitySet, T):
    """``(t, X) = [1^T; V] T`` for one occupation vector or an ``(n, M+1)`` array."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise ValueError("occupation times must be nonnegative")
    tX = T @ vs.augmented().T
    return tX[..., 0], tX[..., 1:]


def position_to_occupation(vs: VelocitySet, t, X, atol=HULL_ATOL):
    """Inverse of :func:`occupation_to_position` for minimal velocity sets."""
    if not vs.is_minimal:
        raise NotMinimal("occupation times are determined by the position only for minimal sets")
    X = np.asarray(X, dtype=float)
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), X.shape[:-1])
    if vs.is_canonical:
        T = np.concatenate([(t_arr - X.sum(axis=-1))[..., None], X], axis=-1)
    else:
        rhs = np.concatenate([t_arr[..., None], X], axis=-1)
        T = np.linalg.solve(vs.augmented(), rhs[..., None])[..., 0]
    if np.any(T < -atol * max(1.0, abs(float(np.max(np.abs(T)))))):
        raise OutsideHull("position lies outside the support at this time")
    return T


def canonical_transport(source_vs: VelocitySet, target, t, X):
    """Map positions of a minimal motion to the motion with velocities ``target``.

    ``X' = V' [1^T; V]^{-1} (t, X)``: the occupation times are kept and the
    velocities swapped.
    """
    if not source_vs.is_minimal:
        raise NotMinimal("source motion must be minimal")
    target = target if isinstance(target, VelocitySet) else VelocitySet(np.asarray(target, dtype=float))
    if target.size != source_vs.size:
        raise ValueError("target must have D+1 velocities")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rhs = np.vstack([np.broadcast_to(t, X.shape[0]), X.T])
    T = np.linalg.solve(source_vs.augmented(), rhs)
    return (target.V @ T).T


# ---------------------------------------------------------------------------
# Monte Carlo summaries


@dataclass(frozen=True)
class HistogramSpec:
    lower: tuple
    upper: tuple
    bins: tuple

    @classmethod
    def for_support(cls, vs: VelocitySet, t, bins=20):
        lo = (vs.V.min(axis=1) * t).tolist()
        hi = (vs.V.max(axis=1) * t).tolist()
        b = (bins,) * vs.D if np.isscalar(bins) else tuple(bins)
        return cls(tuple(lo), tuple(hi), tuple(int(x) for x in b))

    def edges(self):
        return [np.linspace(a, b, n + 1) for a, b, n in zip(self.lower, self.upper, self.bins)]

    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges()]

    @property
    def bin_volume(self):
        return float(np.prod([(b - a) / n for a, b, n in zip(self.lower, self.upper, self.bins)]))


def _used_mask_key(used):
    """Row-wise integer key of a boolean usage matrix."""
    return used.astype(np.int64) @ (1 << np.arange(used.shape[1], dtype=np.int64))


def _face_of_key(key, n):
    return tuple(h for h in range(n) if key >> h & 1)


@dataclass(eq=False)
class MonteCarloSummary:
    """Counts aggregated over replicas.

    ``faces`` maps the exact set of used velocities to a replica count.  The
    histogram collects the replicas whose used velocities span the full
    dimension of the support.
    """

    replicas: int
    seed: int
    t: float
    spec: HistogramSpec
    faces: dict = field(default_factory=dict)
    histogram: np.ndarray | None = None
    outside_grid: int = 0
    occupation_sum: np.ndarray | None = None
    joint: dict | None = None
    full_faces: frozenset = frozenset()

    def face_frequency(self, face):
        return self.faces.get(tuple(face), 0) / self.replicas

    @property
    def inner_count(self):
        return sum(c for f, c in self.faces.items() if f in self.full_faces)

    def density_estimate(self):
        return self.histogram / (self.replicas * self.spec.bin_volume)

    def merge(self, other: MonteCarloSummary) -> MonteCarloSummary:
        faces = dict(self.faces)
        for k, v in other.faces.items():
            faces[k] = faces.get(k, 0) + v
        joint = None
        if self.joint is not None:
            joint = dict(self.joint)
            for k, v in other.joint.items():
                joint[k] = joint.get(k, 0) + v
        return MonteCarloSummary(
            self.replicas + other.replicas, self.seed, self.t, self.spec,
            dict(sorted(faces.items())), self.histogram + other.histogram,
            self.outside_grid + other.outside_grid,
            self.occupation_sum + other.occupation_sum,
            None if joint is None else dict(sorted(joint.items())),
            self.full_faces | other.full_faces,
        )


def _full_dim_faces(vs: VelocitySet, keys):
    R = vs.state_space_dim()
    full = set()
    for key in keys:
        face = _face_of_key(int(key), vs.size)
        sub = vs.V[:, face]
        if pivoted_rank(sub[:, 1:] - sub[:, :1], vs.tolerance) == R:
            full.add(face)
    return frozenset(full)


def summarize_endpoints(model: MotionModel, ep: Endpoints, t, spec: HistogramSpec, seed=0, track_joint=False):
    used = ep.counts > 0
    keys = _used_mask_key(used)
    uniq, cnt = np.unique(keys, return_counts=True)
    faces = {_face_of_key(int(k), model.size): int(c) for k, c in zip(uniq, cnt)}
    full = _full_dim_faces(model.velocities, uniq)
    in_full = np.isin(keys, [k for k in uniq if _face_of_key(int(k), model.size) in full])
    pts = ep.position[in_full]
    hist, _ = np.histogramdd(pts, bins=spec.edges())
    hist = hist.astype(np.int64)
    joint = None
    if track_joint:
        rows = np.hstack([ep.counts, ep.terminal[:, None]])
        ju, jc = np.unique(rows, axis=0, return_counts=True)
        joint = {(tuple(int(v) for v in r[:-1]), int(r[-1])): int(c) for r, c in zip(ju, jc)}
    return MonteCarloSummary(
        ep.size, seed, float(t), spec, dict(sorted(faces.items())), hist,
        int(pts.shape[0] - hist.sum()), ep.occupation.sum(axis=0), joint, full,
    )


def _block_sizes(replicas):
    full, rem = divmod(replicas, BLOCK)
    return [BLOCK] * full + ([rem] if rem else [])


def _run_block(args):
    model, t, size, spec, seed, block, track_joint = args
    rng = stream(seed, block)
    ep = simulate_endpoints(model, t, size, rng)
    return summarize_endpoints(model, ep, t, spec, seed, track_joint)


def mc_summary(model: MotionModel, t, replicas, spec: HistogramSpec | None = None, seed=0,
               workers=1, track_joint=False) -> MonteCarloSummary:
    """Monte Carlo summary, bit-identical for any ``workers``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    spec = spec or HistogramSpec.for_support(model.velocities, t)
    jobs = [(model, t, size, spec, seed, b, track_joint) for b, size in enumerate(_block_sizes(replicas))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(j) for j in jobs]
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def simulate_raw(model: MotionModel, t, replicas, seed=0, workers=1) -> Endpoints:
    """Endpoints of all replicas, generated block-wise like :func:`mc_summary`."""
    jobs = [(model, t, size, b, seed) for b, size in enumerate(_block_sizes(replicas))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_raw_block, jobs))
    else:
        parts = [_raw_block(j) for j in jobs]
    return Endpoints(*(np.concatenate([getattr(p, f) for p in parts])
                       for f in ("occupation", "counts", "terminal", "position")))


def _raw_block(args):
    model, t, size, block, seed = args
    return simulate_endpoints(model, t, size, stream(seed, block))


def binomial_band(p, n, sigmas=3.0):
    """Half-width of the ``sigmas``-sigma band for a frequency estimate."""
    return sigmas * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def histogram_rows(summary: MonteCarloSummary):
    """Rows ``(kind, face, coords..., count, frequency)`` for serialisation."""
    rows = []
    n = summary.replicas
    for face, c in summary.faces.items():
        kind = "inner" if face in summary.full_faces else ("vertex" if len(face) == 1 else "face")
        rows.append((kind, "|".join(map(str, face)), *([math.nan] * len(summary.spec.bins)), c, c / n))
    centers = summary.spec.centers()
    for idx in np.ndindex(*summary.histogram.shape):
        c = int(summary.histogram[idx])
        coords = [centers[a][i] for a, i in enumerate(idx)]
        rows.append(("bin", "", *coords, c, c / n))
    return rows
