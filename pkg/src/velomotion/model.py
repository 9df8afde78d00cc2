"""Motion models: velocities, switching kernel and event timing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MotionError
from .geometry import VelocitySet
from .stochastic import RateFunction, SwitchKernel, WaitingTimeModel


@dataclass(frozen=True, eq=False)
class MotionModel:
    """A finite-velocity random motion.

    Events either come from a common Poisson stream with intensity ``rate``
    (possibly time dependent) or, when ``waits`` is given, each displacement
    with velocity ``v_h`` lasts an independent draw from ``waits[h]``.  At every
    event the next velocity is drawn from ``kernel`` (complete kernels may
    redraw the current velocity).
    """

    velocities: VelocitySet
    kernel: SwitchKernel
    waits: WaitingTimeModel | None = None
    rate: RateFunction | None = None

    def __post_init__(self):
        if (self.waits is None) == (self.rate is None):
            raise MotionError("give exactly one of waits or rate")
        n = self.velocities.size
        if self.kernel.size != n:
            raise MotionError(f"kernel has {self.kernel.size} states for {n} velocities")
        if self.waits is not None and self.waits.size != n:
            raise MotionError(f"{self.waits.size} waiting-time laws for {n} velocities")

    @property
    def D(self):
        return self.velocities.D

    @property
    def size(self):
        return self.velocities.size

    @property
    def is_minimal(self):
        return self.velocities.is_minimal

    @property
    def constant_rate(self):
        """Common constant event rate, or ``None``."""
        if self.rate is not None:
            return self.rate.value if self.rate.is_constant else None
        if self.waits.is_exponential:
            r = self.waits.rates()
            if np.all(r == r[0]):
                return float(r[0])
        return None

    def waiting_model(self):
        """Per-velocity renewal description used by density formulas."""
        if self.waits is not None:
            return self.waits
        if not self.rate.is_constant:
            raise MotionError("a time-dependent rate has no renewal description")
        return WaitingTimeModel.exponential([self.rate.value] * self.size)

    def exponential_rates(self):
        """Per-velocity exponential rates ``lambda_h``; error otherwise."""
        wm = self.waiting_model()
        if not wm.is_exponential:
            raise MotionError("waiting times are not exponential")
        return wm.rates()

    def cumulative_rate(self, t):
        """``Lambda(t)`` of the common event stream."""
        if self.rate is not None:
            return self.rate.cumulative(t)
        lam = self.constant_rate
        if lam is None:
            raise MotionError("no common event rate")
        return lam * t

    def with_velocities(self, vs):
        return MotionModel(vs, self.kernel, self.waits, self.rate)

    def with_rate(self, rate):
        return MotionModel(self.velocities, self.kernel, None, rate)


def complete_canonical(D, p=None, lam=1.0, rate=None):
    """Canonical motion in R^D whose switches follow ``p`` irrespective of the state."""
    p = np.full(D + 1, 1.0 / (D + 1)) if p is None else np.asarray(p, dtype=float)
    rate = RateFunction.constant(lam) if rate is None else rate
    return MotionModel(VelocitySet.canonical(D), SwitchKernel.complete(p), rate=rate)


def cyclic_canonical(D, rates, initial=None):
    """Canonical motion visiting ``0, e_1, ..., e_D`` cyclically with exponential waits."""
    return MotionModel(
        VelocitySet.canonical(D),
        SwitchKernel.cyclic(D + 1, initial),
        waits=WaitingTimeModel.exponential(rates),
    )


def complete_motion(velocities, p, lam=1.0, rate=None):
    vs = velocities if isinstance(velocities, VelocitySet) else VelocitySet.from_rows(velocities)
    rate = RateFunction.constant(lam) if rate is None else rate
    return MotionModel(vs, SwitchKernel.complete(p), rate=rate)


def cyclic_motion(velocities, rates, initial=None):
    vs = velocities if isinstance(velocities, VelocitySet) else VelocitySet.from_rows(velocities)
    return MotionModel(vs, SwitchKernel.cyclic(vs.size, initial), waits=WaitingTimeModel.exponential(rates))
