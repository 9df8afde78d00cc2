from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from velomotion.errors import BoundaryTooClose, ConditionViolated, MotionError
from velomotion.geometry import VelocitySet
from velomotion.model import MotionModel
from velomotion.operators import OperatorPolynomial, build_dth_order_operator
from velomotion.pde import (
    PdeStencil,
    apply_operator,
    central_weights,
    check_margin,
    conditional_equivalence,
    conditioning_probability,
    convergence_table,
    nonhomogeneous_masses,
    nonhomogeneous_masses_mc,
    position_density_function,
    residual_dth_order,
    residual_system,
    scaled_subset_model,
    stencil_reach,
    subset_constancy,
)
from velomotion.stochastic import RateFunction, SwitchKernel, WaitingTimeModel


def complete_model(D, p, lam=1.0, rate=None):
    rate = rate or RateFunction.constant(lam)
    return MotionModel(VelocitySet.canonical(D), SwitchKernel.complete(p), rate=rate)


def test_central_weights():
    assert central_weights(1) == ((-1, 0, 1), (Fraction(-1, 2), 0, Fraction(1, 2)))
    assert central_weights(2) == ((-1, 0, 1), (1, -2, 1))
    assert central_weights(3) == ((-2, -1, 0, 1, 2), (Fraction(-1, 2), 1, 0, -1, Fraction(1, 2)))
    assert central_weights(0) == ((0,), (1,))


def test_apply_operator_on_polynomial():
    # d^2/dt dx of t^2 x^2 = 4 t x, exact for the central scheme on low-degree polynomials
    op = OperatorPolynomial(1, {(1, 1): 1, (0, 2): 3})
    f = lambda tx: tx[:, 0] ** 2 * tx[:, 1] ** 2
    pts = np.array([[1.0, 2.0], [0.5, -1.0]])
    got = apply_operator(op, f, pts, 0.1)
    np.testing.assert_allclose(got, 4 * pts[:, 0] * pts[:, 1] + 6 * pts[:, 0] ** 2, rtol=1e-10)


def test_margin_check():
    vs = VelocitySet.canonical(2)
    check_margin(vs, [[1.0, 0.3, 0.3]], 0.04, 2)
    with pytest.raises(BoundaryTooClose):
        check_margin(vs, [[1.0, 0.05, 0.3]], 0.04, 2)


def test_stencil_reach():
    op = build_dth_order_operator(2, 1.0, [0.5, 0.3, 0.2], check=False)
    assert stencil_reach(op) == 2


def test_one_dimensional_system_residual_small():
    model = complete_model(1, [0.5, 0.5])
    res = residual_system(model, PdeStencil(((1.0, 0.4), (1.2, 0.7)), 1e-3))
    assert max(res) < 1e-5


@pytest.mark.parametrize("D", [1, 2])
def test_scalar_equation_converges_at_second_order(D):
    model = complete_model(D, [0.5, 0.5] if D == 1 else [0.5, 0.3, 0.2], lam=1.2)
    st = PdeStencil(((1.0,) + (0.4 / D,) * D,), 0.04)
    table = convergence_table(lambda s: residual_dth_order(model, s), st, 3)
    assert all(1.8 <= o <= 2.2 for _, _, o in table[1:])
    assert table[-1][0] == pytest.approx(0.01)


def test_cyclic_system_converges():
    vs = VelocitySet.canonical(1)
    model = MotionModel(vs, SwitchKernel.cyclic(2, [0.4, 0.6]), waits=WaitingTimeModel.exponential([1.0, 2.5]))
    table = convergence_table(lambda s: max(residual_system(model, s)), PdeStencil(((1.0, 0.4),), 0.04), 3)
    assert all(1.8 <= o <= 2.2 for _, _, o in table[1:])


def test_non_solution_has_order_one_residual():
    model = complete_model(1, [0.5, 0.5])
    op = build_dth_order_operator(1, 1.0, [0.5, 0.5], check=False)
    bump = lambda tx: np.exp(-((tx[:, 0] - 1.0) ** 2 + (tx[:, 1] - 0.4) ** 2) / 0.05)
    pts = np.array([[1.05, 0.42]])
    assert abs(apply_operator(op, bump, pts, 1e-3)[0]) > 0.1
    # and the true density gives a residual near zero at the same spacing
    f = position_density_function(model)
    assert abs(apply_operator(op, f, pts, 1e-3)[0]) < 1e-4


def test_scalar_equation_requires_complete_canonical():
    vs = VelocitySet.canonical(1)
    model = MotionModel(vs, SwitchKernel.cyclic(2), waits=WaitingTimeModel.exponential([1.0, 1.0]))
    with pytest.raises(MotionError):
        residual_dth_order(model, PdeStencil(((1.0, 0.4),), 0.01))


def test_subset_constancy():
    kernel = SwitchKernel.complete([1 / 3] * 3)
    assert subset_constancy(kernel, (0, 1)) == pytest.approx(2 / 3)
    assert subset_constancy(kernel, (0, 1, 2)) == pytest.approx(1.0)
    bad = SwitchKernel.markov([0.5, 0.3, 0.2], [[0.2, 0.4, 0.4], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]])
    with pytest.raises(ConditionViolated) as info:
        subset_constancy(bad, (0, 1))
    assert info.value.row == 1


def test_conditioning_probability_example():
    model = complete_model(2, [1 / 3] * 3, lam=2.0)
    assert conditioning_probability(model, (0, 1), 1.0) == pytest.approx(2 / 3 * math.exp(-2 / 3), rel=1e-14)
    assert conditioning_probability(model, (0, 1), 1.0) == pytest.approx(0.342278, abs=1e-6)


def test_scaled_subset_model_example():
    model = complete_model(2, [1 / 3] * 3, lam=2.0)
    scaled, pm = scaled_subset_model(model, (0, 1))
    assert scaled.constant_rate == pytest.approx(4 / 3)
    np.testing.assert_allclose(scaled.kernel.initial, [0.5, 0.5])
    assert scaled.kernel.kind == "complete"
    assert pm.rows == (0,)
    np.testing.assert_array_equal(scaled.velocities.V, [[0, 1]])


def test_scaled_markov_kernel():
    P = np.array([[0.2, 0.4, 0.4], [0.5, 0.1, 0.4], [0.3, 0.3, 0.4]])
    vs = VelocitySet.canonical(2)
    model = MotionModel(vs, SwitchKernel.markov([0.5, 0.3, 0.2], P), rate=RateFunction.constant(1.0))
    scaled, _ = scaled_subset_model(model, (0, 1))
    np.testing.assert_allclose(scaled.kernel.P, [[1 / 3, 2 / 3], [5 / 6, 1 / 6]])
    assert scaled.constant_rate == pytest.approx(0.6)


def test_full_set_conditioning_is_trivial():
    model = complete_model(2, [0.5, 0.3, 0.2], lam=1.0)
    rep = conditional_equivalence(model, (0, 1, 2), 1.0, 20_000, seed=3, samples=20_000)
    assert rep["alpha"] == pytest.approx(1.0)
    assert rep["analytic_probability"] == pytest.approx(1.0)
    assert rep["empirical_probability"] == 1.0
    assert rep["pass"]


def test_conditional_equivalence_small_run():
    model = complete_model(2, [1 / 3] * 3, lam=2.0)
    rep = conditional_equivalence(model, (0, 1), 1.0, 60_000, seed=11, samples=20_000)
    assert rep["probability_pass"] and rep["pass"]
    assert set(rep) >= {"face", "alpha", "z_score", "ks", "conditioned_samples", "scaled_samples"}


def test_nonhomogeneous_masses_match_homogeneous():
    model = complete_model(2, [1 / 3] * 3)
    rate = RateFunction.polynomial([0.0, 2.0])
    out = nonhomogeneous_masses(model, rate, 1.0)
    assert out["inner"] == pytest.approx(0.080354497885, abs=1e-12)
    assert out["border"] == pytest.approx(1 - out["inner"], abs=1e-14)
    assert nonhomogeneous_masses(model, rate, 0.0, face=(1,)) == pytest.approx(1 / 3)


def test_nonhomogeneous_masses_mc():
    p = [0.5, 0.3, 0.2]
    model = complete_model(2, p)
    rate = RateFunction.piecewise([0.0, 0.5], [3.0, 0.5])
    exact = nonhomogeneous_masses(model, rate, 1.0)
    n = 200_000
    freq = nonhomogeneous_masses_mc(model, rate, 1.0, n, seed=21)
    for face, val in exact.items():
        if isinstance(face, tuple):
            assert abs(freq.get(face, 0.0) - val) <= 4 * math.sqrt(val * (1 - val) / n) + 1e-12
