"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
from __future__ import annotations

import filecmp
import itertools
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_joint_density, used_set_masses
from velomotion import cli
from velomotion.analytic import minimal_joint_density
from velomotion.analytic.densities import complete_integral, complete_series
from velomotion.analytic.masses import (
    face_masses_complete,
    identity_exp_product,
    identity_subset_power_sum,
)
from velomotion.comparison import histogram_comparison
from velomotion.general_motion import nonminimal_density
from velomotion.geometry import VelocitySet
from velomotion.model import MotionModel, complete_canonical, cyclic_canonical, cyclic_motion
from velomotion.operators import closed_form_operator, recursion_operator
from velomotion.pde import (
    PdeStencil,
    build_dth_order_operator,
    conditional_equivalence,
    convergence_table,
    residual_dth_order,
    residual_system,
)
from velomotion.simulator import HistogramSpec, binomial_band, mc_summary
from velomotion.stochastic import RateFunction, SwitchKernel, WaitingTimeModel, stream


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        return ok

    return emit


def test_criterion_1_mass_partition(report):
    start = time.perf_counter()
    p = np.full(3, 1.0 / 3.0)
    masses = face_masses_complete(p, 1.0)
    oracle = used_set_masses(p, 1.0)
    expected = {1: 0.171139, 2: 0.135409, 3: 0.080355}
    values_ok = all(abs(m - expected[len(f)]) <= 1e-6 for f, m in masses.items())
    oracle_ok = all(abs(masses[f] - oracle[f]) <= 1e-12 for f in masses)
    total = sum(masses.values())
    model = complete_canonical(2, p, lam=1.0)
    summary = mc_summary(model, 1.0, 10**6, seed=20240601)
    worst = max(abs(summary.face_frequency(f) - m) / binomial_band(m, summary.replicas, 1.0)
                for f, m in masses.items())
    elapsed = time.perf_counter() - start
    ok = values_ok and oracle_ok and abs(total - 1.0) <= 1e-9 and worst <= 3.0 and elapsed < 30
    shown = ", ".join(f"{v:.6f}" for v in sorted({round(float(m), 6) for m in masses.values()}))
    report(1, ok, f"masses {shown}, sum-1={total - 1:.1e}, "
                  f"max MC |z|={worst:.2f} at 1e6 replicas, {elapsed:.1f}s")
    assert ok


def test_criterion_2_series_integral(report):
    start = time.perf_counter()
    rng = stream(2, 0)
    worst = 0.0
    count = 0
    for D in (1, 2, 3):
        p = rng.dirichlet(np.full(D + 1, 3.0))
        for lt in (0.5, 1.0, 3.0):
            lam = 1.0 + float(rng.uniform())
            t = lt / lam
            T = rng.dirichlet(np.ones(D + 1), size=100) * t
            series = complete_series(lam, p, T)[0]
            for i in range(100):
                integral = complete_integral(lam, p, T[i])[0]
                worst = max(worst, abs(series[i] - integral) / abs(series[i]))
                count += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    report(2, ok, f"{count} points, max relative gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def _oracle_cases():
    V1 = np.array([[0.0, 1.0]])
    V2 = np.array([[0.0, 1.0, -0.5], [0.0, 0.3, 1.0]])
    return [
        (V1, SwitchKernel.complete([0.4, 0.6]), WaitingTimeModel.exponential([1.3, 0.7]),
         [("exp", 1.3, None), ("exp", 0.7, None)]),
        (V1, SwitchKernel.cyclic(2, [0.25, 0.75]), WaitingTimeModel.gamma([2, 3], [1.5, 2.0]),
         [("gamma", 2, 1.5), ("gamma", 3, 2.0)]),
        (V2, SwitchKernel.complete([0.5, 0.3, 0.2]), WaitingTimeModel.exponential([1.0, 2.0, 3.0]),
         [("exp", 1.0, None), ("exp", 2.0, None), ("exp", 3.0, None)]),
        (V2, SwitchKernel.cyclic(3, [0.5, 0.3, 0.2]), WaitingTimeModel.gamma([2, 2, 3], [1.0, 2.0, 3.0]),
         [("gamma", 2, 1.0), ("gamma", 2, 2.0), ("gamma", 3, 3.0)]),
        (V2, SwitchKernel.markov([0.2, 0.3, 0.5], [[0.1, 0.6, 0.3], [0.5, 0.0, 0.5], [0.3, 0.3, 0.4]]),
         WaitingTimeModel.gamma([2, 1, 2], [2.0, 1.0, 1.5]),
         [("gamma", 2, 2.0), ("gamma", 1, 1.0), ("gamma", 2, 1.5)]),
    ]


def test_criterion_3_master_formula_oracle(report):
    start = time.perf_counter()
    worst = 0.0
    checked = 0
    for V, kernel, waits, laws in _oracle_cases():
        n = V.shape[1]
        model = MotionModel(VelocitySet(V), kernel, waits=waits)
        t = 1.2
        x = V @ np.array([0.45, 0.55] if n == 2 else [0.3, 0.45, 0.25]) * t
        for total in range(n, 7):
            for counts in itertools.product(range(1, total), repeat=n):
                if sum(counts) != total:
                    continue
                for k in range(n):
                    got = minimal_joint_density(model, t, x, counts, k).value
                    ref = brute_joint_density(V, kernel.initial, kernel.P, laws, t, x, counts, k)
                    if ref == 0.0:
                        assert got == 0.0
                        continue
                    worst = max(worst, abs(got - ref) / ref)
                    checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 300
    report(3, ok, f"{checked} (counts, terminal) cases, max relative gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_identities(report):
    rng = stream(4, 0)
    worst_rel = 0.0
    worst_zero = 0.0
    zero_cases = 0
    for _ in range(1000):
        H = int(rng.integers(1, 7))
        c = rng.uniform(-1.0, 1.0, H) if rng.uniform() < 0.3 else rng.uniform(0.05, 2.0, H)
        m = int(rng.integers(1, 13))
        lhs, rhs = identity_subset_power_sum(c, m)
        scale = max(1.0, float(np.sum(np.abs(c))) ** m) * 2 ** H
        if m < H:
            zero_cases += 1
            worst_zero = max(worst_zero, abs(lhs) / scale)
        elif rhs != 0.0:
            worst_rel = max(worst_rel, abs(lhs - rhs) / max(abs(rhs), 1e-300))
        beta = float(rng.uniform(-2.0, 3.0))
        lhs, rhs = identity_exp_product(c, beta)
        worst_rel = max(worst_rel, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    ok = worst_rel <= 1e-9 and worst_zero < 1e-9 and zero_cases > 0
    report(4, ok, f"1000 instances, max relative gap {worst_rel:.2e}, "
                  f"{zero_cases} m<H cases with max |lhs|/scale {worst_zero:.1e}")
    assert ok


def test_criterion_5_cyclic_density_vs_mc(report):
    start = time.perf_counter()
    lines = []
    ok = True
    for model, bins in ((cyclic_canonical(1, [1.0, 2.5], [0.4, 0.6]), 40),
                        (cyclic_canonical(2, [1.0, 2.0, 3.0], [0.5, 0.3, 0.2]), 20)):
        spec = HistogramSpec.for_support(model.velocities, 1.0, bins)
        summary = mc_summary(model, 1.0, 10**6, spec, seed=505 + model.D)
        _, rep = histogram_comparison(model, summary)
        ok &= rep["pass"]
        lines.append(f"D={model.D}: {rep['value']:.4f} of {rep['bins']} bins within 3 sigma")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 120
    report(5, ok, "; ".join(lines) + f", {elapsed:.1f}s")
    assert ok


def _orders(table):
    return [o for _, _, o in table[1:]]


def test_criterion_6_pde_residuals(report):
    lo, hi = 1.8, 2.2
    found = []
    ok = True
    models = [complete_canonical(1, [0.35, 0.65], lam=1.3), complete_canonical(2, [0.5, 0.3, 0.2], lam=1.1)]
    for model in models:
        D = model.D
        pts = ((1.0,) + (0.4 / D,) * D, (1.4,) + (0.35,) * D)
        st = PdeStencil(pts, 0.04)
        system = _orders(convergence_table(lambda s: max(residual_system(model, s)), st, 4))
        scalar = _orders(convergence_table(lambda s: residual_dth_order(model, s), st, 4))
        op = build_dth_order_operator(D, model.constant_rate, model.kernel.initial)
        bad = op.perturbed((D + 1,) + (0,) * D, 1.01)
        control = _orders(convergence_table(lambda s: residual_dth_order(model, s, bad), st, 4))
        ok &= all(lo <= o <= hi for o in system + scalar) and all(abs(o) < 0.5 for o in control)
        found.append(f"D={D} system {min(system):.3f}-{max(system):.3f}, scalar {min(scalar):.3f}-{max(scalar):.3f}, "
                     f"control {max(control):.3f}")
    cyc = cyclic_canonical(2, [1.0, 2.0, 3.0], [0.5, 0.3, 0.2])
    cyc_orders = _orders(convergence_table(lambda s: max(residual_system(cyc, s)),
                                           PdeStencil(((1.0, 0.3, 0.3),), 0.04), 4))
    ok &= all(lo <= o <= hi for o in cyc_orders)
    exact = True
    for D in range(1, 5):
        w = [Fraction(k + 2) for k in range(D + 1)]
        p = [v / sum(w) for v in w]
        exact &= closed_form_operator(D, Fraction(7, 5), p) == recursion_operator(D, Fraction(7, 5), p)
    ok &= exact
    report(6, ok, "; ".join(found) + f"; cyclic D=2 system {min(cyc_orders):.3f}-{max(cyc_orders):.3f}; "
                  f"operator == recursion exactly for D<=4: {exact}")
    assert ok


def test_criterion_7_conditioning(report):
    start = time.perf_counter()
    p = np.full(3, 1.0 / 3.0)
    cases = [("constant rate 2", complete_canonical(2, p, lam=2.0), 0.342278),
             ("rate 2s", complete_canonical(2, p, rate=RateFunction.polynomial([0.0, 2.0])), None)]
    ok = True
    parts = []
    for name, model, quoted in cases:
        rep = conditional_equivalence(model, (0, 1), 1.0, 10**6, seed=707, samples=100_000)
        if quoted is not None:
            ok &= abs(rep["analytic_probability"] - quoted) <= 1e-6
        ok &= rep["pass"] and rep["conditioned_samples"] == 100_000
        parts.append(f"{name}: P={rep['analytic_probability']:.6f} z={rep['z_score']:.2f} "
                     f"KS p={min(k['pvalue'] for k in rep['ks']):.3f}")
    report(7, ok, "; ".join(parts) + f", {time.perf_counter() - start:.1f}s")
    assert ok


def _example_model(lam, p):
    return cyclic_motion([[0.0], [1.0], [-1.0]], lam, p)


def test_criterion_8_nonminimal_density(report):
    start = time.perf_counter()
    lam = np.array([1.0, 2.0, 3.0])
    p = np.array([0.5, 0.3, 0.2])
    t = 1.0
    model = _example_model(lam, p)
    worst = 0.0
    for x in np.linspace(0.05, 0.95, 19):
        parts = {S: v for S, v, _ in nonminimal_density(model, t, [x]).breakdown}
        first = p[0] * lam[0] * math.exp(-lam[0] * (t - x) - lam[1] * x)
        second = 0.5 * p[1] * lam[1] * math.exp(-lam[1] * (t + x) / 2 - lam[2] * (t - x) / 2)
        worst = max(worst, abs(parts[(0, 1)] / first - 1), abs(parts[(1, 2)] / second - 1))
    spec = HistogramSpec.for_support(model.velocities, t, 40)
    summary = mc_summary(model, t, 10**6, spec, seed=808)
    _, rep = histogram_comparison(model, summary)
    ok = worst <= 1e-12 and rep["pass"]
    report(8, ok, f"closed terms max relative gap {worst:.1e}; {rep['value']:.4f} of {rep['bins']} bins "
                  f"within 3 sigma at 1e6 replicas, {time.perf_counter() - start:.1f}s")
    assert ok


CONFIG = """{
  "model": {"velocities": [[0, 0], [1, 0], [0, 1]],
            "kernel": {"kind": "complete", "p": [0.5, 0.25, 0.25]},
            "rate": {"kind": "constant", "value": 1.5}},
  "query": {"t": 1.0, "bins": 8, "compare_bins": 8, "face": [0, 1],
            "points": [[0.3, 0.3], [0.5, 0.0], [0.0, 0.0]],
            "grid": {"lower": [0.05, 0.05], "upper": [0.45, 0.45], "n": [3, 3]}},
  "run": {"replicas": 140000, "seed": 99},
  "verify": {"suites": ["identities", "operator", "conditioning"], "instances": 50, "samples": 20000}
}"""


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


def test_criterion_9_cli_determinism(report, tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(CONFIG)
    commands = ["simulate", "density", "mass", "compare", "verify", "project"]
    runs = {}
    for workers in (1, 3):
        out = tmp_path / f"w{workers}"
        for cmd in commands:
            extra = ["--raw"] if cmd == "simulate" else []
            code = cli.main([cmd, "--config", str(cfg), "--out", str(out), "--workers", str(workers)] + extra)
            assert code == 0, cmd
        runs[workers] = _snapshot(out)
    same_workers = runs[1] == runs[3]
    # regenerate every artifact from its own embedded configuration
    regen_ok = True
    for name in sorted(runs[1]):
        if name.endswith(".csv") and name in ("raw.csv", "pde_convergence.csv"):
            continue
        cmd = {"summary": "simulate", "density": "density", "mass": "mass", "compare": "compare",
               "compare_mass": "compare", "verify": "verify", "project": "project"}[name.split(".")[0]]
        out = tmp_path / f"regen_{name}"
        extra = ["--raw"] if cmd == "simulate" else []
        assert cli.main([cmd, "--config", str(tmp_path / "w1" / name), "--out", str(out)] + extra) == 0
        regen_ok &= filecmp.cmp(tmp_path / "w1" / name, out / name, shallow=False)
    ok = same_workers and regen_ok
    report(9, ok, f"{len(runs[1])} artifacts identical for 1 and 3 workers: {same_workers}; "
                  f"regenerated from embedded config: {regen_ok}")
    assert ok
