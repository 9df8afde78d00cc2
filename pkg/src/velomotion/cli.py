"""Command-line driver: ``velomotion <command> --config PATH --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 a
verification or comparison did not pass.  Errors are reported on stderr as
one JSON object.
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analytic.masses import (
    border_mass,
    face_mass_complete,
    identity_exp_product,
    identity_subset_power_sum,
    vertex_mass,
)
from .analytic.densities import DensityValue, complete_density
from .comparison import histogram_comparison, mass_comparison
from .config import VERIFY_SUITES, ExperimentConfig
from .errors import ConfigError, MotionError, OutsideSupport
from .general_motion import nonminimal_density
from .geometry import build_projection, classify_point
from .io import write_csv, write_json
from .model import MotionModel
from .operators import closed_form_operator, determinant_operator, recursion_operator
from .pde import (
    PdeStencil,
    build_dth_order_operator,
    conditional_equivalence,
    convergence_table,
    residual_dth_order,
    residual_system,
)
from .simulator import HistogramSpec, histogram_rows, mc_summary, simulate_raw
from .stochastic import stream

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FAILED = 0, 2, 3, 4
ORDER_RANGE = (1.8, 2.2)
# spawn key of the random instances drawn by the identities suite
IDENTITY_STREAM = 1 << 20


def _bins(cfg, key, D, default):
    b = cfg.query.get(key, default)
    return b if isinstance(b, list) else [int(b)] * D


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig, out: Path, raw=False):
    model = cfg.build_model()
    t = cfg.t
    spec = HistogramSpec.for_support(model.velocities, t, _bins(cfg, "bins", model.D, 20))
    summary = mc_summary(model, t, cfg.replicas, spec, seed=cfg.seed, workers=cfg.workers)
    cols = ["kind", "face"] + [f"x{i + 1}" for i in range(model.D)] + ["count", "frequency"]
    write_csv(out / "summary.csv", "simulate", cfg, cols, histogram_rows(summary))
    write_json(out / "summary.json", "simulate", cfg, {
        "replicas": summary.replicas,
        "t": t,
        "faces": {"|".join(map(str, f)): c for f, c in summary.faces.items()},
        "full_dimensional_faces": sorted("|".join(map(str, f)) for f in summary.full_faces),
        "inner_count": summary.inner_count,
        "outside_grid": summary.outside_grid,
        "mean_occupation": summary.occupation_sum / summary.replicas,
        "histogram": {"lower": spec.lower, "upper": spec.upper, "bins": spec.bins},
    })
    if raw:
        ep = simulate_raw(model, t, cfg.replicas, seed=cfg.seed, workers=cfg.workers)
        n = model.size
        cols = ([f"x{i + 1}" for i in range(model.D)] + [f"T{h}" for h in range(n)]
                + [f"N{h}" for h in range(n)] + ["terminal"])
        rows = (list(ep.position[r]) + list(ep.occupation[r]) + [int(c) for c in ep.counts[r]]
                + [int(ep.terminal[r])] for r in range(ep.size))
        write_csv(out / "raw.csv", "simulate", cfg, cols, rows)
    return EXIT_OK


def _density_row(model: MotionModel, t, x, tol, form=None, terminal=None):
    try:
        if form is not None or terminal is not None:
            dv = _complete_row(model, t, x, tol, form or "series", terminal)
        else:
            dv = nonminimal_density(model, t, x, tol)
    except OutsideSupport as exc:
        kind = "outside" if "outside" in str(exc) else "boundary"
        return [0.0, kind, "", "none", 0, 0.0]
    region = dv.region
    face = "|".join(map(str, region.face)) if region is not None else ""
    return [float(dv.value), region.kind.value if region is not None else "", face,
            dv.formula, int(dv.terms), float(dv.remainder)]


def _complete_row(model: MotionModel, t, x, tol, form, terminal):
    # explicit form or terminal velocity: use the complete-motion closed form
    region = classify_point(model.velocities, x, t)
    if region.kind.value in ("outside", "boundary"):
        raise OutsideSupport(f"{list(x)} is {region.kind.value} at t={t}")
    if terminal is not None and terminal not in region.face:
        # a path ending on velocity ``terminal`` must have used it
        return DensityValue(0.0, region, "terminal-excluded")
    if region.kind.value == "vertex":
        return nonminimal_density(model, t, x, tol)
    return complete_density(model, t, x, form=form, face=region.face, terminal=terminal, tol=tol)


def cmd_density(cfg: ExperimentConfig, out: Path):
    model = cfg.build_model()
    t = cfg.t
    X = cfg.query_points(model.D)
    form, terminal = cfg.run.get("form"), cfg.query.get("terminal")
    cols = [f"x{i + 1}" for i in range(model.D)] + ["density", "region", "face", "formula", "terms", "remainder"]
    rows = [list(x) + _density_row(model, t, x, cfg.tol, form, terminal) for x in X]
    write_csv(out / "density.csv", "density", cfg, cols, rows)
    return EXIT_OK


def cmd_mass(cfg: ExperimentConfig, out: Path):
    model = cfg.build_model()
    t = cfg.t
    n = model.size
    rows = []
    extra = {}
    if model.kernel.kind == "complete" and model.rate is not None:
        Lam = model.cumulative_rate(t)
        p = model.kernel.initial
        for size in range(1, n + 1):
            for face in itertools.combinations(range(n), size):
                rows.append(["|".join(map(str, face)), face_mass_complete(p, Lam, face),
                             face_mass_complete(p, Lam, face, "alternating")])
        extra = {"Lambda": Lam, "border_mass": border_mass(p, Lam)}
        cols = ["face", "mass", "mass_alternating"]
    else:
        for h in range(n):
            rows.append([str(h), vertex_mass(model, t, h)])
        cols = ["face", "mass"]
    write_csv(out / "mass.csv", "mass", cfg, cols, rows)
    write_json(out / "mass.json", "mass", cfg, {"t": t, "total": float(sum(r[1] for r in rows)), **extra})
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out: Path):
    model = cfg.build_model()
    t = cfg.t
    spec = HistogramSpec.for_support(model.velocities, t, _bins(cfg, "compare_bins", model.D, 20))
    summary = mc_summary(model, t, cfg.replicas, spec, seed=cfg.seed, workers=cfg.workers)
    rows, report = histogram_comparison(model, summary, tol=max(cfg.tol, 1e-12))
    cols = [f"x{i + 1}" for i in range(model.D)] + ["expected", "observed", "z", "within"]
    write_csv(out / "compare.csv", "compare", cfg, cols, rows)
    mrows, mreport = mass_comparison(model, summary)
    write_csv(out / "compare_mass.csv", "compare", cfg, ["face", "mass", "frequency", "band", "within"], mrows)
    ok = report["pass"] and mreport["pass"]
    write_json(out / "compare.json", "compare", cfg, {"density": report, "masses": mreport, "pass": ok})
    return EXIT_OK if ok else EXIT_FAILED


def cmd_project(cfg: ExperimentConfig, out: Path):
    model = cfg.build_model()
    vs = model.velocities
    R = vs.state_space_dim()
    payload = {"D": vs.D, "velocities": vs.size, "state_space_dim": R, "minimal": vs.is_minimal}
    if R < vs.D:
        pm = build_projection(vs)
        payload["projection_rows"] = list(pm.rows)
        payload["projected_velocities"] = pm.project_velocities(vs).rows.tolist()
    if "points" in cfg.query:
        t = float(cfg.query.get("t", 1.0))
        pts = []
        for x in np.asarray(cfg.query["points"], dtype=float):
            rc = classify_point(vs, x, t)
            pts.append({"x": x, "kind": rc.kind.value, "face": list(rc.face),
                        "weights": None if rc.weights is None else np.asarray(rc.weights)})
        payload["points"] = pts
    write_json(out / "project.json", "project", cfg, payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification suites


def _verify_identities(cfg):
    rng = stream(cfg.seed, IDENTITY_STREAM)
    n = int(cfg.verify.get("instances", 1000))
    worst = 0.0
    for _ in range(n):
        H = int(rng.integers(1, 7))
        c = rng.uniform(0.05, 1.0, H)
        # the identity needs m >= 1: at m = 0 the left side is (-1)^(H+1)
        m = int(rng.integers(1, 13))
        lhs, rhs = identity_subset_power_sum(c, m)
        scale = max(1.0, sum(c) ** m * 2 ** H)
        worst = max(worst, abs(lhs - rhs) / (abs(rhs) if rhs else scale))
        lhs, rhs = identity_exp_product(c, float(rng.uniform(0.0, 3.0)))
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return {"instances": n, "max_relative_error": worst, "threshold": 1e-9, "pass": worst <= 1e-9}


def _verify_operator(cfg):
    max_D = int(cfg.verify.get("max_D", 4))
    rows = []
    for D in range(1, max_D + 1):
        weights = [Fraction(k + 1) for k in range(D + 1)]
        p = [w / sum(weights) for w in weights]
        lam = Fraction(3, 2)
        op = closed_form_operator(D, lam, p)
        rows.append({"D": D, "recursion_exact": op == recursion_operator(D, lam, p),
                     "determinant_exact": op == determinant_operator(D, lam, p), "order": op.order})
    return {"cases": rows, "pass": all(r["recursion_exact"] and r["determinant_exact"] for r in rows)}


def _default_pde_points(model):
    centre = np.full(model.size, 1.0 / model.size)
    pts = []
    for t in (1.0, 1.5):
        x = model.velocities.V @ (centre * t)
        pts.append((t, *x.tolist()))
    return pts


def _verify_pde(cfg, out):
    model = cfg.build_model()
    pts = cfg.verify.get("points") or _default_pde_points(model)
    stencil = PdeStencil(tuple(tuple(p) for p in pts), float(cfg.verify.get("spacing", 0.04)))
    levels = int(cfg.verify.get("levels", 4))
    tables = {"system": convergence_table(lambda s: max(residual_system(model, s)), stencil, levels)}
    complete = model.kernel.kind == "complete" and model.constant_rate is not None and model.velocities.is_canonical
    if complete:
        op = build_dth_order_operator(model.D, model.constant_rate, model.kernel.initial)
        leading = (model.D + 1,) + (0,) * model.D
        tables["scalar"] = convergence_table(lambda s: residual_dth_order(model, s), stencil, levels)
        tables["scalar_perturbed"] = convergence_table(
            lambda s: residual_dth_order(model, s, op.perturbed(leading, 1.01)), stencil, levels)
    rows = [(name, h, r, o) for name, tab in tables.items() for h, r, o in tab]
    write_csv(out / "pde_convergence.csv", "verify", cfg, ["equation", "spacing", "residual", "order"], rows)
    lo, hi = ORDER_RANGE
    verdict = {}
    for name, tab in tables.items():
        orders = [o for _, _, o in tab[1:]]
        if name.endswith("perturbed"):
            verdict[name] = {"orders": orders, "pass": bool(orders[-1] < 0.5)}
        else:
            verdict[name] = {"orders": orders, "pass": bool(all(lo <= o <= hi for o in orders))}
    return {"tables": verdict, "pass": all(v["pass"] for v in verdict.values())}


def _verify_conditioning(cfg):
    model = cfg.build_model()
    face = cfg.verify.get("face", cfg.query.get("face"))
    if face is None:
        raise ConfigError("verify.face", "missing required field for the conditioning suite")
    return conditional_equivalence(model, face, cfg.t, cfg.replicas, seed=cfg.seed,
                                   samples=int(cfg.verify.get("samples", 100_000)))


def cmd_verify(cfg: ExperimentConfig, out: Path):
    suites = cfg.verify.get("suites", list(VERIFY_SUITES))
    report = {}
    for name in suites:
        if name == "identities":
            report[name] = _verify_identities(cfg)
        elif name == "operator":
            report[name] = _verify_operator(cfg)
        elif name == "pde":
            report[name] = _verify_pde(cfg, out)
        else:
            report[name] = _verify_conditioning(cfg)
    ok = all(r["pass"] for r in report.values())
    write_json(out / "verify.json", "verify", cfg, {"suites": report, "pass": ok})
    return EXIT_OK if ok else EXIT_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "density": cmd_density,
    "mass": cmd_mass,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "project": cmd_project,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="velomotion", description="Finite-velocity random motions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config, or an artifact to regenerate")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
        if name == "simulate":
            p.add_argument("--raw", action="store_true", help="also write one row per replica")
    return parser


def _fail(code, exc):
    err = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        err["path"] = exc.path
        err["message"] = exc.message
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.replicas, args.tol, args.workers)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, raw=args.raw)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (MotionError, ValueError, ArithmeticError, OSError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
