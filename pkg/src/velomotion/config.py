"""Experiment configuration: parsing, validation and model construction.

A configuration is a JSON document with sections ``model``, ``query``, ``run``
and (for ``verify``) ``verify``; the field reference is in ``docs/config.md``.
Validation happens before any computation and every rejection names the
offending field path.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MotionError
from .geometry import VelocitySet
from .model import MotionModel
from .stochastic import RateFunction, SwitchKernel, WaitingTimeModel

PROB_TOL = 1e-12
HEADER_CONFIG = "# config: "

_SECTIONS = {"model", "query", "run", "verify"}
_RUN_DEFAULTS = {"replicas": 100_000, "seed": 0, "tol": 1e-13, "workers": 1}
# fields that change how a run executes but never what it produces
_EXECUTION_ONLY = ("workers",)


def _number(value, path, *, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if integer and int(value) != value:
        raise ConfigError(path, "must be an integer")
    if positive and value <= 0:
        raise ConfigError(path, "must be > 0")
    if nonneg and value < 0:
        raise ConfigError(path, "must be >= 0")
    return int(value) if integer else float(value)


def _vector(value, path, length=None, **kw):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list")
    if length is not None and len(value) != length:
        raise ConfigError(path, f"expected {length} entries, got {len(value)}")
    return [_number(v, f"{path}[{i}]", **kw) for i, v in enumerate(value)]


def _matrix(value, path, cols=None):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of rows")
    rows = []
    for i, row in enumerate(value):
        r = _vector(row, f"{path}[{i}]")
        if cols is None:
            cols = len(r)
        elif len(r) != cols:
            raise ConfigError(f"{path}[{i}]", f"expected {cols} entries, got {len(r)}")
        rows.append(r)
    return rows


def _probability(value, path, length):
    p = _vector(value, path, length, nonneg=True)
    if abs(sum(p) - 1.0) > PROB_TOL:
        raise ConfigError(path, f"probabilities sum to {sum(p)!r}, not 1")
    return p


def _mapping(value, path, allowed, required=()):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")
    for key in required:
        if key not in value:
            raise ConfigError(f"{path}.{key}", "missing required field")
    return value


def _validate_kernel(k, n):
    path = "model.kernel"
    kind = k.get("kind") if isinstance(k, dict) else None
    if kind == "complete":
        _mapping(k, path, {"kind", "p"}, ("p",))
        _probability(k["p"], f"{path}.p", n)
    elif kind in ("cyclic", "orthogonal"):
        _mapping(k, path, {"kind", "initial"})
        if kind == "orthogonal" and n != 4:
            raise ConfigError(f"{path}.kind", "orthogonal kernels need four velocities")
        if "initial" in k:
            _probability(k["initial"], f"{path}.initial", n)
    elif kind == "markov":
        _mapping(k, path, {"kind", "initial", "P"}, ("initial", "P"))
        _probability(k["initial"], f"{path}.initial", n)
        P = _matrix(k["P"], f"{path}.P", n)
        if len(P) != n:
            raise ConfigError(f"{path}.P", f"expected {n} rows, got {len(P)}")
        for i, row in enumerate(k["P"]):
            _probability(row, f"{path}.P[{i}]", n)
    else:
        _mapping(k, path, {"kind", "p", "initial", "P"}, ("kind",))
        raise ConfigError(f"{path}.kind", f"unknown kernel kind {kind!r}")


def _validate_waits(w, n):
    path = "model.waits"
    kind = w.get("kind") if isinstance(w, dict) else None
    if kind == "exponential":
        _mapping(w, path, {"kind", "rates"}, ("rates",))
        _vector(w["rates"], f"{path}.rates", n, positive=True)
    elif kind == "gamma":
        _mapping(w, path, {"kind", "shapes", "rates"}, ("shapes", "rates"))
        _vector(w["shapes"], f"{path}.shapes", n, positive=True)
        _vector(w["rates"], f"{path}.rates", n, positive=True)
    elif kind == "deterministic":
        _mapping(w, path, {"kind", "durations"}, ("durations",))
        _vector(w["durations"], f"{path}.durations", n, positive=True)
    else:
        _mapping(w, path, {"kind", "rates", "shapes", "durations"}, ("kind",))
        raise ConfigError(f"{path}.kind", f"unknown waiting-time kind {kind!r}")


def _validate_rate(r):
    path = "model.rate"
    kind = r.get("kind") if isinstance(r, dict) else None
    if kind == "constant":
        _mapping(r, path, {"kind", "value"}, ("value",))
        _number(r["value"], f"{path}.value", nonneg=True)
    elif kind == "piecewise":
        _mapping(r, path, {"kind", "breakpoints", "values"}, ("breakpoints", "values"))
        b = _vector(r["breakpoints"], f"{path}.breakpoints", nonneg=True)
        _vector(r["values"], f"{path}.values", len(b), nonneg=True)
        if b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError(f"{path}.breakpoints", "must start at 0 and increase strictly")
    elif kind == "polynomial":
        _mapping(r, path, {"kind", "coefficients"}, ("coefficients",))
        _vector(r["coefficients"], f"{path}.coefficients")
    else:
        _mapping(r, path, {"kind", "value", "breakpoints", "values", "coefficients"}, ("kind",))
        raise ConfigError(f"{path}.kind", f"unknown rate kind {kind!r}")


def _validate_query(q, D):
    path = "query"
    _mapping(q, path, {"t", "points", "grid", "bins", "face", "terminal", "compare_bins"})
    if "t" in q:
        _number(q["t"], f"{path}.t", positive=True)
    if "points" in q:
        _matrix(q["points"], f"{path}.points", D)
    if "grid" in q:
        g = _mapping(q["grid"], f"{path}.grid", {"lower", "upper", "n"}, ("lower", "upper", "n"))
        lo = _vector(g["lower"], f"{path}.grid.lower", D)
        hi = _vector(g["upper"], f"{path}.grid.upper", D)
        _vector(g["n"], f"{path}.grid.n", D, positive=True, integer=True)
        for i, (a, b) in enumerate(zip(lo, hi)):
            if b < a:
                raise ConfigError(f"{path}.grid.upper[{i}]", "must be >= lower")
    for key in ("bins", "compare_bins"):
        if key in q:
            if isinstance(q[key], list):
                _vector(q[key], f"{path}.{key}", D, positive=True, integer=True)
            else:
                _number(q[key], f"{path}.{key}", positive=True, integer=True)
    if "face" in q:
        f = _vector(q["face"], f"{path}.face", nonneg=True, integer=True)
        if len(set(f)) != len(f):
            raise ConfigError(f"{path}.face", "indices must be distinct")
    if "terminal" in q:
        _number(q["terminal"], f"{path}.terminal", nonneg=True, integer=True)


def _validate_run(r):
    path = "run"
    _mapping(r, path, {"replicas", "seed", "tol", "workers", "form"})
    if "replicas" in r:
        _number(r["replicas"], f"{path}.replicas", positive=True, integer=True)
    if "seed" in r:
        _number(r["seed"], f"{path}.seed", nonneg=True, integer=True)
    if "tol" in r:
        _number(r["tol"], f"{path}.tol", positive=True)
    if "workers" in r:
        _number(r["workers"], f"{path}.workers", positive=True, integer=True)
    if "form" in r and r["form"] not in ("series", "integral"):
        raise ConfigError(f"{path}.form", "must be 'series' or 'integral'")


VERIFY_SUITES = ("identities", "operator", "pde", "conditioning")


def _validate_verify(v):
    path = "verify"
    _mapping(v, path, {"suites", "instances", "points", "spacing", "levels", "face", "samples", "max_D"})
    if "suites" in v:
        if not isinstance(v["suites"], list) or not v["suites"]:
            raise ConfigError(f"{path}.suites", "expected a non-empty list")
        for i, s in enumerate(v["suites"]):
            if s not in VERIFY_SUITES:
                raise ConfigError(f"{path}.suites[{i}]", f"unknown suite {s!r}")
    for key in ("instances", "levels", "samples", "max_D"):
        if key in v:
            _number(v[key], f"{path}.{key}", positive=True, integer=True)
    if "spacing" in v:
        _number(v["spacing"], f"{path}.spacing", positive=True)
    if "points" in v:
        _matrix(v["points"], f"{path}.points")
    if "face" in v:
        _vector(v["face"], f"{path}.face", nonneg=True, integer=True)


def validate(doc):
    """Check a configuration document; raises :class:`ConfigError`."""
    _mapping(doc, "config", _SECTIONS, ("model",))
    m = _mapping(doc["model"], "model", {"velocities", "kernel", "waits", "rate"}, ("velocities", "kernel"))
    V = _matrix(m["velocities"], "model.velocities")
    n = len(V)
    if ("waits" in m) == ("rate" in m):
        raise ConfigError("model", "give exactly one of 'waits' or 'rate'")
    _validate_kernel(m["kernel"], n)
    if "waits" in m:
        _validate_waits(m["waits"], n)
    else:
        _validate_rate(m["rate"])
    _validate_query(doc.get("query", {}), len(V[0]))
    _validate_run(doc.get("run", {}))
    _validate_verify(doc.get("verify", {}))
    if "face" in doc.get("query", {}):
        for i, h in enumerate(doc["query"]["face"]):
            if h >= n:
                raise ConfigError(f"query.face[{i}]", f"index {h} out of range for {n} velocities")
    if "terminal" in doc.get("query", {}) and doc["query"]["terminal"] >= n:
        raise ConfigError("query.terminal", f"index out of range for {n} velocities")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration document."""

    doc: dict

    @classmethod
    def from_dict(cls, doc):
        doc = copy.deepcopy(doc)
        validate(doc)
        run = dict(_RUN_DEFAULTS)
        run.update(doc.get("run", {}))
        doc["run"] = run
        doc.setdefault("query", {})
        return cls(doc)

    @classmethod
    def load(cls, path):
        """Read a JSON config, or recover the embedded config of an artifact."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        return cls.from_dict(parse_config_text(text))

    def with_overrides(self, seed=None, replicas=None, tol=None, workers=None):
        doc = copy.deepcopy(self.doc)
        for key, val in (("seed", seed), ("replicas", replicas), ("tol", tol), ("workers", workers)):
            if val is not None:
                doc["run"][key] = val
        return ExperimentConfig.from_dict(doc)

    # accessors ---------------------------------------------------------------
    @property
    def run(self):
        return self.doc["run"]

    @property
    def query(self):
        return self.doc["query"]

    @property
    def verify(self):
        return self.doc.get("verify", {})

    @property
    def seed(self):
        return int(self.run["seed"])

    @property
    def replicas(self):
        return int(self.run["replicas"])

    @property
    def tol(self):
        return float(self.run["tol"])

    @property
    def workers(self):
        return int(self.run["workers"])

    @property
    def t(self):
        if "t" not in self.query:
            raise ConfigError("query.t", "missing required field")
        return float(self.query["t"])

    def reproducible_doc(self):
        """The document without execution-only fields (embedded in artifacts)."""
        doc = copy.deepcopy(self.doc)
        for key in _EXECUTION_ONLY:
            doc["run"].pop(key, None)
        return doc

    def header_json(self):
        return json.dumps(self.reproducible_doc(), sort_keys=True, separators=(",", ":"))

    # model -------------------------------------------------------------------
    def build_model(self) -> MotionModel:
        m = self.doc["model"]
        try:
            vs = VelocitySet.from_rows(m["velocities"])
        except MotionError as exc:
            raise ConfigError("model.velocities", str(exc)) from None
        n = vs.size
        k = m["kernel"]
        try:
            if k["kind"] == "complete":
                kernel = SwitchKernel.complete(k["p"])
            elif k["kind"] == "cyclic":
                kernel = SwitchKernel.cyclic(n, k.get("initial"))
            elif k["kind"] == "orthogonal":
                kernel = SwitchKernel.orthogonal(k.get("initial"))
            else:
                kernel = SwitchKernel.markov(k["initial"], k["P"])
        except ValueError as exc:
            raise ConfigError("model.kernel", str(exc)) from None
        waits = rate = None
        if "waits" in m:
            w = m["waits"]
            if w["kind"] == "exponential":
                waits = WaitingTimeModel.exponential(w["rates"])
            elif w["kind"] == "gamma":
                waits = WaitingTimeModel.gamma(w["shapes"], w["rates"])
            else:
                waits = WaitingTimeModel.deterministic(w["durations"])
        else:
            r = m["rate"]
            try:
                if r["kind"] == "constant":
                    rate = RateFunction.constant(r["value"])
                elif r["kind"] == "piecewise":
                    rate = RateFunction.piecewise(r["breakpoints"], r["values"])
                else:
                    rate = RateFunction.polynomial(r["coefficients"])
            except ValueError as exc:
                raise ConfigError("model.rate", str(exc)) from None
        return MotionModel(vs, kernel, waits=waits, rate=rate)

    def query_points(self, D):
        """Explicit points followed by the grid points (row-major), as an ``(n, D)`` array."""
        pts = []
        if "points" in self.query:
            pts.append(np.asarray(self.query["points"], dtype=float).reshape(-1, D))
        if "grid" in self.query:
            g = self.query["grid"]
            axes = [np.linspace(a, b, int(k)) for a, b, k in zip(g["lower"], g["upper"], g["n"])]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts.append(np.stack([a.ravel() for a in mesh], axis=1))
        if not pts:
            raise ConfigError("query", "give 'points' or 'grid'")
        return np.vstack(pts)


def parse_config_text(text):
    """JSON config, or the ``# config:`` header line of a CSV artifact, or the
    ``config`` member of a JSON artifact."""
    stripped = text.lstrip()
    if stripped.startswith("#"):
        for line in stripped.splitlines():
            if line.startswith(HEADER_CONFIG):
                return _loads(line[len(HEADER_CONFIG):])
            if not line.startswith("#"):
                break
        raise ConfigError("config", "artifact has no embedded config header")
    doc = _loads(text)
    if isinstance(doc, dict) and "config" in doc and "model" not in doc:
        return doc["config"]
    return doc


def _loads(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
