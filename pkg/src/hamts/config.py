"""Problem configuration: JSON document -> validated time scale, coefficients and boundary pair.

Every validation failure is raised as :class:`ConfigError` carrying the dotted
path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (BoundaryError, CoefficientError, ConfigError, EvaluationError,
                     ExprSyntaxError, HamtsError, TimeScaleError)
from .exprfield import CoefficientField, build_coefficients, eval_expr, from_sturm_liouville, is_constant, parse_expr
from .regular import BoundaryPair, validate_boundary
from .timescale import TimeScale, build_timescale, cell_from_dict, make_grid

_MISSING = object()


@dataclass(frozen=True)
class EigSettings:
    b: float
    lambda_lo: float
    lambda_hi: float
    max_count: int | None = None


@dataclass(frozen=True)
class SolverSettings:
    rtol: float = 1e-10
    h: float | None = None
    scan_points: int = 2001
    b_list: tuple = ()
    lambda_list: tuple = (1j, -1j)
    lambda_plus: complex = 1j
    lambda_minus: complex = -1j
    eig: EigSettings | None = None


@dataclass(frozen=True)
class ProblemConfig:
    name: str
    source: str
    digest: str
    raw: dict
    ts: TimeScale
    field: CoefficientField
    bp: BoundaryPair
    solver: SolverSettings
    output_format: str = "json"
    output_path: str | None = None

    @property
    def d(self) -> int:
        return self.field.d


def _get(obj: dict, key: str, path: str, default=_MISSING):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    if key not in obj:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}" if path else key, "missing")
        return default
    return obj[key]


def parse_complex(value, path: str) -> complex:
    """Number, ``{"re": .., "im": ..}`` or constant expression string such as ``"1/sqrt(2)"`` or ``"-i"``."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, dict):
        try:
            return complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(path, f"bad complex number {value!r}") from exc
    if isinstance(value, str):
        try:
            e = parse_expr(value)
        except ExprSyntaxError as exc:
            raise ConfigError(path, str(exc)) from exc
        if not is_constant(e):
            raise ConfigError(path, f"expected a constant, got {value!r}")
        try:
            return complex(eval_expr(e, 0.0))
        except EvaluationError as exc:
            raise ConfigError(path, str(exc)) from exc
    raise ConfigError(path, f"expected a number, got {type(value).__name__}")


def parse_real(value, path: str) -> float:
    z = parse_complex(value, path)
    if z.imag != 0 or not math.isfinite(z.real):
        raise ConfigError(path, f"expected a finite real number, got {value!r}")
    return z.real


def _parse_timescale(raw, force: bool) -> TimeScale:
    cells_raw = _get(raw, "cells", "timescale")
    if not isinstance(cells_raw, list) or not cells_raw:
        raise ConfigError("timescale.cells", "expected a non-empty list of cells")
    cells = []
    for i, c in enumerate(cells_raw):
        try:
            cells.append(cell_from_dict(c))
        except (TimeScaleError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"timescale.cells[{i}]", str(exc)) from exc
    t0 = parse_real(_get(raw, "t0", "timescale", cells[0].first), "timescale.t0")
    horizon = _get(raw, "horizon", "timescale", None)
    horizon = None if horizon is None else parse_real(horizon, "timescale.horizon")
    try:
        return build_timescale(cells, t0, horizon, force=bool(raw.get("force", force)))
    except TimeScaleError as exc:
        raise ConfigError("timescale", str(exc)) from exc


def _parse_matrix_entries(m, d, path):
    if d == 1 and not isinstance(m, list):
        m = [[m]]
    if d == 1 and isinstance(m, list) and len(m) == 1 and not isinstance(m[0], list):
        m = [m]
    if not isinstance(m, list) or len(m) != d or any(not isinstance(r, list) or len(r) != d for r in m):
        raise ConfigError(path, f"expected a {d}x{d} row-major array of expressions")
    out = []
    for i, row in enumerate(m):
        r = []
        for j, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (str, int, float)):
                raise ConfigError(f"{path}[{i}][{j}]", f"expected an expression string or number, got {x!r}")
            try:
                r.append(parse_expr(x))
            except ExprSyntaxError as exc:
                raise ConfigError(f"{path}[{i}][{j}]", str(exc)) from exc
        out.append(r)
    return out


def _coefficient_path(msg: str) -> str:
    for name in ("W1", "W2", "A", "B", "C"):
        if msg.startswith(name + " ") or msg.startswith(f"weight {name} ") or msg.startswith(name + ":"):
            return f"coefficients.{name}"
    if "nu*A" in msg:
        return "coefficients.A"
    return "coefficients"


def _parse_field(raw, ts, h) -> CoefficientField:
    grid = make_grid(ts, ts.rho(ts.t0), ts.horizon, h)
    if "sturm_liouville" in raw:
        sl = raw["sturm_liouville"]
        n = _get(sl, "n", "sturm_liouville")
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("sturm_liouville.n", "expected a positive integer")
        p = _get(sl, "p", "sturm_liouville")
        if not isinstance(p, list) or len(p) != n + 1:
            raise ConfigError("sturm_liouville.p", f"expected a list of {n + 1} expressions p0..p{n}")
        try:
            ps = [parse_expr(x) for x in p]
            weight = parse_expr(sl.get("weight", "1"))
        except ExprSyntaxError as exc:
            raise ConfigError("sturm_liouville.p", str(exc)) from exc
        if "d" in raw and raw["d"] != n:
            raise ConfigError("d", f"dimension must equal sturm_liouville.n={n}")
        try:
            return from_sturm_liouville(n, ps, grid, weight=weight)
        except (CoefficientError, EvaluationError) as exc:
            raise ConfigError("sturm_liouville", str(exc)) from exc
    d = _get(raw, "d", "")
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise ConfigError("d", "expected a positive integer")
    coeffs = _get(raw, "coefficients", "")
    mats = {}
    for name in CoefficientField.NAMES:
        m = _get(coeffs, name, "coefficients")
        mats[name] = _parse_matrix_entries(m, d, f"coefficients.{name}")
    try:
        return build_coefficients(d, *(mats[n] for n in CoefficientField.NAMES), sample_grid=grid)
    except CoefficientError as exc:
        raise ConfigError(_coefficient_path(str(exc)), str(exc)) from exc
    except EvaluationError as exc:
        raise ConfigError("coefficients", str(exc)) from exc


def _parse_boundary_matrix(v, d, path):
    if isinstance(v, list) and v and not isinstance(v[0], list):
        v = [v]
    if not isinstance(v, list) or len(v) != d or any(not isinstance(r, list) or len(r) != 2 * d for r in v):
        raise ConfigError(path, f"expected a {d}x{2 * d} array")
    return np.array([[parse_complex(x, f"{path}[{i}][{j}]") for j, x in enumerate(r)]
                     for i, r in enumerate(v)], dtype=complex)


def _parse_lambda_list(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list")
    return tuple(parse_complex(x, f"{path}[{i}]") for i, x in enumerate(v))


def _parse_solver(raw, ts) -> SolverSettings:
    s = raw.get("solver", {})
    if not isinstance(s, dict):
        raise ConfigError("solver", "expected an object")
    rtol = parse_real(s.get("rtol", 1e-10), "solver.rtol")
    if not 0 < rtol < 1:
        raise ConfigError("solver.rtol", "must lie in (0, 1)")
    h = s.get("h")
    h = None if h is None else parse_real(h, "solver.h")
    if h is not None and h <= 0:
        raise ConfigError("solver.h", "must be positive")
    scan = s.get("scan_points", 2001)
    if isinstance(scan, bool) or not isinstance(scan, int) or scan < 3:
        raise ConfigError("solver.scan_points", "expected an integer >= 3")
    b_list = tuple(parse_real(x, f"solver.b_list[{i}]") for i, x in enumerate(s.get("b_list", [])))
    for i, b in enumerate(b_list):
        if b not in ts:
            raise ConfigError(f"solver.b_list[{i}]", f"b={b!r} is not a point of the time scale")
        if i and b <= b_list[i - 1]:
            raise ConfigError(f"solver.b_list[{i}]", "b_list must be strictly increasing")
    lam_list = _parse_lambda_list(s.get("lambda_list", ["i", "-i"]), "solver.lambda_list")
    lp = parse_complex(s.get("lambda_plus", "i"), "solver.lambda_plus")
    lm = parse_complex(s.get("lambda_minus", "-i"), "solver.lambda_minus")
    if lp.imag <= 0:
        raise ConfigError("solver.lambda_plus", "must lie in the upper half plane")
    if lm.imag >= 0:
        raise ConfigError("solver.lambda_minus", "must lie in the lower half plane")
    eig = None
    if "eig" in s:
        e = s["eig"]
        b = parse_real(_get(e, "b", "solver.eig"), "solver.eig.b")
        if b not in ts:
            raise ConfigError("solver.eig.b", f"b={b!r} is not a point of the time scale")
        lo = parse_real(_get(e, "lambda_lo", "solver.eig"), "solver.eig.lambda_lo")
        hi = parse_real(_get(e, "lambda_hi", "solver.eig"), "solver.eig.lambda_hi")
        mc = e.get("max_count")
        if mc is not None and (isinstance(mc, bool) or not isinstance(mc, int) or mc < 0):
            raise ConfigError("solver.eig.max_count", "expected a non-negative integer")
        eig = EigSettings(b, lo, hi, mc)
    return SolverSettings(rtol, h, scan, b_list, lam_list, lp, lm, eig)


def parse_config(raw: Any, source: str = "<memory>", digest: str | None = None) -> ProblemConfig:
    """Validate an already-decoded configuration document."""
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a JSON object")
    if digest is None:
        digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()
    ts_raw = _get(raw, "timescale", "")
    ts = _parse_timescale(ts_raw, False)
    solver = _parse_solver(raw, ts)
    field = _parse_field(raw, ts, solver.h)
    bnd = _get(raw, "boundary", "")
    alpha = _parse_boundary_matrix(_get(bnd, "alpha", "boundary"), field.d, "boundary.alpha")
    beta = _parse_boundary_matrix(_get(bnd, "beta", "boundary"), field.d, "boundary.beta")
    try:
        bp = validate_boundary(alpha, beta)
    except BoundaryError as exc:
        which = "boundary.beta" if str(exc).startswith("beta") else (
            "boundary.alpha" if str(exc).startswith("alpha") else "boundary")
        raise ConfigError(which, str(exc)) from exc
    out = raw.get("output", {}) or {}
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("output.format", f"expected 'json' or 'csv', got {fmt!r}")
    return ProblemConfig(str(raw.get("name", Path(source).stem)), source, digest, raw, ts, field, bp,
                         solver, fmt, out.get("path"))


def load_config(path) -> ProblemConfig:
    """Read and validate a JSON configuration file.

    A bare name such as ``free_continuous.json`` that does not exist on disk
    is looked up among the bundled examples.
    """
    p = Path(path)
    if not p.exists():
        bundled = bundled_config_path(p.name)
        if bundled is None:
            raise ConfigError("", f"configuration file not found: {path}")
        p = bundled
    data = p.read_bytes()
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("", f"{p.name}: cannot parse JSON: {exc}") from exc
    try:
        return parse_config(raw, str(p), hashlib.sha256(data).hexdigest())
    except ConfigError:
        raise
    except HamtsError as exc:
        raise ConfigError("", str(exc)) from exc


def bundled_config_path(name: str) -> Path | None:
    from importlib import resources

    try:
        ref = resources.files("hamts") / "configs" / name
    except (ModuleNotFoundError, TypeError):
        return None
    p = Path(str(ref))
    return p if p.is_file() else None


def bundled_configs() -> list[str]:
    from importlib import resources

    root = Path(str(resources.files("hamts") / "configs"))
    return sorted(p.name for p in root.glob("*.json"))
