"""Command-line driver: ``hamts <command> --config <path> [--out <path>] [--format json|csv] [--parallel N]``.

Exit status: 0 success, 2 configuration error, 3 numerical failure (including
a failed ``verify``), 4 inconclusive classification.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ProblemConfig, load_config
from .errors import ClassificationInconclusive, ConfigError, HamtsError, NumericalError
from .exprfield import symplectic_J
from .propagate import liouville_residual, propagate_fundamental, symplectic_residual, weighted_gram
from .regular import eigen_gram, find_eigenvalues, problem_grid
from .system import _H
from .weyl import (build_Y, circle_points, classify, disk_membership, imag_part, limit_disk,
                   m_function, weyl_disk, weyl_F_all)

COMMANDS = ("eig", "weyl-trace", "classify", "verify")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INCONCLUSIVE = 0, 2, 3, 4


# -- JSON helpers ----------------------------------------------------------------------


def jsonable(obj):
    """Convert results to plain JSON types; complex numbers become ``{"re", "im"}``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _num(obj.real), "im": _num(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def dumps(report) -> str:
    return json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n"


def _lam_key(lam: complex) -> str:
    return f"{lam.real:g}{lam.imag:+g}i"


def _map(fn, items, parallel: int):
    if parallel > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- commands -----------------------------------------------------------------------------


def cmd_eig(cfg: ProblemConfig, parallel: int = 1) -> dict:
    e = cfg.solver.eig
    if e is None:
        raise ConfigError("solver.eig", "missing (needs b, lambda_lo, lambda_hi)")
    eig = find_eigenvalues(cfg.field, cfg.ts, cfg.bp, e.b, e.lambda_lo, e.lambda_hi, e.max_count,
                           scan_points=cfg.solver.scan_points, h=cfg.solver.h, rtol=cfg.solver.rtol)
    gram = eigen_gram(cfg.field, eig)
    dev = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0
    return {
        "results": {
            "b": e.b, "window": [e.lambda_lo, e.lambda_hi],
            "eigenvalues": eig.values, "multiplicities": eig.multiplicities,
        },
        "diagnostics": {"imag_estimates": eig.imag_estimates, "orthonormality_deviation": dev},
    }


def _require_b_list(cfg: ProblemConfig, minimum: int = 3):
    if len(cfg.solver.b_list) < minimum:
        raise ConfigError("solver.b_list", f"needs at least {minimum} increasing entries")
    return list(cfg.solver.b_list)


def _trace_one(cfg: ProblemConfig, lam: complex) -> dict:
    rep = limit_disk(cfg.field, cfg.ts, cfg.bp, lam, _require_b_list(cfg), h=cfg.solver.h,
                     rtol=cfg.solver.rtol)
    rows = []
    for k, b in enumerate(rep.b_list):
        for j in range(cfg.d):
            rows.append({"b": b, "j": j + 1, "mu_j": rep.mu[k, j],
                         "radius_fro": rep.radius_norms[k], "center": rep.centers[k]})
    return {"lambda": lam, "rows": rows, "rank": rep.rank, "track_status": rep.track_status,
            "ratios": rep.ratios, "gamma": rep.gamma, "C0": rep.C0, "R0": rep.R0}


def cmd_weyl_trace(cfg: ProblemConfig, parallel: int = 1) -> dict:
    lams = [lam for lam in cfg.solver.lambda_list if lam.imag != 0]
    if not lams:
        raise ConfigError("solver.lambda_list", "needs at least one non-real value")
    traces = _map(lambda lam: _trace_one(cfg, lam), lams, parallel)
    return {"results": {"traces": traces}}


def trace_csv(report: dict, d: int) -> str:
    cols = ["b", "j", "mu_j", "radius_fro"]
    for r in range(d):
        for c in range(d):
            cols += [f"center_re_{r + 1}{c + 1}", f"center_im_{r + 1}{c + 1}"]
    cols += ["lambda_re", "lambda_im"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for tr in report["results"]["traces"]:
        lam = tr["lambda"]
        for row in tr["rows"]:
            vals = [repr(float(row["b"])), row["j"], repr(float(row["mu_j"])), repr(float(row["radius_fro"]))]
            C = np.asarray(row["center"])
            for r in range(d):
                for c in range(d):
                    vals += [repr(float(C[r, c].real)), repr(float(C[r, c].imag))]
            vals += [repr(float(lam.real)), repr(float(lam.imag))]
            w.writerow(vals)
    return buf.getvalue()


def cmd_classify(cfg: ProblemConfig, parallel: int = 1) -> dict:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = classify(cfg.field, cfg.ts, cfg.bp, _require_b_list(cfg), cfg.solver.lambda_plus,
                       cfg.solver.lambda_minus, h=cfg.solver.h, rtol=cfg.solver.rtol)
    diag = {}
    for name, c in (("plus", rep.plus), ("minus", rep.minus)):
        diag[name] = {
            "lambda": c.lam, "mu": c.limit.mu, "b_list": c.limit.b_list, "ratios": c.limit.ratios,
            "track_status": c.limit.track_status, "rank_count": c.rank_count,
            "plateau_count": c.plateau_count, "plateau_increase": c.plateau_increase,
            "consistent": c.consistent,
        }
    diag["warnings"] = [str(w.message) for w in caught]
    return {
        "results": {"d": rep.d, "d_plus": rep.d_plus, "d_minus": rep.d_minus, "r_plus": rep.r_plus,
                    "r_minus": rep.r_minus, "label": rep.label, "counts": rep.counts,
                    "largest_defect": rep.largest_defect, "real_symmetry": rep.real_symmetry},
        "diagnostics": diag,
    }


def _is_discrete(grid) -> bool:
    return bool(np.all(grid.nu[1:] > 0))


def _verify_one(cfg: ProblemConfig, lam: complex) -> list[dict]:
    """Residual rows for one spectral parameter."""
    field, ts, bp, s = cfg.field, cfg.ts, cfg.bp, cfg.solver
    b_list = list(s.b_list) or [ts.horizon]
    grid = problem_grid(ts, b_list[-1], s.h, anchors=b_list)
    discrete = _is_discrete(grid)
    rows = []

    def row(check, value, tol, kind="max"):
        ok = value <= tol if kind == "max" else value > tol
        rows.append({"lambda": lam, "check": check, "value": value, "tolerance": tol, "pass": bool(ok)})

    lam_c = lam.conjugate()
    Phi = propagate_fundamental(field, ts, lam, None, grid, rtol=s.rtol)
    Phi_c = Phi if lam_c == lam else propagate_fundamental(field, ts, lam_c, None, grid, rtol=s.rtol)
    row("symplectic_scaled", symplectic_residual(Phi, Phi_c, scaled=True), 1e-12 if discrete else 1e-7)
    row("liouville_scaled", liouville_residual(Phi, scaled=True), 1e-10 if discrete else 1e-7)
    rows.append({"lambda": lam, "check": "symplectic_abs", "value": symplectic_residual(Phi, Phi_c),
                 "tolerance": None, "pass": None})
    rows.append({"lambda": lam, "check": "liouville_abs", "value": liouville_residual(Phi),
                 "tolerance": None, "pass": None})
    # quadrature form of the Lagrange identity for two solution families
    eta = lam + 1.0
    Z = propagate_fundamental(field, ts, eta, None, grid, rtol=s.rtol)
    G = weighted_gram(field, Z, Phi)
    J = symplectic_J(field.d)
    bnd = _H(Phi.end) @ J @ Z.end - J
    scale = max(1.0, float(np.linalg.norm(Phi.end) * np.linalg.norm(Z.end)))
    row("lagrange_quadrature", float(np.linalg.norm((eta - lam_c) * G - bnd)) / scale, 1e-6)
    if lam.imag == 0 or len(s.b_list) < 2:
        return rows
    Y = build_Y(field, ts, bp, lam, grid, rtol=s.rtol)
    Yc = build_Y(field, ts, bp, lam_c, grid, rtol=s.rtol)
    W = weyl_F_all(field, Y, b_list)
    Wc = weyl_F_all(field, Yc, b_list)
    row("dual_path_F_rel", max(w.dual_residual_rel for w in W), 1e-7)
    sign = 1 if lam.imag > 0 else -1
    herg, sym = [], []
    for w in W:
        M = m_function(Y, w.b, bp.beta)
        Mc = m_function(Yc, w.b, bp.beta)
        herg.append(float(np.linalg.eigvalsh(sign * imag_part(M))[0]))
        sym.append(float(np.linalg.norm(_H(Mc) - M)) / max(1.0, float(np.linalg.norm(M))))
    row("herglotz_min_eig", min(herg), 0.0, kind="min")
    row("conjugate_symmetry", max(sym), 1e-8)
    disks = [weyl_disk(w, wc) for w, wc in zip(W, Wc)]
    nest = max(disk_membership(P, W[i]) for i in range(len(W)) for j in range(i + 1, len(W))
               for P in circle_points(disks[j]))
    row("nesting", nest, 1e-7)
    return rows


def cmd_verify(cfg: ProblemConfig, parallel: int = 1) -> dict:
    per = _map(lambda lam: _verify_one(cfg, lam), list(cfg.solver.lambda_list), parallel)
    rows = [r for group in per for r in group]
    ok = all(r["pass"] is not False for r in rows)
    return {"results": {"rows": rows, "all_pass": ok}}


def verify_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda_re", "lambda_im", "check", "value", "tolerance", "pass"])
    for r in report["results"]["rows"]:
        w.writerow([repr(float(r["lambda"].real)), repr(float(r["lambda"].imag)), r["check"],
                    repr(float(r["value"])), "" if r["tolerance"] is None else repr(float(r["tolerance"])),
                    "" if r["pass"] is None else str(r["pass"]).lower()])
    return buf.getvalue()


def eig_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "lambda", "multiplicity"])
    res = report["results"]
    for j, (v, m) in enumerate(zip(res["eigenvalues"], res["multiplicities"])):
        w.writerow([j, repr(float(v)), int(m)])
    return buf.getvalue()


def classify_csv(report: dict) -> str:
    res = report["results"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "d_plus", "d_minus", "r_plus", "r_minus", "label"])
    w.writerow([res[k] for k in ("d", "d_plus", "d_minus", "r_plus", "r_minus", "label")])
    return buf.getvalue()


HANDLERS = {"eig": cmd_eig, "weyl-trace": cmd_weyl_trace, "classify": cmd_classify, "verify": cmd_verify}


def run(command: str, cfg: ProblemConfig, parallel: int = 1) -> dict:
    """Execute ``command`` and return the full report (plain Python objects)."""
    if command not in HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    body = HANDLERS[command](cfg, parallel)
    return {"command": command, "config": Path(cfg.source).name, "config_digest": cfg.digest,
            "name": cfg.name, "version": __version__, **body}


def render(report: dict, fmt: str, d: int) -> str:
    if fmt == "json":
        return dumps(report)
    cmd = report["command"]
    if cmd == "weyl-trace":
        return trace_csv(report, d)
    if cmd == "verify":
        return verify_csv(report)
    if cmd == "eig":
        return eig_csv(report)
    return classify_csv(report)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamts", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hamts {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("eig", "real eigenvalues of the regular problem"),
                        ("weyl-trace", "Weyl disk eigenvalue tracks, radii and centers along b_list"),
                        ("classify", "limit point / limit circle classification"),
                        ("verify", "residual table of the conservation and disk identities")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON problem file (or a bundled example name)")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), help="overrides output.format of the config")
        sp.add_argument("--parallel", type=int, default=1, help="worker threads across lambda values")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        fmt = args.format or cfg.output_format
        report = run(args.command, cfg, max(1, args.parallel))
    except ConfigError as exc:
        print(f"hamts {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClassificationInconclusive as exc:
        print(f"hamts {args.command}: inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (NumericalError, HamtsError) as exc:
        print(f"hamts {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = render(report, fmt, cfg.d)
    out = args.out or cfg.output_path
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    if args.command == "verify" and not report["results"]["all_pass"]:
        print("hamts verify: some residuals exceed their tolerances", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
