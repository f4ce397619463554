"""Acceptance criteria 1-14, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line with the measured
quantities; run with ``pytest tests/test_acceptance.py -s`` to see them.
"""

import time

import numpy as np
import pytest

from hamts import (SturmianViolation, arithmetic, build_timescale, build_Y, classify,
                   disk_membership, find_eigenvalues, interval, lagrange_residual, limit_disk,
                   liouville_residual, load_config, m_function, make_grid, points,
                   propagate_fundamental, symplectic_residual, validate_boundary)
from hamts.config import bundled_config_path, bundled_configs
from hamts.regular import eigen_gram, problem_grid
from hamts.weyl import (circle_points, hermitian_part, imag_part, truncated_norms, weyl_disk,
                        weyl_F_all, weyl_solution)

from conftest import free_field, integer_scale
from oracles import pencil_eigenvalues

E3 = np.exp(3j * np.pi / 4)
SUMMARY = {}


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    SUMMARY[n] = line
    print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module", autouse=True)
def summary():
    yield
    print("\n\nacceptance summary")
    for n in sorted(SUMMARY):
        print(SUMMARY[n])


@pytest.fixture(scope="module")
def dirichlet():
    return validate_boundary([1, 0], [1, 0])


@pytest.fixture(scope="module")
def half_line_bases(dirichlet):
    ts = build_timescale([interval(0, 40)], 0)
    f = free_field()
    g = make_grid(ts, 0, 40, 0.01, anchors=[5, 10, 20])
    return ts, f, build_Y(f, ts, dirichlet, 1j, g), build_Y(f, ts, dirichlet, -1j, g)


def test_01_discrete_propagation_exact():
    ts = integer_scale(-1, 100, 0)
    t0 = time.perf_counter()
    tr = propagate_fundamental(free_field(), ts, 0.0, None, make_grid(ts, 0, 100))
    elapsed = time.perf_counter() - t0
    err = max(np.abs(tr.samples[k] - [[1, k], [0, 1]]).max() for k in range(101))
    report(1, err <= 1e-12 and elapsed < 0.1, f"max error {err:.1e} (tol 1e-12), {elapsed:.3f}s (< 0.1s)")


def test_02_symplectic_constancy(dirichlet):
    f = free_field()
    lam = 1 + 1j
    t0 = time.perf_counter()
    seg = build_timescale([interval(0, np.pi)], 0)
    g = make_grid(seg, 0, np.pi)
    cont = symplectic_residual(propagate_fundamental(f, seg, lam, None, g, rtol=1e-10),
                               propagate_fundamental(f, seg, lam.conjugate(), None, g, rtol=1e-10))
    z = integer_scale(-1, 20, 0)
    gz = make_grid(z, 0, 20)
    disc = symplectic_residual(propagate_fundamental(f, z, lam, None, gz),
                               propagate_fundamental(f, z, lam.conjugate(), None, gz))
    elapsed = time.perf_counter() - t0
    ok = cont <= 1e-7 and disc <= 1e-12 and elapsed < 1
    report(2, ok, f"[0,pi] {cont:.1e} (tol 1e-7), Z {disc:.1e} (tol 1e-12), {elapsed:.2f}s (< 1s)")


def _bundled_trajectories():
    for name in bundled_configs():
        cfg = load_config(bundled_config_path(name))
        s = cfg.solver
        b_list = list(s.b_list) or [cfg.ts.horizon]
        grid = problem_grid(cfg.ts, b_list[-1], s.h, anchors=b_list)
        discrete = bool(np.all(grid.nu[1:] > 0))
        for lam in s.lambda_list:
            yield name, lam, discrete, propagate_fundamental(cfg.field, cfg.ts, lam, None, grid, rtol=s.rtol)


def test_03_liouville_normalization():
    worst, lines, ok = {}, [], True
    for name, lam, discrete, tr in _bundled_trajectories():
        tol = 1e-10 if discrete else 1e-7
        res = liouville_residual(tr)
        scaled = liouville_residual(tr, scaled=True)
        ok &= res <= tol
        key = name.removesuffix(".json")
        if res >= worst.get(key, (-1,))[0]:
            worst[key] = (res, scaled, tol)
    for key, (res, scaled, tol) in worst.items():
        lines.append(f"{key} {res:.1e}/{tol:.0e} (scaled {scaled:.1e})")
    report(3, ok, "; ".join(lines))


def test_04_lagrange_identity():
    rng = np.random.default_rng(2024)
    z = integer_scale(-1, 10)
    f = free_field(q="cos(t)")
    worst_z = 0.0
    for _ in range(20):
        c = rng.uniform(-1, 1, (4, 3)) + 1j * rng.uniform(-1, 1, (4, 3))
        x = lambda t, c=c: np.array([np.polyval(c[0], t), np.polyval(c[1], t)])
        y = lambda t, c=c: np.array([np.polyval(c[2], t), np.polyval(c[3], t)])
        worst_z = max(worst_z, lagrange_residual(x, y, f, z, -1, 10))
    seg = build_timescale([interval(0, np.pi)], 0)
    worst_c = 0.0
    for _ in range(5):
        c = rng.uniform(-1, 1, (4, 4)) + 1j * rng.uniform(-1, 1, (4, 4))
        x = lambda t, c=c: np.array([np.polyval(c[0], t), np.polyval(c[1], t)])
        y = lambda t, c=c: np.array([np.polyval(c[2], t), np.polyval(c[3], t)])
        worst_c = max(worst_c, lagrange_residual(x, y, f, seg, 0, np.pi, h=1 / 512))
    report(4, worst_z <= 1e-9 and worst_c <= 1e-6,
           f"Z {worst_z:.1e} (tol 1e-9), [0,pi] {worst_c:.1e} (tol 1e-6)")


@pytest.fixture(scope="module")
def continuous_spectrum(dirichlet):
    seg = build_timescale([interval(0, np.pi)], 0)
    f = free_field()
    t0 = time.perf_counter()
    eig = find_eigenvalues(f, seg, dirichlet, np.pi, 0, 30, max_count=5, h=np.pi / 512)
    return f, eig, time.perf_counter() - t0


@pytest.fixture(scope="module")
def lattice_spectrum(dirichlet):
    z = integer_scale(-1, 20)
    f = free_field()
    eig = find_eigenvalues(f, z, dirichlet, 20, -0.5, 4.5)
    ref, _ = pencil_eigenvalues(f, problem_grid(z, 20), dirichlet.alpha, dirichlet.beta)
    return f, eig, ref


def test_05_continuous_spectrum(continuous_spectrum):
    _, eig, elapsed = continuous_spectrum
    vals = np.sort(eig.values.real)
    err = np.abs(vals - [1, 4, 9, 16, 25]).max() if len(vals) == 5 else np.inf
    report(5, err <= 1e-6 and elapsed < 5, f"max error {err:.1e} (tol 1e-6), {elapsed:.2f}s (< 5s)")


def test_06_discrete_spectrum(lattice_spectrum):
    _, eig, ref = lattice_spectrum
    vals = np.sort(eig.values.real)
    err = np.abs(vals - ref).max() if len(vals) == len(ref) else np.inf
    report(6, err <= 1e-9, f"{len(vals)}/{len(ref)} eigenvalues, max error {err:.1e} (tol 1e-9)")


def test_07_orthonormality(continuous_spectrum, lattice_spectrum):
    f, eig, _ = continuous_spectrum
    gc = np.abs(eigen_gram(f, eig) - np.eye(len(eig))).max()
    f, eig, _ = lattice_spectrum
    gd = np.abs(eigen_gram(f, eig) - np.eye(len(eig))).max()
    report(7, gc <= 1e-6 and gd <= 1e-6, f"[0,pi] {gc:.1e}, Z {gd:.1e} (tol 1e-6)")


def test_08_F_dual_paths(half_line_bases):
    _, f, Y, Yc = half_line_bases
    bs = [5, 10, 20, 40]
    W, Wc = weyl_F_all(f, Y, bs), weyl_F_all(f, Yc, bs)
    dual = max(w.dual_residual_rel for w in W + Wc)
    block = 0.0
    for w, wc in zip(W, Wc):
        lhs = w.F12 @ np.linalg.solve(w.F22, w.F12.conj().T) - w.F11
        block = max(block, np.linalg.norm(lhs - np.linalg.inv(wc.F22)) / max(1, np.linalg.norm(w.F11)))
    slack = min(np.linalg.eigvalsh(hermitian_part(b.F22 - a.F22))[0] for a, b in zip(W, W[1:]))
    ok = dual <= 1e-7 and block <= 1e-7 and slack >= -1e-10
    report(8, ok, f"dual {dual:.1e}, block {block:.1e} (relative, tol 1e-7), F22 slack {slack:.2e} (>= -1e-10)")


def test_09_herglotz_symmetry(half_line_bases, dirichlet):
    _, _, Y, Yc = half_line_bases
    sym, herg = 0.0, np.inf
    for b in (5, 10, 20, 40):
        M, Mc = m_function(Y, b, dirichlet.beta), m_function(Yc, b, dirichlet.beta)
        sym = max(sym, np.linalg.norm(Mc.conj().T - M))
        herg = min(herg, np.linalg.eigvalsh(imag_part(M))[0])
    report(9, sym <= 1e-8 and herg > 0, f"symmetry {sym:.1e} (tol 1e-8), min eig Im M {herg:.3f} (> 0)")


def test_10_disk_nesting(half_line_bases):
    _, f, Y, Yc = half_line_bases
    bs = [5, 10, 20]
    W, Wc = weyl_F_all(f, Y, bs), weyl_F_all(f, Yc, bs)
    disks = [weyl_disk(w, wc) for w, wc in zip(W, Wc)]
    slack = max(disk_membership(P, W[i]) for j in range(1, 3) for i in range(j)
                for P in circle_points(disks[j], 32))
    report(10, slack <= 1e-7, f"max membership of later circles in earlier disks {slack:.1e} (tol 1e-7)")


def test_11_limit_point(dirichlet):
    ts = build_timescale([interval(0, 40)], 0)
    f = free_field()
    t0 = time.perf_counter()
    rep = limit_disk(f, ts, dirichlet, 1j, [5, 10, 20, 40], h=0.01)
    cl = classify(f, ts, dirichlet, [5, 10, 20, 40], h=0.01)
    elapsed = time.perf_counter() - t0
    R20 = rep.radius_norms[2]
    Y = build_Y(f, ts, dirichlet, 1j, make_grid(ts, 0, 20, 0.01))
    mdist = abs(m_function(Y, 20, dirichlet.beta)[0, 0] - E3)
    ok = (R20 < 1e-4 and rep.rank == 0 and (cl.label, cl.d_plus, cl.d_minus) == ("lpc", 1, 1)
          and mdist <= 1e-4 and elapsed < 10)
    report(11, ok, f"R(20,i) {R20:.1e}, r={rep.rank}, {cl.label} ({cl.d_plus},{cl.d_minus}), "
                   f"|M(i,20)-e^(3i pi/4)| {mdist:.1e}, {elapsed:.2f}s (< 10s)")


def test_12_limit_circle():
    ts = build_timescale([interval(0, 40)], 0)
    f = free_field(weight="exp(-t)")
    bs = [10, 20, 40]
    t0 = time.perf_counter()
    bp = validate_boundary([1, 0], [1, 0])
    rep = limit_disk(f, ts, bp, 1j, bs, h=0.01)
    cl = classify(f, ts, bp, bs, h=0.01)
    s = 1 / np.sqrt(2)
    rot = classify(f, ts, validate_boundary([s, s], [1, 0]), bs, h=0.01)
    elapsed = time.perf_counter() - t0
    ok = (rep.ratios[0] < 1.05 and rep.rank == 1
          and (cl.label, cl.d_plus, cl.d_minus) == ("lcc", 2, 2)
          and rot.label == cl.label and elapsed < 20)
    report(12, ok, f"mu_1 ratio {rep.ratios[0]:.4f} (< 1.05), r={rep.rank}, {cl.label} "
                   f"({cl.d_plus},{cl.d_minus}), rotated alpha {rot.label}, {elapsed:.2f}s (< 20s)")


def test_13_truncated_norm_bound(half_line_bases, dirichlet):
    ts, f, Y, Yc = half_line_bases
    chi, M, g = weyl_solution(f, ts, dirichlet, 1j, 20, grid=Y.grid)
    worst = truncated_norms(f, g, chi)[-1, 0] - M[0, 0].imag
    W, Wc = weyl_F_all(f, Y, [20]), weyl_F_all(f, Yc, [20])
    g20 = Y.grid.truncate(20)
    n = len(g20)
    for P in circle_points(weyl_disk(W[0], Wc[0]), 16):
        samples = Y.theta[:n] + Y.phi[:n] @ P
        worst = max(worst, truncated_norms(f, g20, samples)[-1, 0] - P[0, 0].imag)
    report(13, worst <= 1e-6, f"max(norm - Im M / Im lambda) {worst:.1e} over 17 circle points (tol 1e-6)")


def test_14_sturmian_gate():
    try:
        build_timescale([interval(0, 1), interval(2, 3)], 0)
        rejected, at = False, None
    except SturmianViolation as e:
        rejected, at = True, e.t
    accepted = []
    for cells, t0 in (([arithmetic(0, 0.5, 41)], 0.5), ([interval(0, 10)], 0),
                      ([points([2.0**k for k in range(11)])], 2)):
        try:
            build_timescale(cells, t0)
            accepted.append(True)
        except SturmianViolation:
            accepted.append(False)
    ok = rejected and at == 1 and all(accepted)
    report(14, ok, f"[0,1]u[2,3] rejected at t={at}; 0.5Z, [0,10], {{1,...,2^10}} accepted {accepted}")
