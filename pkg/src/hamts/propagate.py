"""Fundamental-matrix propagation and conservation checks.

Scattered steps apply ``Phi(t) = (I - nu S)^{-1} Phi(rho(t))`` by an LU solve.
Dense stretches integrate ``Phi' = S Phi`` with an adaptive explicit
Runge-Kutta pair (DOP853 by default).  Several spectral parameters can be
propagated together; on dense stretches ``S = S0 + lam S1`` so the batch shares
one coefficient evaluation per right-hand-side call.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.integrate import solve_ivp

from .errors import NumericalError
from .exprfield import CoefficientField, is_constant, symplectic_J
from .system import _H, dense_pencil, shift_samples, system_blocks
from .timescale import Grid, TimeScale, _dense_runs, nabla_integrate

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_METHOD = "DOP853"


@dataclass(frozen=True)
class Trajectory:
    """Samples of a matrix solution on ``grid``; ``samples[k]`` is the value at ``grid.t[k]``."""

    grid: Grid
    lam: complex
    samples: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.samples.setflags(write=False)
        self.initial.setflags(write=False)

    def at(self, t: float) -> np.ndarray:
        return self.samples[self.grid.index(t)]

    @property
    def end(self) -> np.ndarray:
        return self.samples[-1]

    def truncate(self, b: float) -> "Trajectory":
        k = self.grid.index(b)
        return Trajectory(self.grid.truncate(b), self.lam, self.samples[: k + 1].copy(), self.initial.copy())


class _Pencil:
    """Cached dense-stretch evaluator of ``S0(t)``, ``S1(t)``."""

    def __init__(self, field: CoefficientField):
        self.field = field
        self.const = all(is_constant(x) for m in field.mats.values() for row in m for x in row)
        self._cache = dense_pencil(field.blocks(0.0, 0.0)) if self.const else None

    def __call__(self, t: float):
        if self.const:
            return self._cache
        return dense_pencil(self.field.blocks(t, 0.0))


def _propagate(field: CoefficientField, grid: Grid, lams: np.ndarray, Y0: np.ndarray,
               rtol: float, atol: float, method: str, store: bool):
    """Core stepping loop.  Returns samples ``(n, L, 2d, m)`` or the end values ``(L, 2d, m)``."""
    L = lams.shape[0]
    n2, m = Y0.shape
    cur = np.broadcast_to(Y0, (L, n2, m)).astype(complex)
    pencil = _Pencil(field)
    npts = len(grid)
    out = np.empty((npts, L, n2, m), dtype=complex) if store else None
    if store:
        out[0] = cur
    runs = {s: e for s, e in _dense_runs(grid)}
    k = 1
    while k < npts:
        if grid.nu[k] > 0:
            bl = field.blocks(grid.t[k], grid.nu[k])
            S, _ = system_blocks(bl, grid.nu[k], lams)
            G = np.eye(n2) - grid.nu[k] * S
            try:
                cur = np.linalg.solve(G, cur)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"I - nu*S singular at t={grid.t[k]!r}") from exc
            if store:
                out[k] = cur
            k += 1
            continue
        s = k - 1
        e = runs[s]
        t_eval = grid.t[s:e + 1]
        lam_b = lams[:, None, None]

        def rhs(t, y):
            S0, S1 = pencil(t)
            Y = y.reshape(L, n2, m)
            return (S0 @ Y + lam_b * (S1 @ Y)).ravel()

        sol = solve_ivp(rhs, (t_eval[0], t_eval[-1]), cur.ravel(), method=method,
                        t_eval=t_eval if store else None, rtol=rtol, atol=atol)
        if not sol.success:
            raise NumericalError(f"dense propagation failed on [{t_eval[0]}, {t_eval[-1]}]: {sol.message}")
        if store:
            vals = sol.y.T.reshape(len(t_eval), L, n2, m)
            out[s + 1:e + 1] = vals[1:]
            cur = vals[-1]
        else:
            cur = sol.y[:, -1].reshape(L, n2, m)
        k = e + 1
    if not np.all(np.isfinite(cur)):
        raise NumericalError("propagation overflowed to non-finite values")
    return out if store else cur


def propagate_fundamental(field: CoefficientField, ts: TimeScale | None, lam: complex,
                          initial: np.ndarray | None, grid: Grid, rtol: float = DEFAULT_RTOL,
                          atol: float = DEFAULT_ATOL, method: str = DEFAULT_METHOD) -> Trajectory:
    """Propagate a matrix solution from ``grid.t[0]`` (taken as ``rho(t0)``) across ``grid``.

    ``initial`` defaults to the identity; any ``2d x m`` block is accepted.
    """
    n2 = 2 * field.d
    Y0 = np.eye(n2, dtype=complex) if initial is None else np.array(initial, dtype=complex)
    if Y0.ndim != 2 or Y0.shape[0] != n2:
        raise ValueError(f"initial value must have {n2} rows")
    samples = _propagate(field, grid, np.array([lam], dtype=complex), Y0, rtol, atol, method, True)
    samples = samples[:, 0]
    samples[0] = Y0
    return Trajectory(grid, complex(lam), samples, Y0.copy())


def propagate_end(field: CoefficientField, grid: Grid, lams: Sequence[complex],
                  initial: np.ndarray | None = None, rtol: float = DEFAULT_RTOL,
                  atol: float = DEFAULT_ATOL, method: str = DEFAULT_METHOD,
                  batch: int = 256) -> np.ndarray:
    """End values ``Phi(grid.b, lam)`` for many ``lam`` at once, shape ``(L, 2d, m)``."""
    n2 = 2 * field.d
    Y0 = np.eye(n2, dtype=complex) if initial is None else np.array(initial, dtype=complex)
    lams = np.asarray(lams, dtype=complex).ravel()
    parts = [_propagate(field, grid, lams[i:i + batch], Y0, rtol, atol, method, False)
             for i in range(0, len(lams), batch)]
    return np.concatenate(parts, axis=0) if parts else np.empty((0, n2, Y0.shape[1]), complex)


# -- scalar exponential --------------------------------------------------------------


def nabla_exponential(q: Callable | float | complex, ts: TimeScale, t_end: float,
                      h: float | None = None) -> complex:
    """``e_q(t_end, rho(t0))``, the solution of ``x^nabla = q x`` with ``x(rho(t0)) = 1``.

    Scattered points contribute the factor ``1 / (1 - nu q)``; dense stretches
    contribute ``exp(int q)`` by Simpson quadrature.
    """
    from .timescale import make_grid

    qf = q if callable(q) else (lambda t, c=complex(q): c)
    start = ts.rho(ts.t0)
    if ts.snap(t_end) == start:
        return 1.0 + 0j
    grid = make_grid(ts, start, t_end, h)
    vals = np.array([complex(qf(float(t))) for t in grid.t])
    jump = grid.left_scattered()
    den = 1.0 - grid.nu[jump] * vals[jump]
    if np.any(np.abs(den) <= 1e-14):
        bad = grid.t[jump][np.argmin(np.abs(den))]
        raise NumericalError(f"q is not nu-regressive at t={float(bad)!r} (1 - nu q = 0)")
    log_scattered = -np.sum(np.log(den))
    dense_int = 0j
    for s, e in _dense_runs(grid):
        x = grid.t[s:e + 1]
        seg = vals[s:e + 1]
        dense_int += integrate.simpson(seg, x=x) if e - s >= 2 else integrate.trapezoid(seg, x=x)
    return complex(np.exp(log_scattered + dense_int))


# -- conservation checks ------------------------------------------------------------------


def _check_pair(a: Trajectory, b: Trajectory):
    if len(a.grid) != len(b.grid) or not np.array_equal(a.grid.t, b.grid.t):
        raise ValueError("trajectories are sampled on different grids")


def _to_gaussian_ints(X: np.ndarray):
    """Write a complex float array exactly as ``(re + i im) / 2**e`` with integer object arrays."""
    X = np.asarray(X, dtype=complex)
    parts = [np.real(X).ravel(), np.imag(X).ravel()]
    ratios = [[float(v).as_integer_ratio() for v in p] for p in parts]
    e = max(den.bit_length() - 1 for r in ratios for _, den in r)
    ints = [np.array([num << (e - (den.bit_length() - 1)) for num, den in r], dtype=object).reshape(X.shape)
            for r in ratios]
    return ints[0], ints[1], e


def _exact_abs2_minus_one(X: np.ndarray) -> float:
    """``|det X|^2 - 1`` evaluated exactly from the float entries of ``X``."""
    if not np.all(np.isfinite(X)):
        return float("nan")
    re, im, e = _to_gaussian_ints(X)
    n = X.shape[0]
    dr, di = _exact_det_ints(re, im, n)
    return float(Fraction(dr * dr + di * di, 1 << (2 * e * n)) - 1)


def _exact_det_ints(re, im, n):
    """Fraction-free Gaussian elimination over the Gaussian integers; returns ``(re, im)`` of det."""
    M = [[(int(re[i, j]), int(im[i, j])) for j in range(n)] for i in range(n)]
    sign, prev = 1, (1, 0)
    for k in range(n - 1):
        piv = next((i for i in range(k, n) if M[i][k] != (0, 0)), None)
        if piv is None:
            return 0, 0
        if piv != k:
            M[k], M[piv] = M[piv], M[k]
            sign = -sign
        a, b = M[k][k]
        pr, pi = prev
        norm = pr * pr + pi * pi
        for i in range(k + 1, n):
            c, d = M[i][k]
            for j in range(k + 1, n):
                x, y = M[i][j]
                f, g = M[k][j]
                nr = (x * a - y * b) - (c * f - d * g)
                ni = (x * b + y * a) - (c * g + d * f)
                # exact division by prev: multiply by conj(prev) / |prev|^2
                M[i][j] = ((nr * pr + ni * pi) // norm, (ni * pr - nr * pi) // norm)
        prev = (a, b)
    dr, di = M[n - 1][n - 1]
    return sign * dr, sign * di
def symplectic_form_drift(traj: Trajectory, traj_conj: Trajectory) -> np.ndarray:
    """Pointwise ``||Y*(t, conj lam) J Y(t, lam) - (same at rho(t0))||_F``.

    The form is evaluated exactly from the stored samples, so the result
    measures drift of the trajectory and not cancellation in the product.
    """
    _check_pair(traj, traj_conj)
    J = symplectic_J(traj.samples.shape[1] // 2).real.astype(int).astype(object)
    r1, m1, e1 = _to_gaussian_ints(traj_conj.samples)
    r2, m2, e2 = _to_gaussian_ints(traj.samples)
    r1t, m1t = np.swapaxes(r1, -1, -2), np.swapaxes(m1, -1, -2)
    fr = r1t @ J @ r2 + m1t @ J @ m2
    fi = r1t @ J @ m2 - m1t @ J @ r2
    dr, di = fr - fr[0], fi - fi[0]
    sq = (dr * dr + di * di).reshape(len(dr), -1).sum(axis=1)
    denom = 1 << (2 * (e1 + e2))
    return np.array([np.sqrt(float(Fraction(int(v), denom))) for v in sq])


def symplectic_residual(traj: Trajectory, traj_conj: Trajectory, scaled: bool = False) -> float:
    """Supremum over the grid of the drift of ``Y*(conj lam) J Y(lam)``.

    With ``scaled=True`` each point is divided by ``||Y(conj lam)|| ||Y(lam)||``,
    the size of the roundoff floor of the product.
    """
    drift = symplectic_form_drift(traj, traj_conj)
    if scaled:
        drift = drift / np.maximum(1.0, np.linalg.norm(traj_conj.samples, axis=(-2, -1))
                                   * np.linalg.norm(traj.samples, axis=(-2, -1)))
    return float(np.max(drift))


def liouville_residual(traj: Trajectory, scaled: bool = False) -> float:
    """Supremum of ``|det(Phi* Phi) - 1|`` along a fundamental-matrix trajectory.

    ``det(Phi* Phi) = |det Phi|^2`` is computed exactly from the stored
    samples.  ``scaled=True`` reports ``||det Phi| - 1| / max(1, ||Phi||_2)^n``
    for ``n x n`` samples: a perturbation of relative size ``eps`` in the
    entries moves the determinant by about ``eps ||Phi||^n``.
    """
    res = np.abs(np.array([_exact_abs2_minus_one(X) for X in traj.samples]))
    if scaled:
        n = traj.samples.shape[-1]
        norms = np.maximum(np.linalg.norm(traj.samples, 2, axis=(-2, -1)), 1.0)
        res = res / (1.0 + np.sqrt(1.0 + res)) / norms**n
    return float(np.max(res))


# -- Lagrange identity -----------------------------------------------------------------------


def nabla_derivative(y: Callable, grid: Grid) -> np.ndarray:
    """Nabla derivative of a callable path at the grid points.

    Scattered points use the backward quotient; dense points use fourth-order
    five-point differences with step ``grid.h``, one-sided near cell edges.
    """
    out = []
    h = grid.h
    for k, t in enumerate(grid.t):
        nu = grid.nu[k]
        if nu > 0:
            out.append((np.asarray(y(t), complex) - np.asarray(y(t - nu), complex)) / nu)
            continue
        lo, hi = grid.cell_bounds[k]
        hh = min(h, (hi - lo) / 4) if hi > lo else h
        f = lambda s: np.asarray(y(s), complex)
        if t - 2 * hh >= lo - 1e-15 and t + 2 * hh <= hi + 1e-15:
            d = (f(t - 2 * hh) - 8 * f(t - hh) + 8 * f(t + hh) - f(t + 2 * hh)) / (12 * hh)
        elif t + 4 * hh <= hi + 1e-15:
            d = (-25 * f(t) + 48 * f(t + hh) - 36 * f(t + 2 * hh) + 16 * f(t + 3 * hh) - 3 * f(t + 4 * hh)) / (12 * hh)
        else:
            d = (25 * f(t) - 48 * f(t - hh) + 36 * f(t - 2 * hh) - 16 * f(t - 3 * hh) + 3 * f(t - 4 * hh)) / (12 * hh)
        out.append(d)
    return np.array(out)


def lagrange_residual(x: Callable, y: Callable, field: CoefficientField, ts: TimeScale,
                      a: float, b: float, h: float | None = None) -> float:
    """``|int_(a,b] {(Ux)* L y - (L x)* U y} - [x* J y]_a^b|`` with ``L y = J y^nabla - P U y``.

    ``U`` is the left partial shift and ``a`` plays the role of ``rho(t0)``.
    ``x`` and ``y`` are callables returning ``2d`` vectors (or ``2d x m`` blocks).
    """
    from .timescale import make_grid

    grid = make_grid(ts, a, b, h)
    d = field.d
    J = symplectic_J(d)
    P = field.blocks(grid.t, grid.nu).P

    def sampled(f):
        vals = np.array([np.asarray(f(t), complex) for t in grid.t])
        return vals[..., None] if vals.ndim == 2 else vals

    def shifted(f):
        vals = sampled(f)
        out = vals.copy()
        for k, t in enumerate(grid.t):
            if grid.nu[k] > 0:
                prev = np.asarray(f(t - grid.nu[k]), complex)
                out[k, d:] = prev.reshape(out[k].shape)[d:]
        return out

    X, Yv = sampled(x), sampled(y)
    UX, UY = shifted(x), shifted(y)
    DX = nabla_derivative(x, grid).reshape(X.shape)
    DY = nabla_derivative(y, grid).reshape(Yv.shape)
    LX = J @ DX - P @ UX
    LY = J @ DY - P @ UY
    integrand = _H(UX) @ LY - _H(LX) @ UY
    lhs = nabla_integrate(grid, integrand)
    bnd = _H(X[-1]) @ J @ Yv[-1] - _H(X[0]) @ J @ Yv[0]
    return float(np.max(np.abs(lhs - bnd)))


def weighted_gram(field: CoefficientField, traj_y: Trajectory, traj_z: Trajectory | None = None,
                  cumulative: bool = False) -> np.ndarray:
    """``int (U z)* W (U y)`` over the trajectory grid (``z`` defaults to ``y``)."""
    from .timescale import cumulative_nabla_integral

    grid = traj_y.grid
    W = field.blocks(grid.t, grid.nu).W
    Uy = shift_samples(traj_y.samples, grid)
    Uz = Uy if traj_z is None else shift_samples(traj_z.samples, grid)
    integrand = _H(Uz) @ W @ Uy
    return cumulative_nabla_integral(grid, integrand) if cumulative else nabla_integrate(grid, integrand)


def propagate_backward(field: CoefficientField, grid: Grid, lam: complex, terminal: np.ndarray,
                       rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                       method: str = DEFAULT_METHOD) -> np.ndarray:
    """Solve from ``grid.b`` back to ``grid.a`` given the terminal value; returns samples ``(n, 2d, m)``.

    Backward stepping is the stable direction for solutions that decay forward
    in ``t``.  Scattered steps are the forward recursion read backwards,
    ``Phi(rho(t)) = (I - nu S) Phi(t)``.
    """
    Y = np.array(terminal, dtype=complex)
    n2, m = Y.shape
    npts = len(grid)
    out = np.empty((npts, n2, m), dtype=complex)
    out[-1] = Y
    pencil = _Pencil(field)
    starts = {e: s for s, e in _dense_runs(grid)}
    k = npts - 1
    while k > 0:
        if grid.nu[k] > 0:
            bl = field.blocks(grid.t[k], grid.nu[k])
            S, _ = system_blocks(bl, grid.nu[k], np.array([lam]))
            Y = (np.eye(n2) - grid.nu[k] * S[0]) @ Y
            out[k - 1] = Y
            k -= 1
            continue
        s = starts[k]
        t_eval = grid.t[s:k + 1][::-1]

        def rhs(t, y):
            S0, S1 = pencil(t)
            return ((S0 + lam * S1) @ y.reshape(n2, m)).ravel()

        sol = solve_ivp(rhs, (t_eval[0], t_eval[-1]), Y.ravel(), method=method,
                        t_eval=t_eval, rtol=rtol, atol=atol)
        if not sol.success:
            raise NumericalError(f"backward propagation failed on [{t_eval[-1]}, {t_eval[0]}]: {sol.message}")
        vals = sol.y.T.reshape(len(t_eval), n2, m)[::-1]
        out[s:k] = vals[:-1]
        Y = vals[0]
        k = s
    return out
