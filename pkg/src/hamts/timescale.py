"""Finite Sturmian time scales, jump operators, grids and nabla integration.

A time scale is stored as an ordered tuple of cells, each either a closed
interval ``[lo, hi]`` or a strictly increasing list of isolated points.  The
horizon truncates the (conceptually unbounded) scale; at the horizon the
forward jump is the identity, and at the minimum the backward jump is the
identity.  Accumulation hybrids (a scattered sequence converging into an
interval) are not representable and must be truncated by the caller.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .errors import NotInTimeScale, SturmianViolation, TimeScaleError

_REL_TOL = 1e-12


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _REL_TOL * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise TimeScaleError(f"interval needs finite lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def first(self) -> float:
        return self.lo

    @property
    def last(self) -> float:
        return self.hi


@dataclass(frozen=True)
class Points:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise TimeScaleError("points cell must not be empty")
        if any(not math.isfinite(v) for v in vals):
            raise TimeScaleError("points cell contains a non-finite value")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise TimeScaleError("points cell must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @property
    def first(self) -> float:
        return self.values[0]

    @property
    def last(self) -> float:
        return self.values[-1]


Cell = Interval | Points


def interval(lo: float, hi: float) -> Interval:
    return Interval(float(lo), float(hi))


def points(values: Iterable[float]) -> Points:
    return Points(tuple(values))


def arithmetic(start: float, step: float, count: int) -> Points:
    if step <= 0 or count < 1:
        raise TimeScaleError("arithmetic cell needs step > 0 and count >= 1")
    return Points(tuple(start + k * step for k in range(int(count))))


def geometric(start: float, ratio: float, count: int) -> Points:
    if start <= 0 or ratio <= 1 or count < 1:
        raise TimeScaleError("geometric cell needs start > 0, ratio > 1, count >= 1")
    return Points(tuple(start * ratio**k for k in range(int(count))))


def cell_from_dict(raw: dict) -> Cell:
    """Build a cell from its config form (``interval``, ``points``, ``arithmetic``, ``geometric``)."""
    if not isinstance(raw, dict) or len(raw) != 1:
        raise TimeScaleError(f"cell must be a single-key object, got {raw!r}")
    (kind, body), = raw.items()
    if kind == "interval":
        if not isinstance(body, (list, tuple)) or len(body) != 2:
            raise TimeScaleError("interval cell must be [lo, hi]")
        return interval(*body)
    if kind == "points":
        return points(body)
    if kind == "arithmetic":
        return arithmetic(float(body["start"]), float(body["step"]), int(body["count"]))
    if kind == "geometric":
        return geometric(float(body["start"]), float(body["ratio"]), int(body["count"]))
    raise TimeScaleError(f"unknown cell kind {kind!r}")


@dataclass(frozen=True)
class Jumps:
    rho: float
    sigma: float
    nu: float


class TimeScale:
    """Immutable finite union of cells with anchor ``t0`` and truncation ``horizon``."""

    def __init__(self, cells: Sequence[Cell], t0: float, horizon: float, sturmian: bool):
        self._cells = tuple(cells)
        self.t0 = float(t0)
        self.horizon = float(horizon)
        self.sturmian = sturmian

    @property
    def cells(self) -> tuple:
        return self._cells

    @property
    def minimum(self) -> float:
        return self._cells[0].first

    def __repr__(self):
        return (f"TimeScale(cells={list(self._cells)!r}, t0={self.t0}, "
                f"horizon={self.horizon}, sturmian={self.sturmian})")

    # -- membership -------------------------------------------------------

    def _locate(self, t: float):
        """Return ``(cell_index, point_index_or_None, snapped_t)`` or raise."""
        firsts = [c.first for c in self._cells]
        k = bisect.bisect_right(firsts, t + _REL_TOL * max(1.0, abs(t))) - 1
        for j in (k, k - 1, k + 1):
            if 0 <= j < len(self._cells):
                c = self._cells[j]
                if isinstance(c, Interval):
                    if _close(t, c.lo):
                        return j, None, c.lo
                    if _close(t, c.hi):
                        return j, None, c.hi
                    if c.lo < t < c.hi:
                        return j, None, t
                else:
                    i = bisect.bisect_left(c.values, t)
                    for ii in (i - 1, i):
                        if 0 <= ii < len(c.values) and _close(c.values[ii], t):
                            return j, ii, c.values[ii]
        raise NotInTimeScale(t)

    def __contains__(self, t) -> bool:
        try:
            _, _, s = self._locate(float(t))
        except NotInTimeScale:
            return False
        return s <= self.horizon or _close(s, self.horizon)

    def snap(self, t: float) -> float:
        """Return the stored representative of ``t`` (absorbs float noise)."""
        if t not in self:
            raise NotInTimeScale(t)
        return self._locate(float(t))[2]

    def cell_of(self, t: float) -> Cell:
        return self._cells[self._locate(float(t))[0]]

    # -- jumps -------------------------------------------------------------

    def rho(self, t: float) -> float:
        j, i, s = self._locate(float(t))
        c = self._cells[j]
        if isinstance(c, Interval):
            if s > c.lo:
                return s
        elif i > 0:
            return c.values[i - 1]
        return self._cells[j - 1].last if j > 0 else s

    def sigma(self, t: float) -> float:
        j, i, s = self._locate(float(t))
        if _close(s, self.horizon):
            return s
        c = self._cells[j]
        if isinstance(c, Interval):
            if s < c.hi:
                return s
        elif i < len(c.values) - 1:
            return c.values[i + 1]
        if j + 1 < len(self._cells):
            nxt = self._cells[j + 1].first
            return nxt if nxt <= self.horizon else s
        return s

    def jumps(self, t: float) -> Jumps:
        """Backward jump, forward jump and graininess at ``t``."""
        if t not in self:
            raise NotInTimeScale(t)
        r = self.rho(t)
        s = self.snap(t)
        return Jumps(rho=r, sigma=self.sigma(t), nu=s - r)

    def nu(self, t: float) -> float:
        return self.jumps(t).nu

    # -- enumeration --------------------------------------------------------

    def breakpoints(self, a: float, b: float) -> list[float]:
        """All scattered points and interval endpoints of the scale inside ``[a, b]``."""
        out = []
        for c in self._cells:
            vals = (c.lo, c.hi) if isinstance(c, Interval) else c.values
            out.extend(v for v in vals if a - _REL_TOL * max(1, abs(a)) <= v <= b + _REL_TOL * max(1, abs(b)))
        return out


def build_timescale(cells: Sequence[Cell | dict], t0: float, horizon: float | None = None,
                    force: bool = False) -> TimeScale:
    """Validate cells and return a :class:`TimeScale`.

    Cells must be disjoint and increasing.  Unless ``force`` is set, the jump
    operators must commute at every representable point of ``[t0, horizon]``
    other than the two truncation edges (the minimum, where ``rho`` is the
    identity, and the horizon, where ``sigma`` is).  A dense interval touching
    any other cell therefore fails validation.  Forced scales are marked
    non-Sturmian and the right partial shift refuses to run on them.
    """
    cells = [cell_from_dict(c) if isinstance(c, dict) else c for c in cells]
    if not cells:
        raise TimeScaleError("time scale needs at least one cell")
    for prev, nxt in zip(cells, cells[1:]):
        if not prev.last < nxt.first:
            raise TimeScaleError(
                f"cells overlap or are out of order: {prev!r} then {nxt!r}")
    top = cells[-1].last
    horizon = top if horizon is None else float(horizon)

    # truncate at the horizon
    kept = []
    for c in cells:
        if c.first > horizon + _REL_TOL * max(1.0, abs(horizon)):
            break
        if isinstance(c, Interval) and c.hi > horizon and not _close(c.hi, horizon):
            if _close(c.lo, horizon) or c.lo > horizon:
                c = Points((c.lo,))
            else:
                c = Interval(c.lo, horizon)
        elif isinstance(c, Points):
            vals = tuple(v for v in c.values if v <= horizon or _close(v, horizon))
            c = Points(vals)
        kept.append(c)
    ts = TimeScale(kept, t0, horizon, sturmian=False)
    if horizon not in ts:
        raise NotInTimeScale(horizon, "horizon")
    ts.horizon = ts.snap(horizon)
    if t0 not in ts:
        raise NotInTimeScale(t0, "anchor t0")
    ts.t0 = ts.snap(t0)
    if not ts.t0 < ts.horizon:
        raise TimeScaleError("anchor t0 must lie strictly below the horizon")
    if force:
        return ts

    lo_edge = ts.minimum
    for t in ts.breakpoints(ts.t0, ts.horizon):
        if _close(t, lo_edge) or _close(t, ts.horizon):
            continue
        sr = ts.sigma(ts.rho(t))
        rs = ts.rho(ts.sigma(t))
        if not _close(sr, rs):
            raise SturmianViolation(t, sr, rs)
    ts.sturmian = True
    return ts


# -- grids --------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Ordered evaluation points of ``[a, b]`` in the scale.

    ``t`` and ``nu`` are read-only float arrays; ``scattered`` marks points
    taken from scattered cells.  ``h`` is the maximal dense step requested.
    """

    t: np.ndarray
    nu: np.ndarray
    scattered: np.ndarray
    h: float
    cell_bounds: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.t, self.nu, self.scattered, self.cell_bounds):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.t)

    @property
    def kind(self) -> list[str]:
        return ["scattered" if s else "dense" for s in self.scattered]

    @property
    def a(self) -> float:
        return float(self.t[0])

    @property
    def b(self) -> float:
        return float(self.t[-1])

    def index(self, t: float) -> int:
        """Index of the grid point equal to ``t`` (to relative 1e-12)."""
        k = int(np.searchsorted(self.t, t))
        for j in (k - 1, k, k + 1):
            if 0 <= j < len(self.t) and _close(self.t[j], t):
                return j
        raise NotInTimeScale(t, "grid point")

    def left_scattered(self) -> np.ndarray:
        """Boolean mask of points ``k >= 1`` reached by a jump from ``k - 1``."""
        mask = self.nu > 0
        mask = mask.copy()
        mask[0] = False
        return mask

    def truncate(self, b: float) -> "Grid":
        k = self.index(b)
        return Grid(self.t[: k + 1].copy(), self.nu[: k + 1].copy(),
                    self.scattered[: k + 1].copy(), self.h, self.cell_bounds[: k + 1].copy())


def make_grid(ts: TimeScale, a: float, b: float, h: float | None = None,
              anchors: Iterable[float] = ()) -> Grid:
    """Evaluation points covering ``[a, b]`` of the time scale.

    Every scattered point in range appears once with its true graininess;
    each dense stretch is cut at the ``anchors`` it contains and each piece
    is subdivided uniformly with spacing at most ``h``.  ``h`` defaults to
    1/1024 of the longest dense stretch in range.
    """
    if a not in ts:
        raise NotInTimeScale(a, "grid start")
    if b not in ts:
        raise NotInTimeScale(b, "grid end")
    a, b = ts.snap(a), ts.snap(b)
    if not a < b:
        raise TimeScaleError("grid needs a < b")
    pieces = []
    for c in ts.cells:
        if c.last < a or c.first > b:
            continue
        if isinstance(c, Interval):
            lo, hi = max(c.lo, a), min(c.hi, b)
            if _close(lo, hi):
                pieces.append(("pt", lo, c))
            else:
                pieces.append(("iv", lo, hi, c))
        else:
            for v in c.values:
                if a <= v <= b:
                    pieces.append(("pt", v, c))
    if h is None:
        spans = [p[2] - p[1] for p in pieces if p[0] == "iv"]
        h = max(spans) / 1024 if spans else 1.0
    if not h > 0:
        raise TimeScaleError("grid step h must be positive")
    anchors = sorted(float(x) for x in anchors)

    ts_list, nu_list, sc_list, bounds = [], [], [], []

    def push(t, scattered, lo, hi, nu=None):
        if ts_list and _close(ts_list[-1], t):
            return
        ts_list.append(t)
        nu_list.append(ts.nu(t) if nu is None else nu)
        sc_list.append(scattered)
        bounds.append((lo, hi))

    for p in pieces:
        if p[0] == "pt":
            c = p[2]
            lo, hi = (c.lo, c.hi) if isinstance(c, Interval) else (p[1], p[1])
            push(p[1], isinstance(c, Points), lo, hi)
            continue
        _, lo, hi, c = p
        cuts = [lo] + [x for x in anchors if lo < x < hi and not _close(x, lo) and not _close(x, hi)] + [hi]
        push(lo, False, c.lo, c.hi)
        for u, v in zip(cuts, cuts[1:]):
            n = max(1, math.ceil((v - u) / h - 1e-9))
            for k in range(1, n + 1):
                push(u + (v - u) * k / n if k < n else v, False, c.lo, c.hi, nu=0.0)
    t = np.array(ts_list, dtype=float)
    nu = np.array(nu_list, dtype=float)
    return Grid(t, nu, np.array(sc_list, dtype=bool), float(h), np.array(bounds, dtype=float))


# -- nabla integration ---------------------------------------------------------


def _dense_runs(grid: Grid):
    """Yield ``(start, stop)`` index pairs: points ``start..stop`` joined by dense segments."""
    n = len(grid)
    k = 1
    while k < n:
        if grid.nu[k] > 0:
            k += 1
            continue
        s = k - 1
        while k < n and grid.nu[k] == 0:
            k += 1
        yield s, k - 1


def _samples(grid: Grid, f) -> np.ndarray:
    if callable(f):
        return np.asarray([np.asarray(f(float(t)), dtype=complex) for t in grid.t])
    arr = np.asarray(f)
    if arr.shape[0] != len(grid):
        raise ValueError(f"expected {len(grid)} samples, got {arr.shape[0]}")
    return arr


def _cumulative_simpson(seg, x):
    # scipy's cumulative Simpson drops imaginary parts
    if np.iscomplexobj(seg):
        re = integrate.cumulative_simpson(seg.real, x=x, axis=0, initial=0)
        im = integrate.cumulative_simpson(seg.imag, x=x, axis=0, initial=0)
        return re + 1j * im
    return integrate.cumulative_simpson(seg, x=x, axis=0, initial=0)


def cumulative_nabla_integral(grid: Grid, f, method: str = "simpson") -> np.ndarray:
    """Running integral ``int_{(t_0, t_k]} f nabla t`` for every grid index ``k``.

    Scattered segments contribute ``nu(t_k) f(t_k)`` exactly.  Dense runs use
    composite Simpson (Richardson-refined trapezoid) or plain trapezoid.
    """
    y = _samples(grid, f)
    inc = np.zeros_like(y, dtype=np.result_type(y.dtype, float))
    jump = grid.left_scattered()
    if jump.any():
        w = grid.nu[jump].reshape((-1,) + (1,) * (y.ndim - 1))
        inc[jump] = w * y[jump]
    for s, e in _dense_runs(grid):
        x = grid.t[s:e + 1]
        seg = y[s:e + 1]
        if method == "simpson" and e - s >= 2:
            run = _cumulative_simpson(seg, x)
        elif method in ("simpson", "trapezoid"):
            run = integrate.cumulative_trapezoid(seg, x=x, axis=0, initial=0)
        else:
            raise ValueError(f"unknown quadrature method {method!r}")
        inc[s + 1:e + 1] = np.diff(run, axis=0)
    return np.cumsum(inc, axis=0)


def nabla_integrate(grid: Grid, f, method: str = "simpson"):
    """``int_{(a, b]} f nabla t`` over the grid's range.

    ``f`` is either a callable of ``t`` or an array of samples whose first axis
    runs over the grid points.  The result has the shape of one sample.
    """
    y = _samples(grid, f)
    total = np.zeros(y.shape[1:], dtype=np.result_type(y.dtype, float))
    jump = grid.left_scattered()
    if jump.any():
        w = grid.nu[jump].reshape((-1,) + (1,) * (y.ndim - 1))
        total = total + (w * y[jump]).sum(axis=0)
    for s, e in _dense_runs(grid):
        x = grid.t[s:e + 1]
        seg = y[s:e + 1]
        if method == "simpson" and e - s >= 2:
            total = total + integrate.simpson(seg, x=x, axis=0)
        else:
            total = total + integrate.trapezoid(seg, x=x, axis=0)
    return total[()] if total.ndim == 0 else total


def integrate_on(ts: TimeScale, f: Callable, a: float, b: float, h: float | None = None,
                 method: str = "simpson"):
    """Convenience: build a grid on ``[a, b]`` and integrate the callable ``f``."""
    return nabla_integrate(make_grid(ts, a, b, h), f, method)
