"""First-order system matrix, regressivity, partial shifts and the definiteness check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CoefficientError, DefinitenessError, TimeScaleError
from .exprfield import Blocks, CoefficientField, symplectic_J
from .timescale import Grid, TimeScale, make_grid


def _H(m):
    return np.conj(np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class SystemMatrix:
    S: np.ndarray
    E: np.ndarray
    nu: float

    @property
    def step(self) -> np.ndarray:
        """``I - nu S``, the matrix inverted by one backward step."""
        return np.eye(self.S.shape[-1]) - self.nu * self.S


def _E(blocks: Blocks, nu):
    d = blocks.A.shape[-1]
    nu = np.asarray(nu, dtype=float)[..., None, None]
    M = np.eye(d) - nu * blocks.A
    smin = np.linalg.svd(M, compute_uv=False)[..., -1]
    if np.any(smin <= 1e-13 * np.maximum(1.0, np.linalg.norm(M, 2, axis=(-2, -1)))):
        raise CoefficientError("I - nu*A is singular")
    return np.linalg.inv(M)


def system_blocks(blocks: Blocks, nu, lam) -> tuple[np.ndarray, np.ndarray]:
    """``S`` and ``E`` from evaluated blocks; ``blocks``, ``nu`` and ``lam`` broadcast."""
    lam = np.asarray(lam, dtype=complex)[..., None, None]
    E = _E(blocks, nu)
    Es = _H(E)
    BW = blocks.B + lam * blocks.W2
    CW = blocks.C - lam * blocks.W1
    nu_ = np.asarray(nu, dtype=float)[..., None, None]
    top = np.concatenate([np.broadcast_to(blocks.A, BW.shape) - nu_ * BW @ Es @ CW, BW @ Es], axis=-1)
    bot = np.concatenate([Es @ CW, np.broadcast_to(-Es @ _H(blocks.A), CW.shape)], axis=-1)
    return np.concatenate([top, bot], axis=-2), E


def assemble_S(field: CoefficientField, ts: TimeScale | None, t: float, lam: complex,
               nu: float | None = None) -> SystemMatrix:
    """System matrix of ``y^nabla = S(t, lam) y`` at ``t``; ``nu`` defaults to the scale's graininess."""
    if nu is None:
        nu = ts.nu(t)
    S, E = system_blocks(field.blocks(t, nu), nu, lam)
    return SystemMatrix(S, E, float(nu))


def dense_pencil(blocks: Blocks) -> tuple[np.ndarray, np.ndarray]:
    """``(S0, S1)`` with ``S = S0 + lam S1`` at graininess zero."""
    A, B, C, W1, W2 = blocks.A, blocks.B, blocks.C, blocks.W1, blocks.W2
    S0 = np.concatenate([np.concatenate([A, B], -1), np.concatenate([C, -_H(A)], -1)], -2)
    z = np.zeros_like(W1)
    S1 = np.concatenate([np.concatenate([z, W2], -1), np.concatenate([-W1, z], -1)], -2)
    return S0, S1


def check_regressivity(sm: SystemMatrix) -> float:
    """``||(I - nu S)^* J (I - nu S) - J||_F``; raises if ``I - nu S`` is singular."""
    n = sm.S.shape[-1]
    J = symplectic_J(n // 2)
    G = sm.step
    if np.linalg.svd(G, compute_uv=False)[-1] <= 1e-14 * max(1.0, np.linalg.norm(G, 2)):
        raise CoefficientError("I - nu*S is singular")
    if sm.nu == 0:
        return 0.0
    return float(np.linalg.norm(_H(G) @ J @ G - J))


# -- partial shifts ------------------------------------------------------------------


def apply_shift(y, direction: str, grid: Grid | None = None, ts: TimeScale | None = None):
    """Partial shift of the lower half of a ``2d`` path.

    ``direction="left"`` replaces ``y2(t)`` by ``y2(rho(t))``, ``"right"`` by
    ``y2(sigma(t))``.  ``y`` is either a callable of ``t`` (needs ``ts``) or
    an array of samples on ``grid`` with the ``2d`` axis second.  Sampled
    values whose shifted partner lies outside the grid are set to NaN.
    """
    if direction not in ("left", "right"):
        raise ValueError("direction must be 'left' or 'right'")
    if direction == "right" and ts is not None and not ts.sturmian:
        raise TimeScaleError("the right partial shift needs a validated Sturmian time scale")
    if callable(y):
        if ts is None:
            raise ValueError("shifting a callable path needs the time scale")
        jump = ts.rho if direction == "left" else ts.sigma

        def shifted(t):
            a = np.array(y(t), dtype=complex)
            b = np.asarray(y(jump(t)), dtype=complex)
            h = a.shape[0] // 2
            a[h:] = b[h:]
            return a
        return shifted
    if grid is None:
        raise ValueError("shifting samples needs the grid")
    arr = np.array(y, dtype=complex)
    h = arr.shape[1] // 2
    out = arr.copy()
    n = len(grid)
    if direction == "left":
        jump = grid.left_scattered()
        idx = np.flatnonzero(jump)
        out[idx, h:] = arr[idx - 1, h:]
        if grid.nu[0] > 0:
            out[0, h:] = np.nan
    else:
        nxt = np.zeros(n, dtype=bool)
        nxt[:-1] = grid.left_scattered()[1:]
        idx = np.flatnonzero(nxt)
        out[idx, h:] = arr[idx + 1, h:]
        last = grid.t[-1]
        if ts is not None and ts.sigma(last) != last:
            out[-1, h:] = np.nan
    return out


def shift_samples(samples: np.ndarray, grid: Grid) -> np.ndarray:
    """Left partial shift of sampled matrices (identity at the first grid point)."""
    out = np.array(samples, copy=True)
    h = out.shape[1] // 2
    idx = np.flatnonzero(grid.left_scattered())
    out[idx, h:] = samples[idx - 1, h:]
    return out


# -- definiteness -----------------------------------------------------------------


def default_candidates(grid: Grid, count: int = 16) -> np.ndarray:
    """``count`` grid points spread evenly over ``(grid.a, grid.b]``."""
    targets = grid.a + (grid.b - grid.a) * np.arange(1, count + 1) / count
    idx = np.unique(np.clip(np.searchsorted(grid.t, targets - 1e-12 * np.maximum(1, abs(targets))), 1, len(grid) - 1))
    return grid.t[idx]


def check_definiteness(field: CoefficientField, ts: TimeScale, lam: complex = 1j,
                       t_candidates=None, h: float | None = None, rtol: float = 1e-10) -> float:
    """Smallest candidate ``t1`` where the weighted Gram matrix of the fundamental matrix is definite.

    The Gram matrix ``K(t)`` is nondecreasing in ``t``, so positivity at a
    candidate carries to every later point.  Positivity is judged against
    ``1e-12 * int trace W``; checking the ``2d`` fundamental columns
    suffices by linearity only once the whole Gram matrix is definite,
    which is why the minimal eigenvalue is used rather than column norms.
    """
    from .propagate import propagate_fundamental

    start = ts.rho(ts.t0)
    anchors = () if t_candidates is None else [ts.snap(float(c)) for c in t_candidates if c > start]
    grid = make_grid(ts, start, ts.horizon, h, anchors)
    traj = propagate_fundamental(field, ts, lam, None, grid, rtol=rtol)
    blocks = field.blocks(grid.t, grid.nu)
    W = blocks.W
    Y = shift_samples(traj.samples, grid)
    from .timescale import cumulative_nabla_integral
    K = cumulative_nabla_integral(grid, _H(Y) @ W @ Y)
    trW = cumulative_nabla_integral(grid, np.real(np.trace(W, axis1=-2, axis2=-1)))
    cands = default_candidates(grid) if t_candidates is None else np.sort(np.asarray(t_candidates, float))
    for c in cands:
        if c <= start:
            continue
        k = grid.index(ts.snap(float(c)))
        Kh = 0.5 * (K[k] + _H(K[k]))
        tol = 1e-12 * float(np.real(trW[k]))
        if tol > 0 and np.linalg.eigvalsh(Kh)[0] > tol:
            return float(grid.t[k])
    raise DefinitenessError(
        "definiteness condition not attained by the horizon: the weighted Gram matrix "
        "of the fundamental matrix stays singular (weights too degenerate)")
