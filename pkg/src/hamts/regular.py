"""Regular boundary-value problem on ``[rho(t0), b]``: boundary pairs, characteristic
determinant, real eigenvalue search, eigenfunctions and weighted inner products."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BoundaryError, NumericalError
from .exprfield import CoefficientField, symplectic_J
from .propagate import DEFAULT_RTOL, propagate_end, propagate_fundamental, weighted_gram
from .system import _H, shift_samples
from .timescale import Grid, TimeScale, make_grid, nabla_integrate

BOUNDARY_TOL = 1e-10


@dataclass(frozen=True)
class BoundaryPair:
    alpha: np.ndarray
    beta: np.ndarray
    M: np.ndarray
    N: np.ndarray

    @property
    def d(self) -> int:
        return self.alpha.shape[0]


def _check_row_block(name: str, m: np.ndarray, d: int):
    if m.shape != (d, 2 * d):
        raise BoundaryError(f"{name} must be {d}x{2 * d}, got {m.shape[0]}x{m.shape[1]}")
    if np.linalg.matrix_rank(m, tol=BOUNDARY_TOL) != d:
        raise BoundaryError(f"{name} must have rank {d}")
    gram = m @ _H(m)
    dev = np.linalg.norm(gram - np.eye(d))
    if dev > BOUNDARY_TOL:
        raise BoundaryError(
            f"{name} violates the normalization {name}{name}* = I "
            f"({name}{name}* = {np.array2string(gram, precision=6)}, deviation {dev:.3g})")
    iso = m @ symplectic_J(d) @ _H(m)
    if np.linalg.norm(iso) > BOUNDARY_TOL:
        raise BoundaryError(
            f"{name} violates isotropy {name}J{name}* = 0 (norm {np.linalg.norm(iso):.3g})")


def as_row_block(value, d: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=complex)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise BoundaryError("boundary matrix must be one- or two-dimensional")
    return arr


def validate_boundary(alpha, beta) -> BoundaryPair:
    """Check rank, normalization and isotropy of the separated conditions and build ``M``, ``N``."""
    alpha = as_row_block(alpha)
    beta = as_row_block(beta)
    d = alpha.shape[0]
    _check_row_block("alpha", alpha, d)
    _check_row_block("beta", beta, d)
    J = symplectic_J(d)
    z = np.zeros((2 * d, d), dtype=complex)
    M = np.concatenate([-J @ _H(alpha), z], axis=1)
    N = np.concatenate([z, J @ _H(beta)], axis=1)
    if np.linalg.matrix_rank(np.concatenate([M, N], axis=0), tol=BOUNDARY_TOL) != 2 * d:
        raise BoundaryError("stacked boundary matrices (M; N) must have rank 2d")
    for nm, X in (("M", M), ("N", N)):
        if np.linalg.norm(_H(X) @ J @ X) > BOUNDARY_TOL:
            raise BoundaryError(f"{nm}*J{nm} must vanish")
    for arr in (alpha, beta, M, N):
        arr.setflags(write=False)
    return BoundaryPair(alpha, beta, M, N)


def problem_grid(ts: TimeScale, b: float, h: float | None = None, anchors=()) -> Grid:
    """Grid on ``[rho(t0), b]``."""
    return make_grid(ts, ts.rho(ts.t0), b, h, anchors)


def char_det(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, b: float, lam,
             h: float | None = None, rtol: float = DEFAULT_RTOL, grid: Grid | None = None):
    """``det(Phi(b, lam) M - N)``; ``lam`` may be a scalar or an array."""
    grid = grid if grid is not None else problem_grid(ts, b, h)
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    Phi = propagate_end(field, grid, lam_arr, rtol=rtol)
    vals = np.linalg.det(Phi @ bp.M - bp.N)
    return complex(vals[0]) if np.ndim(lam) == 0 else vals


@dataclass
class EigenList:
    """Eigenvalues ordered by modulus (negative first on ties) with eigenfunction data.

    ``functions[j]`` holds samples ``(n, 2d, m_j)`` on ``grid`` of an orthonormal
    basis of the ``j``-th eigenspace; ``xi[j]`` the matching coefficient vectors.
    """

    values: np.ndarray
    multiplicities: np.ndarray
    xi: list = dc_field(default_factory=list)
    functions: list = dc_field(default_factory=list)
    grid: Grid | None = None
    imag_estimates: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.values)

    @property
    def repeated(self) -> np.ndarray:
        """Eigenvalues listed once per multiplicity."""
        return np.repeat(self.values, self.multiplicities)


def _order_key(v: float):
    return (abs(v), 0 if v < 0 else 1)


def _candidates(lams: np.ndarray, f: np.ndarray) -> list[int]:
    """Indices of scan points whose local linear model of ``f`` nearly reaches zero.

    ``f`` is complex and need not change sign, so a local minimum of ``|f|`` is
    kept when the distance from the origin to the line ``f_k + f'(k) s`` (over
    real ``s`` within about one scan step) is below ``1e-3`` of the median of ``|f|``.
    """
    a = np.abs(f)
    med = np.median(a)
    n = len(f)
    out = []
    for k in range(n):
        left = a[k - 1] if k > 0 else np.inf
        right = a[k + 1] if k < n - 1 else np.inf
        if not (a[k] <= left and a[k] <= right):
            continue
        if a[k] == 0:
            out.append(k)
            continue
        lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        if hi == lo:
            continue
        slope = (f[hi] - f[lo]) / (lams[hi] - lams[lo])
        if slope == 0:
            continue
        s_star = -np.real(f[k] * np.conj(slope)) / abs(slope) ** 2
        dist = abs(f[k] + slope * s_star)
        step = lams[1] - lams[0] if n > 1 else 1.0
        if abs(s_star) <= 1.5 * step and dist < 1e-3 * med:
            out.append(k)
    return out


def _polish(fn, x0: float, step: float, lo: float, hi: float, max_iter: int = 60):
    """Gauss-Newton/secant minimization of ``|f|`` along the real axis."""
    x_prev, x = x0 - 0.25 * step, x0
    f_prev, fx = fn(x_prev), fn(x)
    for _ in range(max_iter):
        if fx == 0:
            return x
        slope = (fx - f_prev) / (x - x_prev)
        if slope == 0 or not np.isfinite(slope):
            break
        dx = -np.real(fx * np.conj(slope)) / abs(slope) ** 2
        x_prev, f_prev = x, fx
        x = x + dx
        if not (lo - 3 * step <= x <= hi + 3 * step):
            raise NumericalError(
                f"eigenvalue polish left the bracket near {x0:.6g}; scan resolution too coarse")
        fx = fn(x)
        if abs(dx) <= 4e-16 * max(1.0, abs(x)):
            return x
    return x


def find_eigenvalues(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, b: float,
                     lambda_lo: float, lambda_hi: float, max_count: int | None = None,
                     scan_points: int = 2001, h: float | None = None,
                     rtol: float = DEFAULT_RTOL) -> EigenList:
    """Real eigenvalues in ``[lambda_lo, lambda_hi]`` with orthonormal eigenfunctions."""
    grid = problem_grid(ts, b, h)
    if not lambda_hi > lambda_lo:
        return EigenList(np.zeros(0), np.zeros(0, dtype=int), grid=grid)
    d = field.d
    lams = np.linspace(lambda_lo, lambda_hi, scan_points)
    MN = lambda Phi: Phi @ bp.M - bp.N
    f = np.linalg.det(MN(propagate_end(field, grid, lams, rtol=rtol)))
    step = lams[1] - lams[0]

    def fn(x):
        return complex(np.linalg.det(MN(propagate_end(field, grid, [x], rtol=rtol)[0])))

    roots = []
    for k in _candidates(lams, f):
        x = _polish(fn, float(lams[k]), step, lambda_lo, lambda_hi)
        if lambda_lo - 1e-12 <= x <= lambda_hi + 1e-12:
            roots.append(min(max(x, lambda_lo), lambda_hi))
    roots.sort()

    # verify, measure null space, merge clusters
    merged: list[list[float]] = []
    for x in roots:
        if merged and abs(x - merged[-1][-1]) <= 1e-8 * max(1.0, abs(x)):
            merged[-1].append(x)
        else:
            merged.append([x])
    values, mults, xis, imag = [], [], [], []
    for cluster in merged:
        x = float(np.mean(cluster))
        G = MN(propagate_end(field, grid, [x], rtol=rtol)[0])
        k, kernel = _kernel(G, d)
        if k == 0:
            continue  # near-miss of |f| with no kernel: not an eigenvalue
        distinct = len({round(c, 12) for c in cluster})
        values.append(x)
        mults.append(max(k, distinct))
        xis.append(kernel)
        # one complex Newton step from the real root estimates the imaginary drift
        dz = 1e-6 * max(1.0, abs(x))
        f0, f1 = fn(x), fn(x + dz)
        imag.append(abs(np.imag(-f0 * dz / (f1 - f0))) if f1 != f0 else 0.0)
    order = sorted(range(len(values)), key=lambda i: _order_key(values[i]))
    if max_count is not None:
        order = order[: int(max_count)]
    values = np.array([values[i] for i in order], dtype=float)
    mults = np.array([mults[i] for i in order], dtype=int)
    xis = [xis[i] for i in order]
    imag = np.array([imag[i] for i in order], dtype=float)

    functions, xi_out = [], []
    for x, xi in zip(values, xis):
        traj = propagate_fundamental(field, ts, x, None, grid, rtol=rtol)
        Y = traj.samples @ (bp.M @ xi)
        gram = _weighted(field, grid, Y, Y)
        gram = 0.5 * (gram + _H(gram))
        try:
            Lc = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigenfunction at lambda={x:.12g} has no positive weighted norm") from exc
        T = _H(np.linalg.inv(Lc))
        functions.append(Y @ T)
        xi_out.append(xi @ T)
    return EigenList(values, mults, xi_out, functions, grid, imag)


def _kernel(G: np.ndarray, d: int) -> tuple[int, np.ndarray]:
    """Null space of ``G = Phi(b) M - N`` measured by principal angles.

    ``G = [G1 | G2]`` with ``G1 = Phi(b) (-J alpha*)`` and ``G2 = -J beta*``.
    Growing solutions make ``G1`` badly conditioned, so each block is
    orthonormalized and the null space of ``[Q1 | Q2]`` is counted instead:
    singular values below ``1e-8`` (relative) or below the roundoff level
    ``100 eps cond(R1)`` carried by ``Q1`` are treated as zero.
    """
    Q1, R1 = np.linalg.qr(G[:, :d])
    Q2, R2 = np.linalg.qr(G[:, d:])
    _, s, vh = np.linalg.svd(np.concatenate([Q1, Q2], axis=1))
    noise = 100 * np.finfo(float).eps * np.linalg.cond(R1)
    k = int(np.sum(s <= max(1e-8 * s[0], noise)))
    if k == 0:
        return 0, np.zeros((2 * d, 0), dtype=complex)
    v = _H(vh[-k:])
    xi = np.concatenate([np.linalg.lstsq(R1, v[:d], rcond=None)[0],
                         np.linalg.lstsq(R2, v[d:], rcond=None)[0]], axis=0)
    return k, xi / np.linalg.norm(xi, axis=0)


def _weighted(field: CoefficientField, grid: Grid, y: np.ndarray, z: np.ndarray):
    W = field.blocks(grid.t, grid.nu).W
    Uy = shift_samples(y, grid)
    Uz = shift_samples(z, grid)
    return nabla_integrate(grid, _H(Uz) @ W @ Uy)


def weighted_inner_product(field: CoefficientField, grid: Grid, y, z, b: float | None = None):
    """``int_(rho(t0), b] (U z)* W (U y)`` for paths sampled on ``grid``.

    ``y`` and ``z`` are arrays ``(n, 2d)`` or ``(n, 2d, m)``; ``b`` truncates the grid.
    """
    y = np.asarray(y, dtype=complex)
    z = np.asarray(z, dtype=complex)
    vec = y.ndim == 2
    if vec:
        y, z = y[..., None], z[..., None]
    if b is not None:
        k = grid.index(b)
        grid, y, z = grid.truncate(b), y[: k + 1], z[: k + 1]
    out = _weighted(field, grid, y, z)
    return complex(out[0, 0]) if vec else out


def eigen_gram(field: CoefficientField, eig: EigenList) -> np.ndarray:
    """Weighted Gram matrix of all eigenfunctions in ``eig`` (identity when orthonormal)."""
    if not eig.functions:
        return np.zeros((0, 0), dtype=complex)
    Y = np.concatenate(eig.functions, axis=2)
    return _weighted(field, eig.grid, Y, Y)


def gram_K(field: CoefficientField, ts: TimeScale, lam: complex, t: float,
           h: float | None = None, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """``K(t, lam) = int_(rho(t0), t] (U Phi)* W (U Phi)``."""
    start = ts.rho(ts.t0)
    n2 = 2 * field.d
    if ts.snap(t) == start:
        return np.zeros((n2, n2), dtype=complex)
    grid = make_grid(ts, start, t, h)
    traj = propagate_fundamental(field, ts, lam, None, grid, rtol=rtol)
    return weighted_gram(field, traj)
