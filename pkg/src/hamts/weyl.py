"""Weyl disks, m-functions, their limits as ``b`` grows, and endpoint classification.

All quantities are built from the matrix solution ``Y`` with
``Y(rho(t0)) = Omega = (alpha*, J alpha*)``; ``theta`` and ``phi`` are its
left and right ``d`` columns.  Quantities whose direct formula cancels large
numbers (the disk form ``C(M, b)``, the Weyl solution ``chi``) are evaluated
through better-conditioned equivalents, noted at each function.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ClassificationInconclusive, DefinitenessError, NumericalError
from .exprfield import CoefficientField, symplectic_J
from .propagate import (DEFAULT_RTOL, Trajectory, propagate_backward, propagate_fundamental)
from .regular import BoundaryPair, as_row_block, problem_grid
from .system import _H, shift_samples
from .timescale import Grid, TimeScale, cumulative_nabla_integral

FINITE_RATIO = 1.05
DIVERGING_PER_DOUBLING = 2.0
PLATEAU_TOL = 1e-6
SQRT_FLOOR = 1e-14


def omega(alpha) -> np.ndarray:
    """Initial value ``(alpha*, J alpha*)``; symplectic and unitary for admissible ``alpha``."""
    alpha = as_row_block(alpha)
    d = alpha.shape[0]
    return np.concatenate([_H(alpha), symplectic_J(d) @ _H(alpha)], axis=1)


def _sign(lam: complex) -> int:
    """``-1`` for the upper half plane, ``+1`` for the lower (the ``-/+`` in ``F``)."""
    if lam.imag == 0:
        raise NumericalError("Weyl quantities need a non-real spectral parameter")
    return -1 if lam.imag > 0 else 1


def hermitian_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + _H(m))


def imag_part(m: np.ndarray) -> np.ndarray:
    """Hermitian imaginary part ``(M - M*) / 2i``."""
    return (m - _H(m)) / 2j


def inv_sqrt_hermitian(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """``a^{-1/2}`` for Hermitian positive definite ``a`` via eigendecomposition.

    Eigenvalues are clamped at ``1e-14`` (relative to the largest) before
    inversion; a nonpositive smallest eigenvalue is reported as singular.
    """
    w, v = np.linalg.eigh(hermitian_part(a))
    if w[0] <= 0:
        raise NumericalError(f"{what} is not positive definite (min eigenvalue {w[0]:.3g})")
    w = np.maximum(w, SQRT_FLOOR * w[-1])
    return (v / np.sqrt(w)) @ _H(v)


# -- basis, F, disk -----------------------------------------------------------------


@dataclass(frozen=True)
class WeylBasis:
    traj: Trajectory
    alpha: np.ndarray

    @property
    def d(self) -> int:
        return self.alpha.shape[0]

    @property
    def lam(self) -> complex:
        return self.traj.lam

    @property
    def grid(self) -> Grid:
        return self.traj.grid

    @property
    def theta(self) -> np.ndarray:
        return self.traj.samples[:, :, : self.d]

    @property
    def phi(self) -> np.ndarray:
        return self.traj.samples[:, :, self.d:]


def build_Y(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, lam: complex,
            grid: Grid | None = None, b: float | None = None, h: float | None = None,
            rtol: float = DEFAULT_RTOL, anchors=()) -> WeylBasis:
    """Propagate ``Y`` from ``Omega`` over ``grid`` (default: ``[rho(t0), b]``)."""
    if grid is None:
        grid = problem_grid(ts, ts.horizon if b is None else b, h, anchors)
    traj = propagate_fundamental(field, ts, complex(lam), omega(bp.alpha), grid, rtol=rtol)
    return WeylBasis(traj, bp.alpha)


@dataclass(frozen=True)
class WeylData:
    """``F(b, lam)`` from the boundary form and from the weighted integral."""

    F: np.ndarray
    F_integral: np.ndarray
    b: float
    lam: complex
    Yb: np.ndarray

    @property
    def d(self) -> int:
        return self.F.shape[0] // 2

    @property
    def F11(self):
        return self.F[: self.d, : self.d]

    @property
    def F12(self):
        return self.F[: self.d, self.d:]

    @property
    def F22(self):
        return self.F[self.d:, self.d:]

    @property
    def dual_residual(self) -> float:
        """``||F_boundary - F_integral||_F`` (absolute)."""
        return float(np.linalg.norm(self.F - self.F_integral))

    @property
    def dual_residual_rel(self) -> float:
        return self.dual_residual / max(1.0, float(np.linalg.norm(self.F)))

    @property
    def hermitian_residual(self) -> float:
        return float(np.linalg.norm(self.F - _H(self.F)))


def _weighted_cumulative(field: CoefficientField, grid: Grid, samples: np.ndarray) -> np.ndarray:
    W = field.blocks(grid.t, grid.nu).W
    U = shift_samples(samples, grid)
    return cumulative_nabla_integral(grid, _H(U) @ W @ U)


def weyl_F_all(field: CoefficientField, basis: WeylBasis, b_list) -> list[WeylData]:
    """``F`` at every ``b`` of ``b_list`` (each must be a grid point), sharing one quadrature."""
    grid = basis.grid
    lam = basis.lam
    s = _sign(lam)
    J = symplectic_J(basis.d)
    K = _weighted_cumulative(field, grid, basis.traj.samples)
    out = []
    for b in b_list:
        k = grid.index(b)
        Yb = basis.traj.samples[k]
        F = s * 1j * (_H(Yb) @ J @ Yb)
        F_int = s * 1j * J + 2 * abs(lam.imag) * K[k]
        out.append(WeylData(F, F_int, float(grid.t[k]), lam, Yb.copy()))
    return out


def weyl_F(basis: WeylBasis, b: float, field: CoefficientField) -> WeylData:
    """``F(b, lam) = -/+ i Y*(b) J Y(b)`` with its integral-form cross-check."""
    return weyl_F_all(field, basis, [b])[0]


@dataclass(frozen=True)
class WeylDisk:
    center: np.ndarray
    radiusL: np.ndarray
    radiusR: np.ndarray
    b: float
    lam: complex

    def point(self, U: np.ndarray) -> np.ndarray:
        """Circle point ``C + R(lam) U R(conj lam)`` for unitary ``U`` (disk point if ``||U|| <= 1``)."""
        return self.center + self.radiusL @ U @ self.radiusR


def weyl_disk(wd: WeylData, wd_conj: WeylData) -> WeylDisk:
    """Center ``-F22^{-1} F12*`` and radii ``F22^{-1/2}`` at ``lam`` and ``conj lam``."""
    F22 = hermitian_part(wd.F22)
    try:
        center = -np.linalg.solve(F22, _H(wd.F12))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"F22 singular at b={wd.b}") from exc
    RL = inv_sqrt_hermitian(F22, f"F22(b={wd.b}, lam={wd.lam})")
    RR = inv_sqrt_hermitian(wd_conj.F22, f"F22(b={wd.b}, lam={wd_conj.lam})")
    return WeylDisk(center, RL, RR, wd.b, wd.lam)


def unitary_samples(d: int, count: int = 16, seed: int = 0) -> list[np.ndarray]:
    """Evenly spaced phases for ``d = 1``; Haar-random unitaries otherwise."""
    if d == 1:
        return [np.array([[np.exp(2j * np.pi * k / count)]]) for k in range(count)]
    from scipy.stats import unitary_group

    return list(unitary_group.rvs(d, size=count, random_state=seed).reshape(count, d, d))


def circle_points(disk: WeylDisk, count: int = 16, seed: int = 0) -> list[np.ndarray]:
    return [disk.point(U) for U in unitary_samples(disk.center.shape[0], count, seed)]


def disk_membership(M_test, wd: WeylData) -> float:
    """Largest eigenvalue of ``C(M, b) = (I, M*) F (I; M)``; ``<= 0`` inside the disk.

    Evaluated as ``-/+ i chi* J chi`` with ``chi = Y(b) (I; M)``, which equals
    the block form but avoids cancelling the large entries of ``F``.
    """
    M = np.atleast_2d(np.asarray(M_test, dtype=complex))
    d = wd.d
    chi = wd.Yb @ np.concatenate([np.eye(d), M], axis=0)
    C = _sign(wd.lam) * 1j * (_H(chi) @ symplectic_J(d) @ chi)
    return float(np.linalg.eigvalsh(hermitian_part(C))[-1])


def m_function(basis: WeylBasis, b: float, beta) -> np.ndarray:
    """``M(lam, b) = -(beta phi(b))^{-1} beta theta(b)``."""
    beta = as_row_block(beta)
    k = basis.grid.index(b)
    bphi = beta @ basis.phi[k]
    btheta = beta @ basis.theta[k]
    if np.linalg.cond(bphi) > 1e14:
        raise NumericalError(f"beta*phi(b) is singular at b={b} (lam is an eigenvalue)")
    return -np.linalg.solve(bphi, btheta)


def weyl_solution(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, lam: complex,
                  b: float, grid: Grid | None = None, beta=None, h: float | None = None,
                  rtol: float = DEFAULT_RTOL) -> tuple[np.ndarray, np.ndarray, Grid]:
    """``chi = Y (I; M(lam, b))`` on ``[rho(t0), b]`` and the matching ``M``.

    Solutions with ``beta y(b) = 0`` form the column space of ``J beta*``
    propagated backward from ``b``; normalizing by ``alpha chi(rho(t0)) = I``
    gives ``chi``, and ``M`` is read off ``Omega* chi(rho(t0))``.  Backward
    propagation keeps the decaying solution accurate where forward
    cancellation ``theta + phi M`` would not.
    """
    if grid is None:
        grid = problem_grid(ts, b, h)
    elif grid.b != b:
        grid = grid.truncate(b)
    beta = bp.beta if beta is None else as_row_block(beta)
    d = bp.d
    Z = propagate_backward(field, grid, complex(lam), symplectic_J(d) @ _H(beta), rtol=rtol)
    a0 = bp.alpha @ Z[0]
    chi = Z @ np.linalg.inv(a0)
    M = (_H(omega(bp.alpha)) @ chi[0])[d:]
    return chi, M, grid


def truncated_norms(field: CoefficientField, grid: Grid, samples: np.ndarray) -> np.ndarray:
    """Running ``int (U y)* W (U y)`` per column, shape ``(n, m)``."""
    K = _weighted_cumulative(field, grid, samples)
    return np.real(np.diagonal(K, axis1=-2, axis2=-1))


# -- limits and classification --------------------------------------------------------


@dataclass
class LimitReport:
    lam: complex
    b_list: list
    mu: np.ndarray                      # (len(b_list), d), ascending per row
    radius_norms: np.ndarray            # ||R(b, lam)||_F per b
    centers: list
    radii: list
    C0: np.ndarray
    R0: np.ndarray
    gamma: np.ndarray                   # extrapolated finite limits (NaN for diverging tracks)
    track_status: list                  # "finite" | "diverging" | "inconclusive"
    ratios: np.ndarray                  # mu(b_last) / mu(b_mid) per track
    b_mid: float
    loewner_slack: list = dc_field(default_factory=list)
    dual_residuals: list = dc_field(default_factory=list)

    @property
    def conclusive(self) -> bool:
        return "inconclusive" not in self.track_status

    @property
    def rank(self) -> int | None:
        if not self.conclusive:
            return None
        return sum(s == "finite" for s in self.track_status)


def _aitken(x0, x1, x2):
    """Aitken extrapolation of a sequence tail; falls back to the last value."""
    x0, x1, x2 = (np.asarray(v, dtype=complex) for v in (x0, x1, x2))
    den = x2 - 2 * x1 + x0
    out = x2.copy()
    ok = np.abs(den) > 1e-12 * np.maximum(1.0, np.abs(x2))
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = x2 - (x2 - x1) ** 2 / np.where(ok, den, 1)
    # only accept corrections that stay near the tail (monotone convergence)
    good = ok & (np.abs(cand - x2) <= np.abs(x2 - x1) * 10)
    out[good] = cand[good]
    return out


def track_status(ratio: float, b_mid: float, b_last: float) -> str:
    if ratio < FINITE_RATIO:
        return "finite"
    doublings = math.log2(b_last / b_mid)
    per_doubling = ratio ** (1.0 / doublings) if doublings > 0 else ratio
    return "diverging" if per_doubling >= DIVERGING_PER_DOUBLING else "inconclusive"


def _b_grid(ts, b_list, h):
    b_list = [ts.snap(float(b)) for b in b_list]
    if any(b2 <= b1 for b1, b2 in zip(b_list, b_list[1:])):
        raise ValueError("b_list must be strictly increasing")
    return b_list, problem_grid(ts, b_list[-1], h, anchors=b_list)


def limit_disk(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, lam: complex,
               b_list, h: float | None = None, rtol: float = DEFAULT_RTOL,
               bases: tuple | None = None) -> LimitReport:
    """Disk data along ``b_list`` and the extrapolated limiting center and radius.

    Tracks ``mu_j(b)`` (ascending eigenvalues of ``F22``) are classified over
    the final doubling: finite when ``mu(b_last) / mu(b_mid) < 1.05``,
    diverging when they grow at least twofold per doubling of ``b``.
    """
    lam = complex(lam)
    b_list, grid = _b_grid(ts, b_list, h)
    if len(b_list) < 3:
        raise ValueError("b_list needs at least three entries")
    if bases is None:
        basis = build_Y(field, ts, bp, lam, grid, rtol=rtol)
        basis_c = build_Y(field, ts, bp, lam.conjugate(), grid, rtol=rtol)
    else:
        basis, basis_c = bases
    wds = weyl_F_all(field, basis, b_list)
    wdc = weyl_F_all(field, basis_c, b_list)
    d = bp.d
    mus, disks, slack = [], [], []
    for k, (w, wc) in enumerate(zip(wds, wdc)):
        ev = np.linalg.eigvalsh(hermitian_part(w.F22))
        if ev[0] <= 0:
            raise DefinitenessError(
                f"F22 is not positive definite at b={w.b}; b lies below the definiteness point t1")
        mus.append(ev)
        disks.append(weyl_disk(w, wc))
        if k:
            diff = hermitian_part(w.F22 - wds[k - 1].F22)
            slack.append(float(np.linalg.eigvalsh(diff)[0]) / max(1.0, float(np.linalg.norm(w.F22))))
    mu = np.array(mus)
    for j in range(d):
        for k in range(1, len(b_list)):
            if mu[k, j] < mu[k - 1, j] * (1 - 1e-8) - 1e-12:
                raise NumericalError(
                    f"eigenvalue track mu_{j + 1} decreases between b={b_list[k - 1]} and b={b_list[k]}; "
                    "F22 must be nondecreasing, so propagation is inaccurate")
    b_last = b_list[-1]
    i_mid = int(np.argmin([abs(b - b_last / 2) for b in b_list[:-1]]))
    b_mid = b_list[i_mid]
    ratios = mu[-1] / mu[i_mid]
    status = [track_status(r, b_mid, b_last) for r in ratios]
    gamma = np.array([
        float(np.real(_aitken(mu[-3, j], mu[-2, j], mu[-1, j]))) if status[j] == "finite" else np.nan
        for j in range(d)])
    gamma = np.where(np.isnan(gamma), np.nan, np.maximum(gamma, mu[-1]))
    w, v = np.linalg.eigh(hermitian_part(wds[-1].F22))
    r0_eigs = np.array([gamma[j] ** -0.5 if status[j] == "finite" else 0.0 for j in range(d)])
    R0 = (v * r0_eigs) @ _H(v)
    C0 = _aitken(disks[-3].center, disks[-2].center, disks[-1].center)
    return LimitReport(
        lam=lam, b_list=list(b_list), mu=mu,
        radius_norms=np.array([np.linalg.norm(dk.radiusL) for dk in disks]),
        centers=[dk.center for dk in disks], radii=[dk.radiusL for dk in disks],
        C0=C0, R0=R0, gamma=gamma, track_status=status, ratios=ratios, b_mid=b_mid,
        loewner_slack=slack, dual_residuals=[w.dual_residual_rel for w in wds])


@dataclass
class SquareSummableCount:
    lam: complex
    count: int
    rank_count: int | None
    plateau_count: int
    consistent: bool
    limit: LimitReport
    plateau_increase: list             # relative increase over the last b-interval per column


def count_square_summable(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, lam: complex,
                          b_list, h: float | None = None, rtol: float = DEFAULT_RTOL) -> SquareSummableCount:
    """``d + r(lam)`` with a truncated-norm plateau cross-check.

    The plateau check tracks a basis of ``2d`` solutions: the Weyl solution
    ``chi`` for ``beta`` at the last ``b`` and ``phi v_j`` for the eigenvectors
    ``v_j`` of ``F22(b_last)``.  A column counts when its truncated norm grows
    by less than ``1e-6`` (relative) over the last ``b``-interval.  A
    disagreement between the two counts is reported as a warning.
    """
    lam = complex(lam)
    b_list, grid = _b_grid(ts, b_list, h)
    basis = build_Y(field, ts, bp, lam, grid, rtol=rtol)
    basis_c = build_Y(field, ts, bp, lam.conjugate(), grid, rtol=rtol)
    rep = limit_disk(field, ts, bp, lam, b_list, h=h, rtol=rtol, bases=(basis, basis_c))
    d = bp.d
    chi, _, _ = weyl_solution(field, ts, bp, lam, b_list[-1], grid=grid, rtol=rtol)
    F22 = hermitian_part(weyl_F(basis, b_list[-1], field).F22)
    _, v = np.linalg.eigh(F22)
    cols = np.concatenate([chi, basis.phi @ v], axis=2)
    norms = truncated_norms(field, grid, cols)
    k_prev, k_last = grid.index(b_list[-2]), grid.index(b_list[-1])
    inc = (norms[k_last] - norms[k_prev]) / np.maximum(norms[k_last], 1e-300)
    plateau = int(np.sum(inc < PLATEAU_TOL))
    rank_count = None if rep.rank is None else d + rep.rank
    count = rank_count if rank_count is not None else plateau
    consistent = rank_count == plateau
    if not consistent:
        warnings.warn(
            f"square-summable counts disagree at lam={lam}: rank method {rank_count}, "
            f"plateau method {plateau} (relative increases {np.round(inc, 12).tolist()})",
            RuntimeWarning, stacklevel=2)
    return SquareSummableCount(lam, int(count), rank_count, plateau, consistent, rep, inc.tolist())


@dataclass
class ClassificationReport:
    d: int
    d_plus: int
    d_minus: int
    r_plus: int
    r_minus: int
    label: str
    counts: dict
    plus: SquareSummableCount
    minus: SquareSummableCount
    largest_defect: dict | None = None
    real_symmetry: dict | None = None


def _label(d, dp, dm):
    if dp == dm == d:
        return "lpc"
    if dp == dm == 2 * d:
        return "lcc"
    return f"intermediate({dp},{dm})"


def classify(field: CoefficientField, ts: TimeScale, bp: BoundaryPair, b_list,
             lambda_plus: complex = 1j, lambda_minus: complex = -1j, h: float | None = None,
             rtol: float = DEFAULT_RTOL, second_lambda: complex | None = None) -> ClassificationReport:
    """Defect indices ``d_+ = d + r(lambda_plus)``, ``d_- = d + r(lambda_minus)`` and the case label.

    This is numerical inference from a truncated half-line, not a proof; the
    report carries the eigenvalue tracks and plateau data used.
    """
    lambda_plus, lambda_minus = complex(lambda_plus), complex(lambda_minus)
    if not (lambda_plus.imag > 0 and lambda_minus.imag < 0):
        raise ValueError("lambda_plus must lie in the upper and lambda_minus in the lower half plane")
    d = bp.d
    res = {}
    for name, lam in (("plus", lambda_plus), ("minus", lambda_minus)):
        c = count_square_summable(field, ts, bp, lam, b_list, h=h, rtol=rtol)
        if c.rank_count is None:
            raise ClassificationInconclusive(
                f"eigenvalue tracks of F22 at lam={lam} neither settle nor clearly diverge "
                f"(ratios {np.round(c.limit.ratios, 6).tolist()} over b={c.limit.b_mid}..{c.limit.b_list[-1]}); "
                "extend b_list")
        res[name] = c
    dp, dm = res["plus"].count, res["minus"].count
    if d == 1 and dp != dm:
        raise ClassificationInconclusive(
            f"d=1 admits only the limit point or limit circle case, but counts are ({dp},{dm})")
    report = ClassificationReport(
        d=d, d_plus=dp, d_minus=dm, r_plus=dp - d, r_minus=dm - d, label=_label(d, dp, dm),
        counts={str(lambda_plus): dp, str(lambda_minus): dm}, plus=res["plus"], minus=res["minus"])
    full = [lam for lam, c in ((lambda_plus, dp), (lambda_minus, dm)) if c == 2 * d]
    if full:
        lam2 = complex(second_lambda) if second_lambda is not None else full[0] + 1
        c2 = count_square_summable(field, ts, bp, lam2, b_list, h=h, rtol=rtol)
        report.largest_defect = {"lambda": lam2, "count": c2.count, "holds": c2.count == 2 * d}
        report.counts[str(lam2)] = c2.count
    grid_t = np.linspace(ts.rho(ts.t0), ts.horizon, 33)
    grid_t = [t for t in grid_t if t in ts]
    if grid_t and field.is_real(np.array(grid_t)):
        report.real_symmetry = {"real_coefficients": True, "holds": dp == dm}
    return report
