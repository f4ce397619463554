"""Independent reference computations used by the tests."""

import numpy as np
import scipy.linalg as sl

from hamts.exprfield import symplectic_J


def pencil_eigenvalues(field, grid, alpha, beta):
    """Finite eigenvalues of the boundary problem on a purely scattered grid.

    Unknowns are ``y(t_0..t_n)``.  Each step contributes the pair form
    ``J (y_k - y_{k-1}) / nu_k - P_k U y_k = lam W_k U y_k`` with
    ``U y_k = (y1_k, y2_{k-1})``; the rows ``alpha y_0 = 0`` and
    ``beta y_n = 0`` close the system.
    """
    d = field.d
    n = len(grid) - 1
    m = 2 * d * (n + 1)
    A = np.zeros((m, m), dtype=complex)
    B = np.zeros((m, m), dtype=complex)
    J = symplectic_J(d)
    bl = field.blocks(grid.t, grid.nu)
    row = 0
    for k in range(1, n + 1):
        nu = grid.nu[k]
        assert nu > 0, "oracle needs a scattered grid"
        cur, prev = slice(2 * d * k, 2 * d * (k + 1)), slice(2 * d * (k - 1), 2 * d * k)
        # U y_k as a linear map of (y_{k-1}, y_k)
        U_cur = np.zeros((2 * d, 2 * d))
        U_cur[:d, :d] = np.eye(d)
        U_prev = np.zeros((2 * d, 2 * d))
        U_prev[d:, d:] = np.eye(d)
        rows = slice(row, row + 2 * d)
        P, W = bl.P[k], bl.W[k]
        A[rows, cur] += J / nu - P @ U_cur
        A[rows, prev] += -J / nu - P @ U_prev
        B[rows, cur] += W @ U_cur
        B[rows, prev] += W @ U_prev
        row += 2 * d
    A[row:row + d, : 2 * d] = alpha
    A[row + d:row + 2 * d, 2 * d * n:] = beta
    w = sl.eig(A, B, right=False)
    w = w[np.isfinite(w)]
    return np.sort(w.real[np.abs(w.imag) < 1e-8]), w
