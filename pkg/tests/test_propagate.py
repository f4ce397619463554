import numpy as np
import pytest

from hamts import (NumericalError, arithmetic, build_coefficients, build_timescale, interval,
                   lagrange_residual, liouville_residual, make_grid, nabla_exponential, points,
                   propagate_fundamental, symplectic_residual)
from hamts.exprfield import symplectic_J
from hamts.propagate import (_exact_abs2_minus_one, nabla_derivative, propagate_backward,
                             propagate_end, symplectic_form_drift, weighted_gram)

from conftest import free_field, integer_scale


def test_initial_value_is_kept_exactly(free, segment):
    g = make_grid(segment, 0, np.pi, np.pi / 64)
    Y0 = np.array([[0.6, 0.8j], [0.8, -0.6j]])
    tr = propagate_fundamental(free, segment, 2 + 1j, Y0, g)
    np.testing.assert_array_equal(tr.samples[0], Y0)
    with pytest.raises(ValueError):
        tr.samples[0, 0, 0] = 1


def test_integer_steps_at_zero(free):
    ts = integer_scale(-1, 100)
    tr = propagate_fundamental(free, ts, 0, None, make_grid(ts, -1, 100))
    for k, Phi in enumerate(tr.samples):
        np.testing.assert_array_equal(Phi, [[1, k], [0, 1]])


def test_scattered_step_rule(free):
    ts = build_timescale([points([0, 0.3, 1.0, 2.5])], 0.3)
    g = make_grid(ts, 0, 2.5)
    lam = 1.5 - 0.5j
    tr = propagate_fundamental(free, ts, lam, None, g)
    for k in range(1, len(g)):
        nu = g.nu[k]
        S = np.array([[nu * lam, 1], [-lam, 0]])
        np.testing.assert_allclose(tr.samples[k], np.linalg.solve(np.eye(2) - nu * S, tr.samples[k - 1]),
                                   rtol=1e-15, atol=1e-15)


def test_rotation_closed_form(free, segment):
    g = make_grid(segment, 0, np.pi, np.pi / 512)
    tr = propagate_fundamental(free, segment, 1.0, None, g)
    np.testing.assert_allclose(tr.at(np.pi / 2), [[0, 1], [-1, 0]], atol=1e-8)
    t = g.t[:, None, None]
    closed = np.block([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    assert np.max(np.abs(tr.samples - closed)) < 1e-8


def test_batched_end_values_match_single(free, segment):
    g = make_grid(segment, 0, np.pi, np.pi / 64)
    lams = [0.5, 1j, 3 - 2j]
    ends = propagate_end(free, g, lams)
    for lam, e in zip(lams, ends):
        np.testing.assert_allclose(e, propagate_fundamental(free, segment, lam, None, g).end, rtol=1e-8)


def test_mixed_scale_propagation():
    ts = build_timescale([points([-1, 0, 1]), points([1.5, 2, 4])], 0)
    g = make_grid(ts, -1, 4)
    lam = 0.4 + 0.2j
    f = free_field(q="t")
    tr = propagate_fundamental(f, ts, lam, None, g)
    ref = np.eye(2, dtype=complex)
    for k in range(1, len(g)):
        nu, t = g.nu[k], g.t[k]
        S = np.array([[nu * (lam - t), 1], [t - lam, 0]])
        ref = np.linalg.solve(np.eye(2) - nu * S, ref)
    np.testing.assert_allclose(tr.end, ref, rtol=1e-14)


# -- nabla exponential ---------------------------------------------------------------

def test_exponential_continuous():
    ts = build_timescale([interval(0, 2)], 0)
    assert nabla_exponential(1.0, ts, 2.0, h=1 / 256) == pytest.approx(np.e**2, rel=1e-10)
    assert nabla_exponential(lambda t: 2 * t, ts, 1.5, h=1 / 256) == pytest.approx(np.exp(2.25), rel=1e-10)


def test_exponential_integers():
    ts = integer_scale(-1, 5)
    assert nabla_exponential(0.5, ts, 1) == pytest.approx(4)


def test_exponential_non_regressive():
    ts = integer_scale(-1, 5)
    with pytest.raises(NumericalError):
        nabla_exponential(1.0, ts, 3)


# -- conservation checks -------------------------------------------------------------

def test_symplectic_continuous(free, segment):
    g = make_grid(segment, 0, np.pi)
    a = propagate_fundamental(free, segment, 1 + 1j, None, g)
    b = propagate_fundamental(free, segment, 1 - 1j, None, g)
    assert symplectic_residual(a, b) <= 1e-7
    assert symplectic_form_drift(a, b)[0] == 0


def test_symplectic_discrete_exact():
    f = free_field(q="sin(t)")
    ts = integer_scale(-1, 30)
    g = make_grid(ts, -1, 30)
    a = propagate_fundamental(f, ts, 0.3 + 2j, None, g)
    b = propagate_fundamental(f, ts, 0.3 - 2j, None, g)
    assert symplectic_residual(a, b, scaled=True) <= 1e-12


def test_symplectic_needs_common_grid(free, segment):
    a = propagate_fundamental(free, segment, 1j, None, make_grid(segment, 0, np.pi, 0.1))
    b = propagate_fundamental(free, segment, -1j, None, make_grid(segment, 0, np.pi, 0.05))
    with pytest.raises(ValueError):
        symplectic_residual(a, b)


def test_liouville_integers_fifty_steps(free):
    ts = integer_scale(-1, 50)
    tr = propagate_fundamental(free, ts, 1j, None, make_grid(ts, -1, 49))
    assert liouville_residual(tr) <= 1e-9


def test_liouville_rotation(free, segment):
    tr = propagate_fundamental(free, segment, 1.0, None, make_grid(segment, 0, np.pi))
    assert liouville_residual(tr) <= 1e-7


def test_liouville_start_only(free, segment):
    tr = propagate_fundamental(free, segment, 1j, None, make_grid(segment, 0, np.pi))
    assert liouville_residual(tr.truncate(0.0)) == 0


def test_exact_determinant_beats_lu():
    # symplectic with huge entries: LU loses every digit of det = 1
    a = 2.0**40 + 1
    X = np.array([[a, a - 1], [a + 1, a]], dtype=complex)
    assert _exact_abs2_minus_one(X) == 0
    assert abs(abs(np.linalg.det(X)) ** 2 - 1) >= 0.5


def test_lagrange_zero_path(free):
    ts = integer_scale(-1, 10)
    zero = lambda t: np.zeros(2)
    y = lambda t: np.array([t**2, 1 + t])
    assert lagrange_residual(zero, y, free, ts, -1, 10) == 0


def test_lagrange_integer_polynomials(free):
    ts = integer_scale(-1, 10)
    rng = np.random.default_rng(3)
    for _ in range(5):
        c = rng.uniform(-1, 1, (4, 3)) + 1j * rng.uniform(-1, 1, (4, 3))
        x = lambda t, c=c: np.array([np.polyval(c[0], t), np.polyval(c[1], t)])
        y = lambda t, c=c: np.array([np.polyval(c[2], t), np.polyval(c[3], t)])
        assert lagrange_residual(x, y, free, ts, -1, 10) <= 1e-9


def test_lagrange_for_real_solution(free, segment):
    # y = (sin 2t, 2 cos 2t) solves the free system at lam = 4
    y = lambda t: np.array([np.sin(2 * t), 2 * np.cos(2 * t)])
    assert lagrange_residual(y, y, free, segment, 0, np.pi, h=1 / 512) <= 1e-6


def test_nabla_derivative_orders(segment):
    g = make_grid(segment, 0, np.pi, 1 / 128)
    d = nabla_derivative(lambda t: np.array([np.sin(t)]), g)
    assert np.max(np.abs(d[:, 0] - np.cos(g.t))) < 1e-7
    ts = integer_scale(-1, 5)
    d = nabla_derivative(lambda t: np.array([t**2]), make_grid(ts, 0, 5))
    np.testing.assert_array_equal(d[1:, 0], [2 * k - 1 for k in range(1, 6)])


def test_solution_pair_integral_identity(free):
    # (eta - conj lam) int (U y)* W (U z) = [y* J z] for y at lam, z at eta
    ts = build_timescale([interval(0, 5)], 0)
    g = make_grid(ts, 0, 5, 1 / 256)
    lam, eta = 1 + 1j, 2 - 0.5j
    y = propagate_fundamental(free, ts, lam, None, g)
    z = propagate_fundamental(free, ts, eta, None, g)
    J = symplectic_J(1)
    lhs = (eta - np.conj(lam)) * weighted_gram(free, z, y)
    rhs = y.end.conj().T @ J @ z.end - J
    assert np.max(np.abs(lhs - rhs)) <= 1e-6


def test_backward_propagation_inverts_forward(free):
    ts = build_timescale([interval(0, 3)], 0)
    g = make_grid(ts, 0, 3, 1 / 64)
    tr = propagate_fundamental(free, ts, 0.5 + 1j, None, g)
    back = propagate_backward(free, g, 0.5 + 1j, tr.end[:, :1])
    np.testing.assert_allclose(back, tr.samples[:, :, :1], rtol=1e-7, atol=1e-8)
    ts = integer_scale(-1, 10)
    g = make_grid(ts, -1, 10)
    tr = propagate_fundamental(free, ts, 0.5 + 1j, None, g)
    back = propagate_backward(free, g, 0.5 + 1j, tr.end)
    np.testing.assert_allclose(back, tr.samples, rtol=1e-10, atol=1e-12 * np.abs(tr.samples).max())
