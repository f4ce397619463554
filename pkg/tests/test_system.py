import numpy as np
import pytest

from hamts import (CoefficientError, DefinitenessError, TimeScaleError, apply_shift, assemble_S,
                   build_coefficients, build_timescale, check_definiteness, check_regressivity,
                   interval, make_grid, points)
from hamts.exprfield import symplectic_J
from hamts.system import SystemMatrix, dense_pencil, shift_samples

from conftest import free_field


def test_dense_schroedinger_matrix():
    f = free_field(q="t")
    lam = 2 + 1j
    sm = assemble_S(f, None, 3.0, lam, nu=0.0)
    np.testing.assert_allclose(sm.S, [[0, 1], [3 - lam, 0]])
    assert check_regressivity(sm) == 0


def test_unit_step_free_matrix():
    lam = 0.3 - 2j
    sm = assemble_S(free_field(), None, 1.0, lam, nu=1.0)
    np.testing.assert_allclose(sm.S, [[lam, 1], [-lam, 0]])


def test_singular_E_reported():
    f = build_coefficients(1, [["1"]], [["1"]], [["0"]], [["1"]], [["0"]])
    with pytest.raises(CoefficientError):
        assemble_S(f, None, 1.0, 1j, nu=1.0)


def test_dense_matrix_is_minus_J_times_pencil():
    f = build_coefficients(2, [["t", "1"], ["i", "0"]], [["2", "i"], ["-i", "1"]],
                           [["t", "0"], ["0", "-1"]], [["1", "0"], ["0", "2"]], [["0.5", "0"], ["0", "0"]])
    lam = 0.7 + 0.4j
    bl = f.blocks(1.3, 0.0)
    J = symplectic_J(2)
    np.testing.assert_allclose(assemble_S(f, None, 1.3, lam, nu=0.0).S, -J @ (lam * bl.W + bl.P), atol=1e-14)
    S0, S1 = dense_pencil(bl)
    np.testing.assert_allclose(S0 + lam * S1, -J @ (lam * bl.W + bl.P), atol=1e-14)


def _coupled_field():
    return build_coefficients(2, [["0.3", "1"], ["0", "-0.2"]], [["2", "i"], ["-i", "1"]],
                              [["t", "0.1"], ["0.1", "-1"]], [["1", "0"], ["0", "2"]],
                              [["0.5", "0"], ["0", "0"]])


def _pair_residual(f, lam, nu):
    sm = assemble_S(f, None, 1.0, lam, nu=nu)
    smc = assemble_S(f, None, 1.0, np.conj(lam), nu=nu)
    J = symplectic_J(2)
    return sm, np.linalg.norm(smc.step.conj().T @ J @ sm.step - J)


@pytest.mark.parametrize("nu", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("lam", [1j, 2.5, -1 + 0.5j])
def test_assembled_steps_are_symplectic(nu, lam):
    f = _coupled_field()
    sm, res = _pair_residual(f, lam, nu)
    assert res <= 1e-12
    # at real lam the pairing reduces to the plain quadratic form
    if np.imag(lam) == 0:
        assert check_regressivity(sm) <= 1e-12


@pytest.mark.parametrize("lam", [1j, 2.5])
def test_large_step_symplectic_to_roundoff(lam):
    # entries of I - nu S reach a few hundred here; the floor is eps * ||I - nu S||^2
    sm, res = _pair_residual(_coupled_field(), lam, 3.0)
    assert res <= 1e-14 * np.linalg.norm(sm.step, 2) ** 2


def test_non_hamiltonian_matrix_flagged():
    sm = SystemMatrix(np.array([[2.0, 0.0], [0.0, 0.0]]), np.eye(1), 1.0)
    assert check_regressivity(sm) > 0.5


def test_left_shift_on_integers():
    ts = build_timescale([points(range(-1, 8))], 0)
    y = lambda t: np.array([t**2, t])
    Uy = apply_shift(y, "left", ts=ts)
    np.testing.assert_array_equal(Uy(3), [9, 2])


def test_left_shift_dense_point_is_identity():
    ts = build_timescale([interval(0, 2)], 0)
    y = lambda t: np.array([np.sin(t), np.cos(t)])
    np.testing.assert_array_equal(apply_shift(y, "left", ts=ts)(1.2), y(1.2))


def test_shift_round_trip_on_geometric_scale():
    ts = build_timescale([points([1, 2, 4, 8])], 2)
    y = lambda t: np.array([1 / t, t**3])
    for t in (2, 4):
        a = apply_shift(apply_shift(y, "right", ts=ts), "left", ts=ts)(t)
        b = apply_shift(apply_shift(y, "left", ts=ts), "right", ts=ts)(t)
        np.testing.assert_array_equal(a, y(t))
        np.testing.assert_array_equal(b, y(t))


def test_sampled_shift_round_trip():
    ts = build_timescale([points(range(0, 10))], 1)
    g = make_grid(ts, 1, 9)
    samples = np.stack([g.t, g.t**2], axis=1).astype(complex)
    left = apply_shift(samples, "left", grid=g)
    np.testing.assert_array_equal(left[2], [3, 4])
    assert np.isnan(left[0, 1])  # rho(1) = 0 lies off the grid
    back = apply_shift(left, "right", grid=g, ts=ts)
    # sigma is the identity at the horizon, so only interior points come back
    np.testing.assert_array_equal(back[1:-1], samples[1:-1])
    fwd = apply_shift(apply_shift(samples, "right", grid=g, ts=ts), "left", grid=g)
    np.testing.assert_array_equal(fwd[1:], samples[1:])
    np.testing.assert_array_equal(shift_samples(samples[..., None], g)[1:, :, 0], left[1:])


def test_right_shift_refused_on_forced_scale():
    ts = build_timescale([interval(0, 1), interval(2, 3)], 0, force=True)
    with pytest.raises(TimeScaleError):
        apply_shift(lambda t: np.array([t, t]), "right", ts=ts)


def test_definiteness_free_system():
    ts = build_timescale([interval(0, np.pi)], 0)
    t1 = check_definiteness(free_field(), ts, t_candidates=[0.5, 1.0, 2.0], h=np.pi / 256)
    assert t1 == pytest.approx(0.5)


def test_definiteness_decaying_weight():
    ts = build_timescale([interval(0, 10)], 0)
    t1 = check_definiteness(free_field(weight="exp(-t)"), ts, t_candidates=[1.0, 5.0], h=0.01)
    assert t1 == pytest.approx(1.0)


def test_definiteness_fails_without_weight():
    ts = build_timescale([interval(0, 5)], 0)
    with pytest.raises(DefinitenessError):
        check_definiteness(free_field(weight="0"), ts, h=0.05)
