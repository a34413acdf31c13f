"""
FFT, matrix exponential, guarded solves and RK4 against numpy/scipy oracles.
"""
import math

import numpy as np
import pytest
from scipy.linalg import expm

from koss_ssm.errors import ConfigError, NonFiniteError, SingularMatrixError
from koss_ssm.numerics import fft, ifft, mat_exp, rk4_step, solve_linear, symmetrize
from koss_ssm.numerics.linalg import condition_number


@pytest.mark.parametrize("n", [1, 2, 8, 64, 7, 12, 100, 1000])
def test_fft_matches_numpy(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    expected = np.fft.fft(x)
    assert np.max(np.abs(fft(x) - expected)) <= 1e-9 * max(1.0, np.max(np.abs(expected)))


@pytest.mark.parametrize("n", [16, 30])
def test_ifft_inverts_fft(n):
    x = np.random.default_rng(1).normal(size=(3, n))
    np.testing.assert_allclose(ifft(fft(x)).real, x, atol=1e-12)


def test_fft_along_first_axis():
    x = np.random.default_rng(2).normal(size=(24, 3))
    np.testing.assert_allclose(fft(x, axis=0), np.fft.fft(x, axis=0), atol=1e-10)


def test_fft_empty_axis_rejected():
    with pytest.raises(ConfigError):
        fft(np.zeros(0))


@pytest.mark.parametrize("scale", [0.1, 1.0, 3.0, 10.0])
def test_mat_exp_matches_scipy(scale):
    rng = np.random.default_rng(int(scale * 10))
    m = rng.normal(size=(4, 4))
    m *= scale / np.abs(m).sum(axis=0).max()
    expected = expm(m)
    assert np.linalg.norm(mat_exp(m) - expected) <= 1e-9 * np.linalg.norm(expected)


def test_mat_exp_zero_and_diagonal():
    np.testing.assert_array_equal(mat_exp(np.zeros((3, 3))), np.eye(3))
    d = np.array([-2.0, 0.5, 1.5])
    np.testing.assert_allclose(mat_exp(np.diag(d)), np.diag(np.exp(d)), rtol=1e-12)


def test_mat_exp_stack_matches_single():
    m = np.random.default_rng(3).normal(size=(5, 3, 3))
    stacked = mat_exp(m)
    for i in range(5):
        np.testing.assert_allclose(stacked[i], expm(m[i]), rtol=1e-9, atol=1e-12)


def test_mat_exp_rejects_bad_input():
    with pytest.raises(NonFiniteError):
        mat_exp(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ConfigError):
        mat_exp(np.zeros((2, 3)))
    with pytest.raises(ConfigError):
        mat_exp(np.zeros((65, 65)))


def test_solve_linear_matches_numpy():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    b = rng.normal(size=(5, 2))
    np.testing.assert_allclose(solve_linear(m, b), np.linalg.solve(m, b), rtol=1e-12)


def test_solve_linear_singular():
    with pytest.raises(SingularMatrixError) as err:
        solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))
    assert err.value.condition >= 1e12


def test_condition_number_of_singular_matrix_is_large():
    assert condition_number(np.zeros((2, 2))) >= 1e12


def test_symmetrize():
    p = np.array([[1.0, 2.0], [0.0, 1.0]])
    np.testing.assert_array_equal(symmetrize(p), [[1.0, 1.0], [1.0, 1.0]])


def test_rk4_exponential_decay():
    y = np.array([1.0])
    t = 0.0
    for _ in range(10):
        y = rk4_step(lambda _t, v: -v, y, t, 0.1)
        t += 0.1
    assert abs(y[0] - math.exp(-1.0)) < 2e-6


def test_rk4_rejects_non_positive_step():
    with pytest.raises(ConfigError):
        rk4_step(lambda _t, v: v, np.ones(1), 0.0, 0.0)


def test_ifft_inverts_fft_for_every_length_up_to_512():
    rng = np.random.default_rng(5)
    for n in range(1, 513):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        back = ifft(fft(x))
        assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, np.max(np.abs(x))), n


@pytest.mark.parametrize("n", [2, 13, 64, 100, 257])
def test_fft_of_real_input_is_hermitian(n):
    x = np.random.default_rng(n).normal(size=n)
    spectrum = fft(x)
    mirrored = np.conj(spectrum[(-np.arange(n)) % n])
    assert np.max(np.abs(spectrum - mirrored)) <= 1e-11 * max(1.0, np.max(np.abs(spectrum)))


def test_mat_exp_of_commuting_sum_factors():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 4))
    a *= 1.5 / np.abs(a).sum(axis=0).max()
    b = 0.5 * a + 0.3 * a @ a - 0.2 * np.eye(4)  # a polynomial in a commutes with a
    expected = mat_exp(a) @ mat_exp(b)
    assert np.linalg.norm(mat_exp(a + b) - expected) <= 1e-10 * np.linalg.norm(expected)


def test_mat_exp_nilpotent_closed_form():
    np.testing.assert_allclose(mat_exp(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1.0, 1.0], [0.0, 1.0]], atol=1e-14)


def _rk4_global_error(dt):
    y = np.array([1.0])
    steps = int(round(1.0 / dt))
    for i in range(steps):
        y = rk4_step(lambda _t, v: -v, y, i * dt, dt)
    return abs(y[0] - math.exp(-1.0))


def test_rk4_is_fourth_order():
    errors = [_rk4_global_error(dt) for dt in (0.1, 0.05, 0.025)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 14.0 < coarse / fine < 18.0


def test_rk4_single_step_growth():
    y = rk4_step(lambda _t, v: v, np.array([1.0]), 0.0, 0.01)
    assert abs(y[0] - math.exp(0.01)) < 1e-10
    np.testing.assert_array_equal(rk4_step(lambda _t, v: np.zeros_like(v), np.array([2.0, -1.0]), 0.0, 0.5),
                                  [2.0, -1.0])


def test_rk4_linear_system_matches_mat_exp():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(3, 3))
    y0 = rng.normal(size=3)
    dt = 0.01
    stepped = rk4_step(lambda _t, v: m @ v, y0, 0.0, dt)
    exact = mat_exp(m * dt) @ y0
    assert np.max(np.abs(stepped - exact)) <= 1e-10
