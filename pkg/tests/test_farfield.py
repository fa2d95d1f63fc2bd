import numpy as np
import pytest

from arrayphotons.farfield import (basis_matrix, build_grid, check_sum_D, check_sum_F, check_sum_LD,
                                   dipole_pattern_uD, jump_coefficients, laser_mode_F)
from arrayphotons.model import CIRCULAR, build_hex_array, derive_drive
from arrayphotons.operators import build_couplings


@pytest.fixture(scope="module")
def grid():
    return build_grid(2800)


def test_grid_is_equal_area_and_exact_count():
    for Q in (700, 1400, 11200):
        g = build_grid(Q)
        assert g.Q == Q
        assert np.isclose(g.d_omega.sum(), 4 * np.pi)
        assert np.allclose(g.d_omega, 4 * np.pi / Q)
    with pytest.raises(ValueError):
        build_grid(50)


def test_basis_is_orthonormal():
    T = basis_matrix(np.array([0.3, 2.0]), np.array([1.0, -2.0]))
    for M in T:
        assert np.allclose(M @ M.T, np.eye(3))


def test_laser_mode_dark_backward_and_on_axis_value():
    w0 = 1.2
    F = laser_mode_F(np.array([0.0, 2.5]), np.array([0.0, 0.0]), w0, CIRCULAR)
    assert np.allclose(F[1], 0)
    assert np.isclose(np.linalg.norm(F[0]), np.pi * w0**2)
    # transverse on axis: no radial component
    assert abs(F[0, 0]) < 1e-12


def test_literal_modes_agree_paraxially():
    th = np.array([0.01])
    a = laser_mode_F(th, th * 0, 2.0, CIRCULAR, "angular")
    b = laser_mode_F(th, th * 0, 2.0, CIRCULAR, "cos")
    assert np.allclose(a, b, rtol=1e-3)
    with pytest.raises(ValueError):
        laser_mode_F(th, th, 1.0, CIRCULAR, "bogus")


def test_dipole_pattern_transverse():
    uD = dipole_pattern_uD(np.array([np.pi / 2]), np.array([0.0]), CIRCULAR)
    assert abs(uD[0, 0]) < 1e-12
    assert np.isclose(np.linalg.norm(uD[0]), np.sqrt(0.5))


def test_identities_small_at_moderate_grid(grid):
    dr = derive_drive(1.0, 900.0)
    arr = build_hex_array("N7", 660 / 780)
    tab = jump_coefficients(grid, dr, arr)
    assert check_sum_F(grid, dr, arr.u_hat) < 2e-3
    assert check_sum_D(tab, build_couplings(arr).gamma) < 2e-4
    assert np.max(check_sum_LD(tab, dr, arr)) < 5e-3


def test_laser_norm_and_single_atom_decay(grid):
    dr = derive_drive(1.0, 900.0)
    arr = build_hex_array("N1")
    tab = jump_coefficients(grid, dr, arr)
    assert np.isclose(tab.laser_norm, 1.0, atol=2e-3)
    assert np.isclose(tab.decay_matrix()[0, 0].real, 1.0, atol=1e-4)


def test_residuals_decrease_under_refinement():
    dr = derive_drive(1.0, 900.0)
    arr = build_hex_array("N13", 660 / 780)
    g = build_couplings(arr).gamma
    prev = None
    for k in range(4):
        grid = build_grid(700 * 2**k)
        tab = jump_coefficients(grid, dr, arr)
        cur = (check_sum_F(grid, dr, arr.u_hat), check_sum_D(tab, g), np.max(check_sum_LD(tab, dr, arr)))
        if prev:
            assert all(c < p for c, p in zip(cur, prev))
        prev = cur
