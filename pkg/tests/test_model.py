import numpy as np
import pytest

from arrayphotons.model import (AtomArray, DriveField, PhysicalParams, build_hex_array,
                                derive_drive, divergence_angle, gaussian_weight, load_coordinates)

P = PhysicalParams()


def test_unit_round_trips():
    assert np.isclose(P.nm_to_internal(780.0), 1.0)
    assert np.isclose(P.internal_to_ns(1.0), 26.526, rtol=1e-4)
    assert np.isclose(P.mhz_to_internal(6.0), 1.0)
    assert np.isclose(P.internal_to_mhz(P.mhz_to_internal(2.5)), 2.5)
    assert np.isclose(P.ns_to_internal(P.internal_to_ns(3.3)), 3.3)


def test_fig5_flux_and_overlap():
    dr = derive_drive(1.0, 900.0)
    assert np.isclose(dr.a_beam / dr.a_atom, 4.38, atol=0.01)
    assert np.isclose(dr.vartheta, 0.0571, atol=1e-4)
    assert np.isclose(P.rate_to_per_second(dr.flux), 4.6e6, rtol=0.01)


def test_fig6_flux():
    # quoted area ratio 6.3 corresponds to w0 = 1.08 um; 1.1 um is its rounding
    w0 = np.sqrt(2 * 6.3 * 3 / (2 * np.pi) / np.pi) * 780.0
    dr = derive_drive(0.5, w0)
    assert np.isclose(dr.a_beam / dr.a_atom, 6.3, rtol=1e-9)
    assert round(P.rate_to_per_second(dr.flux), -5) == 1.6e6  # quoted to two digits
    assert np.isclose(derive_drive(0.5, 1100.0).a_beam / dr.a_atom, 6.54, atol=0.01)


def test_beam_matching_atom_cross_section():
    dr = derive_drive(3.0, 430.0)
    assert np.isclose(dr.a_beam / dr.a_atom, 1.0, atol=0.02)
    assert np.isclose(dr.vartheta, 0.25, atol=0.005)


def test_alpha_sign_convention():
    dr = derive_drive(1.0, 900.0)
    assert dr.alpha.real > 0 and abs(dr.alpha.imag) < 1e-12
    assert np.isclose(2 * dr.coupling * dr.alpha, dr.omega)


def test_gaussian_weight_and_divergence():
    assert gaussian_weight([0.0, 0.0], 1.3) == 1.0
    assert np.isclose(gaussian_weight([1.3, 0.0], 1.3), np.exp(-1))
    assert np.isclose(np.degrees(divergence_angle(900 / 780)), 15.8, atol=0.1)
    with pytest.raises(ValueError):
        gaussian_weight([0, 0], 0.0)


@pytest.mark.parametrize("layout,n", [("N0", 0), ("N1", 1), ("N3", 3), ("N7", 7), ("N13", 13), ("N19", 19)])
def test_layouts(layout, n):
    a = build_hex_array(layout, 0.85)
    assert a.N == n
    if n >= 7:
        assert np.isclose(a.min_distance(), 0.85)


def test_n3_positions():
    a = build_hex_array("N3", 0.6)
    assert np.allclose(a.positions, [[0, 0], [0.6, 0], [0, 0.42]])


def test_invalid_arrays():
    with pytest.raises(ValueError):
        AtomArray(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        AtomArray(np.zeros((1, 2)), u_hat=np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        build_hex_array("N7", 0.0)
    with pytest.raises(ValueError):
        DriveField(1.0, -1.0)


def test_coordinate_file(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("# x y in nm\n0 0\n660 0\n")
    pos = load_coordinates(f, P)
    assert np.allclose(pos, [[0, 0], [660 / 780, 0]])
    f.write_text("0 0 5\n")
    with pytest.raises(ValueError):
        load_coordinates(f, P)
    f.write_text("0 0\n0 0\n")
    with pytest.raises(ValueError):
        load_coordinates(f, P)
