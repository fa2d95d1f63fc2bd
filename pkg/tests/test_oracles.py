import numpy as np
import pytest

from arrayphotons.engine import EngineConfig, System, run_ensemble
from arrayphotons.farfield import build_grid
from arrayphotons.model import AtomArray, DriveField, build_hex_array, derive_drive
from arrayphotons.operators import build_couplings
from arrayphotons.oracles import (classical_steady_state, coherent_flux, grid_master_equation_evolve,
                                  low_intensity_scan, master_equation_evolve, source_mode_trajectory,
                                  waiting_time_density)
from arrayphotons.stats import DirectionClass, FORWARD

ONE = AtomArray(np.zeros((1, 2)))


def test_free_decay():
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    t = np.linspace(0, 3, 7)
    me = master_equation_evolve(ONE, DriveField(0.0, 1.0), build_couplings(ONE), t, rho0=rho0)
    assert np.allclose(me.populations[:, 0], np.exp(-t), atol=1e-8)


def test_density_matrix_invariants():
    arr = build_hex_array("N3", 0.6)
    me = master_equation_evolve(arr, DriveField(-2.0, 1.2), build_couplings(arr), [0.5, 2.0])
    r = me.rho
    assert np.max(np.abs(r - r.conj().T)) < 1e-10
    assert abs(np.trace(r) - 1) < 1e-8
    assert np.linalg.eigvalsh(r).min() > -1e-8


def test_detector_resolved_master_equation_matches_closed_form():
    arr = AtomArray(np.array([[0.0, 0.0], [0.6, 0.0]]))
    dr = DriveField(-1.5, 1.2)
    s = System.build(arr, dr, Q=11200)
    t = np.linspace(0, 3, 13)
    a = grid_master_equation_evolve(arr, dr, s.couplings, s.table, t)
    b = master_equation_evolve(arr, dr, s.couplings, t)
    assert np.max(np.abs(a.populations - b.populations)) < 2e-3


def test_classical_single_atom_and_linearity():
    cpl = build_couplings(ONE)
    om = -0.03
    b = classical_steady_state(ONE, DriveField(om, 1.0), cpl).beta
    assert np.isclose(abs(b[0]) ** 2, om**2, rtol=1e-12)
    arr = build_hex_array("N3", 0.7)
    cpl = build_couplings(arr)
    b1 = classical_steady_state(arr, DriveField(om, 1.4), cpl).beta
    b3 = classical_steady_state(arr, DriveField(3 * om, 1.4), cpl).beta
    assert np.allclose(b3, 3 * b1, rtol=1e-12)
    M = cpl.delta - 0.5j * cpl.gamma
    rhs = -0.5 * 3 * om * DriveField(3 * om, 1.4).weights(arr)
    assert np.max(np.abs(M @ b3 - rhs)) < 1e-10


def test_single_atom_matched_beam_conserves_flux():
    dr = derive_drive(0.05, 430.0)
    s = System.build(ONE, dr, unraveling="beam")
    beta = classical_steady_state(ONE, dr, s.couplings).beta
    fwd, bwd = coherent_flux(s.table, beta).sum(1) / dr.flux
    assert abs(fwd + bwd - 1) < 1e-12
    assert fwd > 0.1 and bwd > 0.1


def test_dilute_limit_transmits():
    pts, _ = low_intensity_scan("N7", [1.0, 2.0, 4.0], lambda d: 2 * d, build_grid(40000))
    T = [p.T for p in pts]
    assert T[0] < T[1] < T[2] and T[2] > 0.95
    assert pts[2].R < 1e-3


def test_source_modes_single_atom_follow_master_equation():
    cfg = EngineConfig(duration=3.0, seed=5, sample_interval=0.1, burn_in=0)
    res = [source_mode_trajectory(ONE, DriveField(-4.0, 1.2), build_couplings(ONE), cfg, j)
           for j in range(400)]
    g = np.array([r.ground for r in res])
    me = master_equation_evolve(ONE, DriveField(-4.0, 1.2), build_couplings(ONE), res[0].sample_times)
    assert np.max(np.abs(g.mean(0) - me.ground)) < 4 * 0.5 / np.sqrt(400)


def test_source_modes_time_average_within_two_sigma():
    arr = AtomArray(np.array([[0.0, 0.0], [0.5, 0.2]]))
    dr = DriveField(-2.0, 1.2)
    cpl = build_couplings(arr)
    cfg = EngineConfig(duration=4.0, seed=11, sample_interval=0.1, burn_in=0)
    res = [source_mode_trajectory(arr, dr, cpl, cfg, j) for j in range(300)]
    per = np.array([r.excited.mean() for r in res])
    me = master_equation_evolve(arr, dr, cpl, res[0].sample_times)
    assert abs(per.mean() - me.excited_sum.mean()) < 2 * per.std(ddof=1) / np.sqrt(len(per))


def test_source_modes_need_sampling():
    with pytest.raises(ValueError):
        source_mode_trajectory(ONE, DriveField(-1.0, 1.0), build_couplings(ONE),
                               EngineConfig(duration=1.0, seed=0))


def test_exact_waiting_time_density_matches_monte_carlo():
    grid = build_grid(2800)
    dr = DriveField(-1.0, 1.2)
    s = System.build(ONE, dr, grid=grid)
    mask = DirectionClass.from_drive(dr).masks(grid.theta)[FORWARD]
    edges = np.linspace(0, 3, 7)
    dens, rate = waiting_time_density(s, np.repeat(mask[:, None], 2, 1), edges)
    res = run_ensemble(s, EngineConfig(duration=4000, seed=2, burn_in=0), 1)
    t = res[0].times[mask[res[0].q]]
    assert abs(len(t) / 4000 - rate) < 4 * np.sqrt(len(t)) / 4000
    gaps = np.diff(t)
    counts = np.histogram(gaps, edges)[0]
    mc = counts / (len(gaps) * np.diff(edges))
    sig = np.sqrt(np.maximum(counts, 1)) / (len(gaps) * np.diff(edges))
    assert np.all(np.abs(mc - dens) < 4 * sig)
