"""Independent reference solvers: dense master equation, source-mode trajectories,
classical coupled dipoles and the low-intensity geometry scan.

Everything here works with dense matrices in natural bit order (index i has
bit n set when atom n is excited); use :func:`to_natural` to compare with the
engine's basis ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .engine import EngineConfig, TrajectoryResult, trajectory_rng
from .farfield import DetectorGrid, JumpTable, build_grid, jump_coefficients
from .model import AtomArray, DriveField, build_hex_array
from .operators import Basis, CouplingMatrices, build_couplings, source_modes
from .stats import BACKWARD, FORWARD, SIDE, DirectionClass

MAX_DENSE_N = 6


def sigma_ops(N: int) -> list[np.ndarray]:
    """Dense lowering operators sigma_n in natural bit order."""
    d = 2**N
    idx = np.arange(d)
    ops = []
    for n in range(N):
        s = np.zeros((d, d), complex)
        src = idx[(idx >> n) & 1 == 1]
        s[src ^ (1 << n), src] = 1.0
        ops.append(s)
    return ops


def to_natural(psi: np.ndarray, basis: Basis) -> np.ndarray:
    out = np.zeros(2**basis.N, complex)
    out[basis.states] = psi
    return out


def _check_dense(N):
    if N > MAX_DENSE_N:
        raise ValueError(f"dense oracles limited to N <= {MAX_DENSE_N}")


def closed_hamiltonian(array: AtomArray, drive: DriveField, couplings: CouplingMatrices):
    """H = sum_n (Omega f_n/2 s_n^+ + h.c.) + sum_nm Delta_nm s_n^+ s_m, dense."""
    _check_dense(array.N)
    s = sigma_ops(array.N)
    f = drive.weights(array)
    H = np.zeros((2**array.N,) * 2, complex)
    for n in range(array.N):
        a = 0.5 * drive.omega * f[n]
        H += a * s[n].conj().T + np.conj(a) * s[n]
        for m in range(array.N):
            if couplings.delta[n, m]:
                H += couplings.delta[n, m] * s[n].conj().T @ s[m]
    return H


def field_hamiltonian(array: AtomArray, drive: DriveField):
    """H_AF with a -> alpha: (coupling/2) sum_n f_n (alpha s_n^+ + conj(alpha) s_n)."""
    s = sigma_ops(array.N)
    f = drive.weights(array)
    H = np.zeros((2**array.N,) * 2, complex)
    for n in range(array.N):
        a = 0.5 * drive.coupling * f[n] * drive.alpha
        H += a * s[n].conj().T + np.conj(a) * s[n]
    return H


def jump_matrices(table: JumpTable, N: int) -> np.ndarray:
    """Dense P_qs as an array (Q*2, d, d), detector-major."""
    s = np.array(sigma_ops(N)) if N else np.zeros((0, 1, 1), complex)
    d = 2**N
    coll = np.einsum("qn,nij->qij", table.phase, s) if N else np.zeros((table.grid.Q, 1, 1))
    P = (table.L * table.alpha)[:, :, None, None] * np.eye(d) \
        + table.D[:, :, None, None] * coll[:, None]
    return P.reshape(-1, d, d)


def assemble_generator_dense(table: JumpTable, couplings: CouplingMatrices, drive: DriveField,
                             array: AtomArray) -> np.ndarray:
    """Brute force H_AA + H_AF(alpha) - (i/2) sum_qs P_qs^+ P_qs, detector by detector."""
    _check_dense(array.N)
    s = sigma_ops(array.N)
    H = field_hamiltonian(array, drive)
    for n in range(array.N):
        for m in range(array.N):
            if couplings.delta[n, m]:
                H = H + couplings.delta[n, m] * s[n].conj().T @ s[m]
    # extended-precision accumulation keeps the 2Q-term sum at the 1e-16 level
    P = jump_matrices(table, array.N).astype(np.clongdouble)
    PtP = np.einsum("kji,kjl->il", P.conj(), P).astype(complex)
    return H - 0.5j * PtP


def brute_force_probabilities(psi_nat: np.ndarray, table: JumpTable, N: int) -> np.ndarray:
    P = jump_matrices(table, N)
    out = P @ psi_nat
    return np.sum(np.abs(out) ** 2, axis=1).reshape(-1, 2)


# master equation ------------------------------------------------------------

@dataclass
class MEResult:
    times: np.ndarray
    ground: np.ndarray  # all-ground population
    populations: np.ndarray  # (T, N) excited populations
    coherences: np.ndarray  # (T, N) <sigma_n>
    rho: np.ndarray  # final density matrix

    @property
    def excited_sum(self):
        return self.populations.sum(1)


def _lindblad_closed(H, s, gamma):
    N = len(s)
    sd = [x.conj().T for x in s]
    # sum_nm Gamma_nm s_n^+ s_m
    A = sum(gamma[n, m] * sd[n] @ s[m] for n in range(N) for m in range(N)) if N else 0 * H
    Heff = H - 0.5j * A

    def rhs(rho):
        out = -1j * (Heff @ rho - rho @ Heff.conj().T)
        for n in range(N):
            x = s[n] @ rho
            for m in range(N):
                if gamma[n, m]:
                    out += gamma[n, m] * x @ sd[m]
        return out
    return rhs


def _lindblad_jumps(H, P):
    PtP = np.einsum("kji,kjl->il", P.conj(), P)
    Heff = H - 0.5j * PtP
    K, d, _ = P.shape
    Pc = P.conj().transpose(1, 0, 2).reshape(d, K * d)

    def rhs(rho):
        X = (P @ rho).transpose(1, 0, 2).reshape(d, K * d)
        return -1j * (Heff @ rho - rho @ Heff.conj().T) + X @ Pc.T
    return rhs


def _integrate(rhs, rho0, t_grid, dt, N, observe):
    t_grid = np.asarray(t_grid, float)
    if np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ValueError("t_grid must be non-negative and increasing")
    rho = rho0.copy()
    t = 0.0
    out = []
    for target in t_grid:
        n = int(math.ceil((target - t) / dt - 1e-9))
        h = (target - t) / n if n else 0.0
        for _ in range(n):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * h * k1)
            k3 = rhs(rho + 0.5 * h * k2)
            k4 = rhs(rho + h * k3)
            rho = rho + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = target
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-6:
            raise FloatingPointError(f"trace drift {tr - 1.0:.2e}; reduce dt")
        out.append(observe(rho))
    return rho, out


def _observer(N):
    s = sigma_ops(N)
    idx = np.arange(2**N)

    def obs(rho):
        diag = np.diag(rho).real
        pops = [diag[(idx >> n) & 1 == 1].sum() for n in range(N)]
        cohs = [np.trace(x @ rho) for x in s]
        return diag[0], pops, cohs
    return obs


def _pack(t_grid, obs, rho, N):
    g = np.array([o[0] for o in obs])
    p = np.array([o[1] for o in obs]).reshape(len(obs), N)
    c = np.array([o[2] for o in obs], complex).reshape(len(obs), N)
    return MEResult(np.asarray(t_grid, float), g, p, c, rho)


def master_equation_evolve(array: AtomArray, drive: DriveField, couplings: CouplingMatrices,
                           t_grid, dt: float = 0.005, rho0=None) -> MEResult:
    """Closed-form master equation with the reduced drive Omega f_n / 2."""
    _check_dense(array.N)
    N = array.N
    d = 2**N
    H = closed_hamiltonian(array, drive, couplings)
    rhs = _lindblad_closed(H, sigma_ops(N), couplings.gamma)
    if rho0 is None:
        rho0 = np.zeros((d, d), complex)
        rho0[0, 0] = 1.0
    rho, obs = _integrate(rhs, rho0, t_grid, dt, N, _observer(N))
    return _pack(t_grid, obs, rho, N)


def grid_master_equation_evolve(array: AtomArray, drive: DriveField, couplings: CouplingMatrices,
                                table: JumpTable, t_grid, dt: float = 0.005, rho0=None) -> MEResult:
    """Master equation with H_AF(alpha) and one Lindblad term per detector (N <= 2)."""
    if array.N > 2:
        raise ValueError("detector-resolved master equation limited to N <= 2")
    N = array.N
    d = 2**N
    s = sigma_ops(N)
    H = field_hamiltonian(array, drive)
    for n in range(N):
        for m in range(N):
            if couplings.delta[n, m]:
                H = H + couplings.delta[n, m] * s[n].conj().T @ s[m]
    rhs = _lindblad_jumps(H, jump_matrices(table, N))
    if rho0 is None:
        rho0 = np.zeros((d, d), complex)
        rho0[0, 0] = 1.0
    rho, obs = _integrate(rhs, rho0, t_grid, dt, N, _observer(N))
    return _pack(t_grid, obs, rho, N)


# source-mode trajectories ---------------------------------------------------

def source_mode_trajectory(array: AtomArray, drive: DriveField, couplings: CouplingMatrices,
                           config: EngineConfig, index: int = 0, tol: float = 1e-10) -> TrajectoryResult:
    """MCWF with the classical drive and collective jumps sqrt(rate_k) sum_n V_nk s_n.

    Propagation uses the exact matrix exponential of the dense effective
    Hamiltonian and locates jumps by bisection; only atomic observables are
    recorded (``q`` holds the source-mode index, ``s`` is zero).
    """
    _check_dense(array.N)
    if not config.sample_interval > 0:
        raise ValueError("source-mode trajectories need a sampling interval")
    N = array.N
    s = sigma_ops(N)
    sm = source_modes(couplings)
    J = [math.sqrt(r) * sum(sm.modes[n, k] * s[n] for n in range(N)) for k, r in enumerate(sm.rates)]
    H = closed_hamiltonian(array, drive, couplings)
    Heff = H - 0.5j * sum(j.conj().T @ j for j in J)
    rng = trajectory_rng(config.seed, index)
    h = config.sample_interval
    U = expm(-1j * Heff * h)
    idx = np.arange(2**N)
    excited_mask = [(idx >> n) & 1 == 1 for n in range(N)]
    pop = np.array([bin(i).count("1") for i in idx])

    psi = np.zeros(2**N, complex)
    psi[0] = 1.0
    thr = 1.0 - rng.random()
    t = 0.0
    times, modes, st, ex, gr, pops, cohs = [], [], [], [], [], [], []

    def sample(t, psi):
        w = np.abs(psi) ** 2
        w = w / w.sum()
        st.append(t)
        ex.append(float(w @ pop))
        gr.append(float(w[0]))
        pops.append([float(w[m].sum()) for m in excited_mask])
        nrm = np.vdot(psi, psi).real
        cohs.append([np.vdot(psi, x @ psi) / nrm for x in s])

    sample(0.0, psi)
    next_sample = h
    while t < config.duration - 1e-12:
        rest = next_sample - t
        prop = U if abs(rest - h) < 1e-12 else expm(-1j * Heff * rest)
        cand = prop @ psi
        if np.vdot(cand, cand).real >= thr:
            psi, t = cand, next_sample
            sample(t, psi)
            next_sample += h
            continue
        lo, hi = 0.0, rest
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(expm(-1j * Heff * mid) @ psi) ** 2 >= thr:
                lo = mid
            else:
                hi = mid
        tau = 0.5 * (lo + hi)
        psi = expm(-1j * Heff * tau) @ psi
        t += tau
        w = np.array([np.linalg.norm(j @ psi) ** 2 for j in J])
        k = min(int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right")), len(w) - 1)
        psi = J[k] @ psi
        psi /= np.linalg.norm(psi)
        times.append(t)
        modes.append(k)
        thr = 1.0 - rng.random()
    n = len(st)
    return TrajectoryResult(index, config.duration, np.array(times), np.array(modes, dtype=int),
                            np.zeros(len(times), dtype=int), np.array(st), np.array(ex),
                            np.array(gr), np.array(pops).reshape(n, N),
                            np.array(cohs, complex).reshape(n, N))


# classical dipoles ----------------------------------------------------------

@dataclass
class ClassicalDipoles:
    beta: np.ndarray

    @property
    def populations(self):
        return np.abs(self.beta) ** 2

    @property
    def phases(self):
        return np.angle(self.beta)


def classical_steady_state(array: AtomArray, drive: DriveField, couplings: CouplingMatrices,
                           max_cond: float = 1e12) -> ClassicalDipoles:
    """Linear coupled-dipole steady state: sum_m (Delta_nm - i Gamma_nm / 2) beta_m = -Omega f_n / 2.

    Equivalent to (i Delta + Gamma/2) beta = -i Omega f / 2; beta_n is the
    low-intensity limit of <sigma_n>.
    """
    M = couplings.delta - 0.5j * couplings.gamma
    cond = np.linalg.cond(M) if array.N else 1.0
    if not np.isfinite(cond) or cond > max_cond:
        raise np.linalg.LinAlgError(f"coupled-dipole system is singular (condition number {cond:.3e})")
    rhs = -0.5 * drive.omega * drive.weights(array)
    beta = np.linalg.solve(M, rhs) if array.N else np.zeros(0, complex)
    return ClassicalDipoles(beta)


def coherent_flux(table: JumpTable, beta: np.ndarray) -> np.ndarray:
    """|L alpha + D sum_n phase_qn beta_n|^2 per detector, shape (Q, 2)."""
    amp = table.L * table.alpha
    if len(beta):
        amp = amp + table.D * (table.phase @ beta)[:, None]
    return np.abs(amp) ** 2


@dataclass
class ScanPoint:
    d: float
    w0: float
    R: float
    T: float
    S: float


def low_intensity_scan(layout: str, d_values, w0_values, grid: DetectorGrid | None = None,
                       omega: float = 0.02, theta_factor: float = 2.0, mode: str = "angular"):
    """Coherent far-field power fractions of classical dipoles over a (d, w0) grid.

    Returns (points, best) with ``best`` the point of maximal reflectivity.
    ``w0_values`` may be a callable of d (e.g. ``lambda d: 2 * d``).
    """
    grid = grid or build_grid(2800)
    points = []
    for d in np.atleast_1d(d_values):
        w0s = w0_values(d) if callable(w0_values) else w0_values
        array = build_hex_array(layout, float(d))
        cpl = build_couplings(array)
        for w0 in np.atleast_1d(w0s):
            drive = DriveField(-omega, float(w0))
            table = jump_coefficients(grid, drive, array, mode)
            beta = classical_steady_state(array, drive, cpl).beta
            flux = coherent_flux(table, beta).sum(1)
            m = DirectionClass.from_drive(drive, theta_factor).masks(grid.theta)
            points.append(ScanPoint(float(d), float(w0), flux[m[BACKWARD]].sum() / drive.flux,
                                    flux[m[FORWARD]].sum() / drive.flux,
                                    flux[m[SIDE]].sum() / drive.flux))
    best = max(points, key=lambda p: p.R)
    return points, best


# exact waiting times -------------------------------------------------------

def waiting_time_density(system, mask, edges, n_sub: int = 20):
    """Bin-averaged stationary waiting-time density between consecutive detections in ``mask``.

    w(tau) = Tr[J e^{(L - J) tau} J rho_ss] / Tr[J rho_ss], where J is the
    superoperator of the detectors selected by ``mask`` and L the full
    Liouvillian assembled from the same jump table (small N only).  ``edges``
    are in units of 1/Gamma; the returned density is per unit time.
    """
    N = system.array.N
    if N > 2:
        raise ValueError("exact waiting times limited to N <= 2")
    d = 2**N
    I = np.eye(d)
    s = sigma_ops(N)
    H = field_hamiltonian(system.array, system.drive)
    for n in range(N):
        for m in range(N):
            if system.couplings.delta[n, m]:
                H = H + system.couplings.delta[n, m] * s[n].conj().T @ s[m]
    P = jump_matrices(system.table, N).reshape(system.grid.Q, 2, d, d)

    def sandwich(ops):
        return sum(np.kron(J, J.conj()) for J in ops)

    sel = P[np.asarray(mask)].reshape(-1, d, d)
    allP = P.reshape(-1, d, d)
    PtP = np.einsum("kji,kjl->il", allP.conj(), allP)
    Heff = H - 0.5j * PtP
    L = -1j * (np.kron(Heff, I) - np.kron(I, Heff.conj())) + sandwich(allP)
    Jm = sandwich(sel)
    _, sv, vh = np.linalg.svd(L)
    if sv[-1] > 1e-8 * sv[0]:
        raise np.linalg.LinAlgError("Liouvillian has no stationary state")
    ss = vh[-1].conj().reshape(d, d)
    ss = ss / np.trace(ss)
    rate = float(np.trace((Jm @ ss.reshape(-1)).reshape(d, d)).real)
    rho1 = Jm @ ss.reshape(-1) / rate
    L0 = L - Jm
    tr = np.eye(d).reshape(-1)
    out = []
    edges = np.asarray(edges, float)
    for lo, hi in zip(edges[:-1], edges[1:]):
        ts = np.linspace(lo, hi, n_sub + 1)
        w = [float((tr @ (Jm @ (expm(L0 * t) @ rho1))).real) for t in ts]
        out.append(np.trapezoid(w, ts) / (hi - lo))
    return np.array(out), rate
