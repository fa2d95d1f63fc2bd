"""Monte Carlo wave-function evolution with directional photon records."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .farfield import DetectorGrid, JumpTable, beam_mode_table, build_grid, jump_coefficients
from .model import AtomArray, DriveField
from .operators import Basis, CouplingMatrices, Generator, build_couplings, build_generator

log = logging.getLogger(__name__)


class IntegratorError(RuntimeError):
    pass


class JumpError(RuntimeError):
    pass


@dataclass
class StateVector:
    amps: np.ndarray
    norm2: float = 1.0

    def recompute(self) -> float:
        self.norm2 = float(np.vdot(self.amps, self.amps).real)
        return self.norm2

    def renormalize(self):
        self.amps = self.amps / math.sqrt(self.recompute())
        self.norm2 = 1.0


@dataclass(frozen=True)
class PhotonRecord:
    t: float
    q: int
    s: int
    theta: float
    phi: float


@dataclass
class System:
    """Immutable physics shared by all trajectories of a run."""

    array: AtomArray
    drive: DriveField
    grid: DetectorGrid
    table: JumpTable
    couplings: CouplingMatrices
    generator: Generator
    basis: Basis

    @cached_property
    def weights(self):
        """|L alpha|^2, conj(L alpha) D and |D|^2 per (q, s)."""
        la = self.table.L * self.table.alpha
        return np.abs(la) ** 2, np.conj(la) * self.table.D, np.abs(self.table.D) ** 2

    @classmethod
    def build(cls, array: AtomArray, drive: DriveField, Q: int = 11200, mode: str = "angular",
              max_excitations: int | None = None, grid: DetectorGrid | None = None,
              unraveling: str = "grid") -> "System":
        """``unraveling="beam"`` swaps the detector sphere for the two-mode single-atom split."""
        if unraveling == "beam":
            table = beam_mode_table(drive, array)
            grid = table.grid
        elif unraveling == "grid":
            grid = grid or build_grid(Q)
            table = jump_coefficients(grid, drive, array, mode)
        else:
            raise ValueError("unraveling must be 'grid' or 'beam'")
        couplings = build_couplings(array)
        gen = build_generator(couplings, drive, array, table)
        return cls(array, drive, grid, table, couplings, gen, Basis(array.N, max_excitations))


def apply_generator(psi: np.ndarray, system: System) -> np.ndarray:
    """d psi/dt = -i H_eff psi."""
    return -1j * system.generator.apply(psi, system.basis)


def rk4_step(psi: np.ndarray, system: System, dt: float) -> np.ndarray:
    """Textbook RK4 step with the constant laser decay folded in analytically."""
    g = system.generator
    shifted = Generator(g.raise_coef, g.lower_coef, g.hop, 0.0)

    def f(x):
        return -1j * shifted.apply(x, system.basis)

    k1 = f(psi)
    k2 = f(psi + 0.5 * dt * k1)
    k3 = f(psi + 0.5 * dt * k2)
    k4 = f(psi + dt * k3)
    out = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return math.exp(-0.5 * g.decay * dt) * out


class Propagator:
    """Fixed-step RK4 for the time-independent generator.

    For a linear autonomous system one RK4 step is the matrix
    R = exp(-decay*dt/2) * sum_{k<=4} (A dt)^k / k!; the ladder holds R^(4^l),
    so a stretch of n steps costs O(log n) matrix-vector products and is
    bit-for-bit a sequence of RK4 steps up to rounding.
    """

    def __init__(self, system: System, dt: float = 0.01, levels: int = 6):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.dt = dt
        self.decay = system.generator.decay
        A = -1j * system.generator.matrix(system.basis)
        self.A = A.tocsr()
        d = system.basis.dim
        Ad = A.toarray() * dt
        P = np.eye(d, dtype=complex)
        for k in (4, 3, 2, 1):
            P = np.eye(d) + (Ad @ P) / k
        R = math.exp(-0.5 * self.decay * dt) * P
        self.ladder = [R]
        for _ in range(1, levels):
            M = self.ladder[-1] @ self.ladder[-1]
            self.ladder.append(M @ M)
        self.sizes = [4**l for l in range(levels)]

    def taylor(self, psi: np.ndarray):
        v = [psi]
        for _ in range(4):
            v.append(self.A @ v[-1])
        return np.array(v)

    def _coeffs(self, tau):
        return np.array([1.0, tau, tau**2 / 2, tau**3 / 6, tau**4 / 24])

    def partial(self, v, tau: float) -> np.ndarray:
        return math.exp(-0.5 * self.decay * tau) * (self._coeffs(tau) @ v)

    def partial_norm2(self, gram, tau: float) -> float:
        c = self._coeffs(tau)
        return math.exp(-self.decay * tau) * float((c @ gram @ c).real)

    def step(self, psi: np.ndarray) -> np.ndarray:
        return self.ladder[0] @ psi

    def advance(self, psi, n2, n_steps, threshold):
        """Apply up to ``n_steps`` whole steps while the squared norm stays >= threshold."""
        done = 0
        for lvl in range(len(self.sizes) - 1, -1, -1):
            size = self.sizes[lvl]
            M = self.ladder[lvl]
            while n_steps - done >= size:
                cand = M @ psi
                c2 = float(np.vdot(cand, cand).real)
                if c2 > n2 * (1.0 + 1e-12) + 1e-300:
                    raise IntegratorError(f"norm increased from {n2:.17g} to {c2:.17g}")
                if c2 < threshold:
                    break
                psi, n2 = cand, c2
                done += size
        return psi, n2, done

    def locate(self, psi, threshold, tau_max):
        """Jump time within [0, tau_max] where the squared norm reaches threshold."""
        v = self.taylor(psi)
        gram = np.conj(v) @ v.T
        n0 = self.partial_norm2(gram, 0.0)
        n1 = self.partial_norm2(gram, tau_max)
        if not (n0 >= threshold >= n1):
            if abs(n1 - threshold) <= 1e-9 * threshold:
                return tau_max, self.partial(v, tau_max)
            raise JumpError(f"threshold {threshold} not bracketed by [{n1}, {n0}]")
        fn = lambda tau: self.partial_norm2(gram, tau) - threshold
        tau = brentq(fn, 0.0, tau_max, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return tau, self.partial(v, tau)


def moments(psi: np.ndarray, system: System, lowered=None):
    """(norm2, v, G) with v_n = <psi|sigma_n psi> and G_nm = <sigma_n psi|sigma_m psi>."""
    n2 = float(np.vdot(psi, psi).real)
    if not system.array.N:
        return n2, np.zeros(0, complex), np.zeros((0, 0), complex)
    S = system.basis.lower_all(psi) if lowered is None else lowered
    return n2, S @ np.conj(psi), np.conj(S) @ S.T


def probabilities_from_moments(system: System, n2, v, G) -> np.ndarray:
    """p_qs = |L alpha|^2 n2 + 2 Re[conj(L alpha) D sum_n ph_qn v_n] + |D|^2 sum_nm conj(ph_qn) G_nm ph_qm.

    Linear in the moments, so time averages of p follow from averaged moments.
    """
    A, B, C = system.weights
    p = A * n2
    if len(v):
        ph = system.table.phase
        coh = ph @ v
        if len(v) == 1:
            inc = G[0, 0].real
        else:
            inc = np.einsum("qn,qn->q", np.conj(ph), ph @ G.T).real[:, None]
        p = p + 2.0 * (B.real * coh.real[:, None] - B.imag * coh.imag[:, None]) + C * inc
    return p


def detector_probabilities(psi: np.ndarray, system: System, lowered=None) -> np.ndarray:
    """Table p_qs = <psi|P_qs^+ P_qs|psi> of shape (Q, 2), via the Gram matrix of sigma_n psi."""
    p = probabilities_from_moments(system, *moments(psi, system, lowered))
    if not np.any(p > 0):
        raise JumpError("no detector has positive probability")
    return np.maximum(p, 0.0)


def cone_weights(system: System, mask):
    """Detector sums restricted to ``mask``: the flux into the cone is
    a*n2 + 2 Re(b . v) + Re sum(M * G)."""
    A, B, C = system.weights
    ph = system.table.phase[mask]
    a = float(A[mask].sum())
    b = B[mask].sum(1) @ ph
    c = C[mask].sum(1)
    M = (np.conj(ph) * c[:, None]).T @ ph
    return a, b, M


def project(psi, system: System, q: int, s: int, lowered=None) -> np.ndarray:
    tab = system.table
    out = tab.L[q, s] * tab.alpha * psi
    if system.array.N:
        S = system.basis.lower_all(psi) if lowered is None else lowered
        out = out + tab.D[q, s] * (tab.phase[q] @ S)
    nrm = np.vdot(out, out).real
    if not nrm > 0:
        raise JumpError(f"zero-norm projection on detector ({q}, {s})")
    return out / math.sqrt(nrm)


@dataclass
class EngineConfig:
    duration: float  # units of 1/Gamma
    seed: int
    dt: float = 0.01
    sample_interval: float = 0.0  # 0 disables observable sampling
    burn_in: float = 10.0
    theta_cut: float | None = None  # forward cone for the p_f trace; default 2*divergence

    def __post_init__(self):
        if not (self.duration > 0 and self.dt > 0 and self.sample_interval >= 0 and self.burn_in >= 0):
            raise ValueError("duration and dt must be positive; sample_interval, burn_in >= 0")


@dataclass
class TrajectoryResult:
    index: int
    duration: float
    times: np.ndarray
    q: np.ndarray
    s: np.ndarray
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    excited: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ground: np.ndarray = field(default_factory=lambda: np.zeros(0))
    populations: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    coherences: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), complex))
    forward_flux: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flux_sum: np.ndarray | None = None  # summed p_qs/norm2 over post-burn-in samples
    flux_samples: int = 0
    top_sector: float = 0.0  # largest normalized weight seen in the highest kept sector

    def records(self, grid: DetectorGrid):
        return [PhotonRecord(float(t), int(q), int(s), float(grid.theta[q]), float(grid.phi[q]))
                for t, q, s in zip(self.times, self.q, self.s)]


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, index); independent of execution order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _draw(rng):
    r = 0.0
    while r == 0.0:
        r = rng.random()
    return r


def run_trajectory(system: System, config: EngineConfig, index: int = 0,
                   propagator: Propagator | None = None) -> TrajectoryResult:
    prop = propagator or Propagator(system, config.dt)
    rng = trajectory_rng(config.seed, index)
    basis = system.basis
    N = system.array.N
    dt = config.dt
    theta_cut = config.theta_cut if config.theta_cut is not None else 2.0 * system.drive.divergence
    fwd = system.grid.theta < theta_cut
    top = basis.popcount == basis.popcount.max() if basis.max_excitations is not None and N else None
    psi = basis.ground()
    n2 = 1.0
    t = 0.0
    thr = _draw(rng)
    times, qs, ss = [], [], []
    st, ex, gr, pops, cohs, ff = [], [], [], [], [], []
    cone = cone_weights(system, fwd)
    mom = [0.0, np.zeros(N, complex), np.zeros((N, N), complex)]
    n_flux = 0
    top_max = 0.0
    sampling = config.sample_interval > 0
    next_sample = 0.0 if sampling else math.inf

    def jump(psi):
        S = basis.lower_all(psi) if N else None
        p = detector_probabilities(psi, system, S).ravel()
        cum = np.cumsum(p)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        k = min(k, len(p) - 1)
        q, s = divmod(k, 2)
        return project(psi, system, q, s, S), q, s

    while True:
        target = min(next_sample, config.duration)
        # advance toward target; stop early at a jump
        remaining = target - t
        n_steps = int(math.floor(remaining / dt + 1e-9))
        frac = max(remaining - n_steps * dt, 0.0)
        psi, n2, done = prop.advance(psi, n2, n_steps, thr)
        jumped = False
        if done < n_steps:
            tau, psi = prop.locate(psi, thr, dt)
            t = t + done * dt + tau
            jumped = True
        elif frac > 1e-12:
            v = prop.taylor(psi)
            gram = np.conj(v) @ v.T
            if prop.partial_norm2(gram, frac) < thr:
                tau, psi = prop.locate(psi, thr, frac)
                t = t + done * dt + tau
                jumped = True
            else:
                psi = prop.partial(v, frac)
                t = target
        else:
            t = target
        if jumped:
            if t >= config.duration:
                break
            psi, q, s = jump(psi)
            if top is not None:
                top_max = max(top_max, float(np.sum(np.abs(psi[top]) ** 2)))
            times.append(t)
            qs.append(q)
            ss.append(s)
            n2 = 1.0
            thr = _draw(rng)
            continue
        n2 = float(np.vdot(psi, psi).real)
        if sampling and t >= next_sample - 1e-12:
            w = np.abs(psi) ** 2 / n2
            st.append(t)
            ex.append(float(w @ basis.popcount))
            gr.append(float(w[0]))
            n2_, v, G = moments(psi, system)
            v, G = v / n2, G / n2
            if N:
                pops.append(np.diag(G).real.tolist())
                cohs.append(v)
            a, b, M = cone
            ff.append(a + 2.0 * float((b @ v).real) + float(np.sum(M * G).real))
            if t >= config.burn_in:
                mom[0] += 1.0
                mom[1] += v
                mom[2] += G
                n_flux += 1
            next_sample += config.sample_interval
        if t >= config.duration:
            break
    return TrajectoryResult(
        index, config.duration, np.array(times), np.array(qs, dtype=int), np.array(ss, dtype=int),
        np.array(st), np.array(ex), np.array(gr),
        np.array(pops).reshape(len(st), N), np.array(cohs, complex).reshape(len(st), N),
        np.array(ff), flux_sum(system, mom), n_flux, top_max)


def flux_sum(system: System, mom):
    """Summed p_qs over samples from accumulated normalized moments."""
    if mom[0] == 0:
        return np.zeros((system.grid.Q, 2))
    return np.maximum(probabilities_from_moments(system, *mom), 0.0)


_WORKER = {}


def _init_worker(system, config):
    _WORKER["system"] = system
    _WORKER["config"] = config
    _WORKER["prop"] = Propagator(system, config.dt)


def _run_index(index):
    return run_trajectory(_WORKER["system"], _WORKER["config"], index, _WORKER["prop"])


def run_ensemble(system: System, config: EngineConfig, J: int, workers: int = 1,
                 indices=None) -> list[TrajectoryResult]:
    """Run J independent trajectories; results are ordered by trajectory index."""
    if J < 1:
        raise ValueError("J must be >= 1")
    idx = list(range(J)) if indices is None else list(indices)
    workers = max(1, min(workers or os.cpu_count() or 1, len(idx)))
    if workers == 1:
        prop = Propagator(system, config.dt)
        results = [run_trajectory(system, config, i, prop) for i in idx]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(system, config)) as ex:
            results = list(ex.map(_run_index, idx, chunksize=max(1, len(idx) // (4 * workers))))
    return sorted(results, key=lambda r: r.index)
