"""Dipole-dipole couplings, the bit-indexed atomic basis and the no-jump generator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .farfield import JumpTable
from .model import K, AtomArray, DriveField


def _geometry(r_vec, u_hat):
    r_vec = np.asarray(r_vec, float)
    if r_vec.shape[-1] == 2:
        r_vec = np.concatenate([r_vec, np.zeros(r_vec.shape[:-1] + (1,))], -1)
    r = np.linalg.norm(r_vec, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_hat = r_vec / r[..., None]
    proj = np.abs(r_hat @ np.asarray(u_hat, complex)) ** 2
    return K * r, np.nan_to_num(proj)


def dipole_shift(r_vec, u_hat) -> np.ndarray:
    """Coherent dipole-dipole shift Delta(r), units of Gamma."""
    xi, p = _geometry(r_vec, u_hat)
    if np.any(xi == 0):
        raise ValueError("coincident atoms: dipole shift diverges")
    return 0.75 * (-(1 - p) * np.cos(xi) / xi
                   + (1 - 3 * p) * (np.sin(xi) / xi**2 + np.cos(xi) / xi**3))


def decay_coeff(r_vec, u_hat) -> np.ndarray:
    """Collective decay coefficient Gamma(r), units of Gamma; equals 1 at r = 0."""
    xi, p = _geometry(r_vec, u_hat)
    small = xi < 1e-3
    x = np.where(small, 1.0, xi)
    full = 1.5 * ((1 - p) * np.sin(x) / x
                  + (1 - 3 * p) * (np.cos(x) / x**2 - np.sin(x) / x**3))
    series = 1.0 + 1.5 * xi**2 * (-(1 - p) / 6.0 + (1 - 3 * p) / 30.0)
    return np.where(small, series, full)


@dataclass(frozen=True)
class CouplingMatrices:
    delta: np.ndarray
    gamma: np.ndarray


def build_couplings(array: AtomArray) -> CouplingMatrices:
    N = array.N
    delta = np.zeros((N, N))
    gamma = np.eye(N)
    i, j = np.triu_indices(N, 1)
    if len(i):
        r = array.positions[i] - array.positions[j]
        delta[i, j] = delta[j, i] = dipole_shift(r, array.u_hat)
        gamma[i, j] = gamma[j, i] = decay_coeff(r, array.u_hat)
    return CouplingMatrices(delta, gamma)


class Basis:
    """Bit-pattern basis: bit n set <=> atom n excited.

    ``max_excitations=None`` keeps all 2**N patterns; otherwise only patterns
    with at most that many excitations are kept (raising out of the top
    sector is dropped).
    """

    def __init__(self, N: int, max_excitations: int | None = None):
        self.N = N
        allp = np.arange(2**N, dtype=np.int64)
        pop = np.array([bin(int(s)).count("1") for s in allp]) if N else np.zeros(1, int)
        keep = np.ones(len(allp), bool) if max_excitations is None else pop <= max_excitations
        order = np.lexsort((allp[keep], pop[keep]))
        self.states = allp[keep][order]
        self.popcount = pop[keep][order]
        self.max_excitations = max_excitations
        self.index = np.full(2**N, -1, dtype=np.int64)
        self.index[self.states] = np.arange(len(self.states))
        # for each atom: basis indices with the bit set and their lowered partners
        self.excited = []
        self.lowered = []
        for n in range(N):
            src = np.nonzero(self.states & (1 << n))[0]
            self.excited.append(src)
            self.lowered.append(self.index[self.states[src] ^ (1 << n)])

    @property
    def dim(self) -> int:
        return len(self.states)

    def ground(self) -> np.ndarray:
        psi = np.zeros(self.dim, complex)
        psi[0] = 1.0
        return psi

    def lower(self, n: int, psi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(psi)
        out[self.lowered[n]] = psi[self.excited[n]]
        return out

    def raise_(self, n: int, psi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(psi)
        out[self.excited[n]] = psi[self.lowered[n]]
        return out

    def lower_all(self, psi: np.ndarray) -> np.ndarray:
        """(N, dim) array of sigma_n psi."""
        out = np.zeros((self.N, self.dim), complex)
        for n in range(self.N):
            out[n, self.lowered[n]] = psi[self.excited[n]]
        return out

    def sector_weights(self, psi: np.ndarray) -> np.ndarray:
        return np.bincount(self.popcount, weights=np.abs(psi) ** 2)


@dataclass(frozen=True)
class Generator:
    """H_eff = sum_n (raise_n s_n^+ + lower_n s_n) + sum_nm hop_nm s_n^+ s_m - (i/2) decay.

    ``decay`` is the real, state-independent laser photon flux sum |L alpha|^2.
    """

    raise_coef: np.ndarray
    lower_coef: np.ndarray
    hop: np.ndarray
    decay: float

    @property
    def N(self) -> int:
        return len(self.raise_coef)

    def apply(self, psi: np.ndarray, basis: Basis) -> np.ndarray:
        """H_eff psi via bit-indexed actions, O(N^2 dim)."""
        out = -0.5j * self.decay * psi
        if self.N == 0:
            return out
        low = basis.lower_all(psi)
        out += self.lower_coef @ low
        mixed = self.hop @ low  # row n: sum_m hop_nm s_m psi
        for n in range(self.N):
            out[basis.excited[n]] += (self.raise_coef[n] * psi + mixed[n])[basis.lowered[n]]
        return out

    def matrix(self, basis: Basis, include_decay: bool = False) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        st = basis.states
        for n in range(self.N):
            src, dst = basis.excited[n], basis.lowered[n]
            rows += [src, dst]
            cols += [dst, src]
            vals += [np.full(len(src), self.raise_coef[n]), np.full(len(src), self.lower_coef[n])]
            for m in range(self.N):
                if self.hop[n, m] == 0:
                    continue
                sel = basis.excited[m]
                mid = st[sel] ^ (1 << m)
                ok = (mid & (1 << n)) == 0
                fin = basis.index[mid[ok] | (1 << n)]
                rows.append(fin)
                cols.append(sel[ok])
                vals.append(np.full(ok.sum(), self.hop[n, m]))
        d = basis.dim
        if rows:
            M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(d, d), dtype=complex).tocsr()
        else:
            M = sp.csr_matrix((d, d), dtype=complex)
        if include_decay:
            M = M - 0.5j * self.decay * sp.identity(d, format="csr")
        return M


def build_generator(couplings: CouplingMatrices, drive: DriveField, array: AtomArray,
                    table: JumpTable) -> Generator:
    """No-jump generator with the coherent field replaced by alpha.

    All detector-summed quantities (laser norm, cross sums c_n, decay matrix)
    are taken from the grid so that -d<psi|psi>/dt equals the sum of the
    detector probabilities exactly.  With the quadrature identities in force
    the lowering terms cancel and the raising term is Omega f_n / 2.
    """
    if table.phase.shape[1] != array.N or couplings.delta.shape[0] != array.N:
        raise ValueError("jump table / couplings do not match the atom array")
    if table.alpha != drive.alpha:
        raise ValueError("jump table built for a different drive")
    alpha = drive.alpha
    f = drive.weights(array)
    c = table.cross_sums()
    raise_coef = 0.5 * drive.coupling * f * alpha - 0.5j * alpha * np.conj(c)
    lower_coef = 0.5 * drive.coupling * f * np.conj(alpha) - 0.5j * np.conj(alpha) * c
    hop = couplings.delta - 0.5j * table.decay_matrix()
    return Generator(raise_coef, lower_coef, hop, abs(alpha) ** 2 * table.laser_norm)


@dataclass(frozen=True)
class SourceModes:
    rates: np.ndarray
    modes: np.ndarray  # columns are mode vectors


def source_modes(couplings: CouplingMatrices, tol: float = 1e-9) -> SourceModes:
    g = couplings.gamma
    if not np.allclose(g, g.T, atol=1e-12):
        raise ValueError("decay matrix is not symmetric")
    rates, modes = np.linalg.eigh(g)
    if rates.size and rates.min() < -tol:
        raise ValueError(f"negative collective decay rate {rates.min():.3e}")
    return SourceModes(np.clip(rates, 0.0, None), modes)
