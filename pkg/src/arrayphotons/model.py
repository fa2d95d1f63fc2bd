"""Physical constants, unit conventions, array geometry and drive parameters.

Internally every length is measured in wavelengths and every rate in units of
the single-atom decay rate, so ``k = 2*pi`` and ``Gamma = 1``.  Conversions to
nm, MHz and ns only happen at the I/O boundary through :class:`PhysicalParams`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi
K = TWO_PI  # wave number for lambda = 1

CIRCULAR = np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)


@dataclass(frozen=True)
class PhysicalParams:
    """Rubidium D2-like defaults: 780 nm, Gamma = 2*pi x 6 MHz."""

    wavelength_nm: float = 780.0
    gamma: float = TWO_PI * 6.0e6  # rad/s

    def __post_init__(self):
        if not (self.wavelength_nm > 0 and self.gamma > 0):
            raise ValueError("wavelength and decay rate must be positive")

    # lengths
    def nm_to_internal(self, x_nm):
        return np.asarray(x_nm, dtype=float) / self.wavelength_nm

    def internal_to_nm(self, x):
        return np.asarray(x, dtype=float) * self.wavelength_nm

    # angular rates given as 2*pi x f[MHz]
    def mhz_to_internal(self, f_mhz):
        return TWO_PI * np.asarray(f_mhz) * 1.0e6 / self.gamma

    def internal_to_mhz(self, w):
        return np.asarray(w) * self.gamma / (TWO_PI * 1.0e6)

    # times
    def ns_to_internal(self, t_ns):
        return np.asarray(t_ns, dtype=float) * 1.0e-9 * self.gamma

    def internal_to_ns(self, t):
        return np.asarray(t, dtype=float) / self.gamma * 1.0e9

    def rate_to_per_second(self, r):
        """Rate in units of Gamma -> events per second."""
        return np.asarray(r, dtype=float) * self.gamma

    def per_second_to_rate(self, r):
        return np.asarray(r, dtype=float) / self.gamma


@dataclass(frozen=True)
class AtomArray:
    positions: np.ndarray  # (N, 2), wavelengths
    u_hat: np.ndarray = field(default_factory=lambda: CIRCULAR.copy())
    d: float = 0.0  # nominal spacing, wavelengths
    layout: str = "file"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)
        u = np.asarray(self.u_hat, dtype=complex)
        if abs(np.vdot(u, u).real - 1.0) > 1e-12:
            raise ValueError("polarization vector must have unit norm")
        object.__setattr__(self, "u_hat", u)
        if len(pos) > 1 and self.min_distance() <= 1e-9:
            raise ValueError("coincident atoms")

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def positions3(self) -> np.ndarray:
        return np.column_stack([self.positions, np.zeros(self.N)])

    def pair_distances(self) -> np.ndarray:
        p = self.positions
        i, j = np.triu_indices(self.N, 1)
        return np.hypot(*(p[i] - p[j]).T)

    def min_distance(self) -> float:
        if self.N < 2:
            return float("inf")
        return float(self.pair_distances().min())


def _ring(n, radius, offset):
    ang = offset + TWO_PI * np.arange(n) / n
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


def build_hex_array(layout: str, d: float = 0.0, *, coords=None, u_hat=None,
                    params: PhysicalParams | None = None) -> AtomArray:
    """Construct one of the supported layouts.

    ``d`` is in wavelengths.  ``N13`` is the centre, the first ring at ``d``
    and the six second-shell sites at ``sqrt(3)*d``; ``N19`` adds the six
    sites at ``2*d``.  ``N0``, ``N1`` and ``N3`` (the (0,0), (d,0), (0,0.7d)
    triangle) cover the single-atom and three-atom comparison setups.
    ``file`` reads ``coords`` (a path, nm units) via :func:`load_coordinates`.
    """
    u = CIRCULAR if u_hat is None else u_hat
    layout = layout.upper() if layout.lower() != "file" else "file"
    if layout == "file":
        if coords is None:
            raise ValueError("layout=file needs a coordinates file")
        pos = load_coordinates(coords, params or PhysicalParams())
        arr = AtomArray(pos, u, 0.0, "file")
        return AtomArray(pos, u, arr.min_distance() if arr.N > 1 else 0.0, "file")
    if layout == "N0":
        return AtomArray(np.zeros((0, 2)), u, d, layout)
    if layout == "N1":
        return AtomArray(np.zeros((1, 2)), u, d, layout)
    if not d > 0:
        raise ValueError("spacing d must be positive")
    if layout == "N3":
        return AtomArray(np.array([[0.0, 0.0], [d, 0.0], [0.0, 0.7 * d]]), u, d, layout)
    shells = {
        "N7": [(6, d, 0.0)],
        "N13": [(6, d, 0.0), (6, np.sqrt(3.0) * d, np.pi / 6)],
        "N19": [(6, d, 0.0), (6, np.sqrt(3.0) * d, np.pi / 6), (6, 2.0 * d, 0.0)],
    }
    if layout not in shells:
        raise ValueError(f"unknown layout {layout!r}")
    pos = [np.zeros((1, 2))] + [_ring(*s) for s in shells[layout]]
    return AtomArray(np.vstack(pos), u, d, layout)


def load_coordinates(path, params: PhysicalParams) -> np.ndarray:
    """Read ``x y`` pairs in nm (``#`` comments allowed); return wavelengths."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) == 3 and abs(float(parts[2])) > 0:
            raise ValueError(f"{path}:{lineno}: non-planar position (z != 0)")
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 'x y'")
        rows.append((float(parts[0]), float(parts[1])))
    pos = params.nm_to_internal(np.array(rows, dtype=float).reshape(-1, 2))
    if len(pos) > 1:
        i, j = np.triu_indices(len(pos), 1)
        if np.any(np.hypot(*(pos[i] - pos[j]).T) < 1e-9):
            raise ValueError(f"{path}: duplicate positions")
    return pos


def gaussian_weight(position, w0: float) -> np.ndarray:
    """exp[-(x^2 + y^2)/w0^2] for one or many in-plane positions."""
    if not w0 > 0:
        raise ValueError("w0 must be positive")
    p = np.asarray(position, dtype=float)
    return np.exp(-np.sum(p * p, axis=-1) / w0**2)


def divergence_angle(w0: float, wavelength: float = 1.0) -> float:
    if not w0 > 0:
        raise ValueError("w0 must be positive")
    return wavelength / (np.pi * w0)


@dataclass(frozen=True)
class DriveField:
    """Resonant Gaussian drive, internal units.

    ``g`` is the magnitude sqrt(vartheta*Gamma).  The atom-field Hamiltonian
    carries the opposite sign (``coupling = -g``, because the single-photon
    field and the dipole element are both positive), so that
    ``Omega = 2*coupling*alpha`` and ``alpha`` is real positive for the default
    phase arg(Omega) = -pi.
    """

    omega: complex
    w0: float

    def __post_init__(self):
        if not self.w0 > 0:
            raise ValueError("w0 must be positive")
        object.__setattr__(self, "omega", complex(self.omega))

    @property
    def a_beam(self) -> float:
        return np.pi * self.w0**2 / 2.0

    @property
    def a_atom(self) -> float:
        return 3.0 / (2.0 * np.pi)

    @property
    def vartheta(self) -> float:
        return self.a_atom / (4.0 * self.a_beam)

    @property
    def g(self) -> float:
        return float(np.sqrt(self.vartheta))

    @property
    def coupling(self) -> float:
        return -self.g

    @property
    def alpha(self) -> complex:
        return self.omega / (2.0 * self.coupling)

    @property
    def flux(self) -> float:
        """|alpha|^2, photons per unit time (units of Gamma)."""
        return abs(self.alpha) ** 2

    @property
    def rayleigh_length(self) -> float:
        return np.pi * self.w0**2

    @property
    def divergence(self) -> float:
        return divergence_angle(self.w0)

    def weights(self, array: AtomArray) -> np.ndarray:
        return gaussian_weight(array.positions, self.w0)


def derive_drive(omega_mhz: float, w0_nm: float, params: PhysicalParams | None = None,
                 phase: float = -np.pi) -> DriveField:
    """Drive from boundary units: Omega = 2*pi x omega_mhz MHz with given phase."""
    params = params or PhysicalParams()
    omega = params.mhz_to_internal(omega_mhz) * np.exp(1j * phase)
    return DriveField(complex(omega), float(params.nm_to_internal(w0_nm)))
