"""Directional classification, waiting-time histograms, pair fractions, patterns and power budgets.

All functions take times in internal units (1/Gamma); conversion to ns uses
:class:`~arrayphotons.model.PhysicalParams`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DriveField, PhysicalParams

FORWARD, BACKWARD, SIDE = "forward", "backward", "side"
CLASSES = (FORWARD, BACKWARD, SIDE)


@dataclass(frozen=True)
class DirectionClass:
    theta_cut: float

    def __post_init__(self):
        if not 0 < self.theta_cut < np.pi / 2:
            raise ValueError("theta_cut must lie in (0, pi/2)")

    @classmethod
    def from_drive(cls, drive: DriveField, factor: float = 2.0) -> "DirectionClass":
        return cls(factor * drive.divergence)

    def masks(self, theta):
        theta = np.asarray(theta, float)
        fwd = theta < self.theta_cut
        bwd = theta > np.pi - self.theta_cut
        return {FORWARD: fwd, BACKWARD: bwd, SIDE: ~(fwd | bwd)}

    def classify(self, theta):
        """Class label(s) for polar angle(s) theta."""
        m = self.masks(theta)
        out = np.where(m[FORWARD], FORWARD, np.where(m[BACKWARD], BACKWARD, SIDE))
        return str(out) if out.ndim == 0 else out


def class_times(results, grid, dclass: DirectionClass, cls: str, burn_in: float = 0.0):
    """Per-trajectory arrays of detection times in one class, after burn-in."""
    out = []
    for r in results:
        sel = dclass.masks(grid.theta[r.q])[cls] & (r.times >= burn_in)
        out.append(r.times[sel])
    return out


@dataclass
class WaitingHistogram:
    cls: str
    bin_ns: float
    edges_ns: np.ndarray
    counts: np.ndarray
    density: np.ndarray  # 1/ns
    n_events: int
    n_gaps: int
    overflow: int
    rate: float  # events per second

    @property
    def centers_ns(self):
        return 0.5 * (self.edges_ns[1:] + self.edges_ns[:-1])

    def mass_below(self, dt_ns: float) -> float:
        k = int(round(dt_ns / self.bin_ns))
        if abs(k * self.bin_ns - dt_ns) > 1e-9 * self.bin_ns:
            raise ValueError("dt_ns must be a multiple of the bin width")
        return float(np.sum(self.density[:k]) * self.bin_ns)


def waiting_times(times_per_traj, cls: str, bin_ns: float, max_ns: float, observed: float,
                  params: PhysicalParams | None = None) -> WaitingHistogram:
    """Histogram of consecutive gaps within each trajectory, pooled.

    ``observed`` is the total observation time (1/Gamma) summed over
    trajectories, used for the event rate.  The density is normalized so that
    sum(density * bin) = 1 - overflow / n_gaps.
    """
    params = params or PhysicalParams()
    if not (bin_ns > 0 and max_ns >= bin_ns):
        raise ValueError("need 0 < bin_ns <= max_ns")
    gaps = [np.diff(t) for t in times_per_traj if len(t) > 1]
    n_events = int(sum(len(t) for t in times_per_traj))
    if not gaps:
        raise ValueError(f"class {cls!r} has fewer than two events in every trajectory")
    g_ns = params.internal_to_ns(np.concatenate(gaps))
    n_bins = int(round(max_ns / bin_ns))
    edges = bin_ns * np.arange(n_bins + 1)
    counts, _ = np.histogram(g_ns, edges)
    overflow = int(np.sum(g_ns >= edges[-1]))
    n = len(g_ns)
    rate = float(params.rate_to_per_second(n_events / observed)) if observed > 0 else 0.0
    return WaitingHistogram(cls, bin_ns, edges, counts, counts / (n * bin_ns), n_events, n,
                            overflow, rate)


def poisson_reference(rate_per_s: float, edges_ns) -> np.ndarray:
    """Bin-averaged exponential waiting-time density (1/ns) for a Poisson stream."""
    edges = np.asarray(edges_ns, float)
    if rate_per_s < 0:
        raise ValueError("rate must be non-negative")
    r = rate_per_s * 1e-9
    return (np.exp(-r * edges[:-1]) - np.exp(-r * edges[1:])) / np.diff(edges)


def poisson_mass_below(rate_per_s: float, dt_ns: float) -> float:
    return float(-np.expm1(-rate_per_s * dt_ns * 1e-9))


def pair_fraction_cdf(times, dt_cut: float):
    """Running fraction of gaps shorter than dt_cut within one trajectory.

    Returns (t, ratio) evaluated at each event after the first; the
    denominator counts gaps, so the final value equals the waiting-time
    histogram mass below dt_cut for the same events.
    """
    if not dt_cut > 0:
        raise ValueError("dt_cut must be positive")
    times = np.asarray(times, float)
    if len(times) < 2:
        raise ValueError("need at least two events")
    short = np.diff(times) < dt_cut
    return times[1:], np.cumsum(short) / np.arange(1, len(short) + 1)


def pooled_pair_fraction(times_per_traj, dt_cut: float) -> tuple[float, int]:
    """Fraction of gaps < dt_cut over all trajectories and the number of gaps."""
    gaps = [np.diff(t) for t in times_per_traj if len(t) > 1]
    if not gaps:
        raise ValueError("no gaps")
    g = np.concatenate(gaps)
    return float(np.mean(g < dt_cut)), len(g)


def paired_photon_fraction(p_short: float) -> float:
    """Share of photons that belong to a short-gap pair (each pair holds two photons)."""
    return 2.0 * p_short


@dataclass
class RadiationPattern:
    edges: np.ndarray  # theta bin edges, rad
    expectation: np.ndarray  # flux per steradian, units of Gamma
    counts: np.ndarray | None = None
    count_estimate: np.ndarray | None = None
    count_sigma: np.ndarray | None = None

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def radiation_pattern(grid, mean_flux, n_bins: int = 36, theta=None, observed: float = 0.0):
    """Azimuthally integrated flux per unit solid angle in theta bins.

    ``mean_flux`` is the time-averaged p_qs table (Q, 2) or (Q,).  ``theta``
    (detection angles of events) and ``observed`` (total observation time)
    enable the event-count estimator with Poisson error bars.
    """
    edges = np.linspace(0.0, np.pi, n_bins + 1)
    flux = np.asarray(mean_flux, float)
    if flux.ndim == 2:
        flux = flux.sum(1)
    idx = np.clip(np.digitize(grid.theta, edges) - 1, 0, n_bins - 1)
    omega = np.bincount(idx, grid.d_omega, n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        expect = np.bincount(idx, flux, n_bins) / omega
    pat = RadiationPattern(edges, np.nan_to_num(expect))
    if theta is not None and observed > 0:
        eidx = np.clip(np.digitize(np.asarray(theta), edges) - 1, 0, n_bins - 1)
        c = np.bincount(eidx, minlength=n_bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            pat.counts = c
            pat.count_estimate = np.nan_to_num(c / (observed * omega))
            pat.count_sigma = np.nan_to_num(np.sqrt(c) / (observed * omega))
    return pat


def power_budget_counts(results, grid, dclass: DirectionClass, drive: DriveField, burn_in: float):
    """R, T, S from detection counts after burn-in, with binomial-free Poisson errors."""
    observed = sum(r.duration - burn_in for r in results)
    if observed <= 0:
        raise ValueError("burn-in exceeds trajectory duration")
    out = {}
    for cls, key in ((BACKWARD, "R"), (FORWARD, "T"), (SIDE, "S")):
        n = sum(len(t) for t in class_times(results, grid, dclass, cls, burn_in))
        out[key] = n / observed / drive.flux
        out[key + "_err"] = np.sqrt(n) / observed / drive.flux
    out["total"] = out["R"] + out["T"] + out["S"]
    return out


def power_budget_expectation(grid, mean_flux, dclass: DirectionClass, drive: DriveField):
    """R, T, S from the time-averaged detector probabilities."""
    flux = np.asarray(mean_flux, float)
    if flux.ndim == 2:
        flux = flux.sum(1)
    m = dclass.masks(grid.theta)
    out = {"R": flux[m[BACKWARD]].sum() / drive.flux, "T": flux[m[FORWARD]].sum() / drive.flux,
           "S": flux[m[SIDE]].sum() / drive.flux}
    out["total"] = out["R"] + out["T"] + out["S"]
    return {k: float(v) for k, v in out.items()}


def power_budget(results, grid, dclass: DirectionClass, drive: DriveField, burn_in: float = 10.0):
    """Both estimators; ``expectation`` is present when flux samples were taken."""
    out = {"counts": power_budget_counts(results, grid, dclass, drive, burn_in)}
    mean = mean_flux(results)
    if mean is not None:
        out["expectation"] = power_budget_expectation(grid, mean, dclass, drive)
    return out


def mean_flux(results):
    n = sum(r.flux_samples for r in results)
    if n == 0:
        return None
    return sum(r.flux_sum for r in results if r.flux_samples) / n
