"""Plain ``key = value`` run configuration with named presets."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .model import PhysicalParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    layout: str
    w0_nm: float
    omega_mhz: float
    duration_us: float
    J: int
    seed: int
    d_nm: float = 0.0
    coords: str = ""
    omega_phase: float = -math.pi  # rad
    dt: float = 0.01  # 1/Gamma
    Q_target: int = 11200
    burn_in: float = 10.0  # 1/Gamma
    theta_cut_deg: float = 0.0  # 0 -> 2 x divergence angle
    bin_ns: float = 10.0
    max_wait_ns: float = 500.0
    dt_cut_ns: float = 50.0
    sample_interval: float = 0.0  # 1/Gamma; 0 disables traces
    max_excitations: int = 0  # 0 keeps every excitation sector
    mode: str = "angular"
    unraveling: str = "grid"  # "beam": two-mode single-atom split
    output: str = "out"
    wavelength_nm: float = 780.0
    gamma_mhz: float = 6.0  # Gamma / 2pi

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams(self.wavelength_nm, 2 * math.pi * self.gamma_mhz * 1e6)

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                       for k, v in asdict(self).items())


REQUIRED = ("layout", "w0_nm", "omega_mhz", "duration_us", "J", "seed")
POSITIVE = {"w0_nm", "duration_us", "J", "dt", "Q_target", "bin_ns", "max_wait_ns", "dt_cut_ns",
            "wavelength_nm", "gamma_mhz", "omega_mhz"}
NON_NEGATIVE = {"d_nm", "burn_in", "theta_cut_deg", "sample_interval", "max_excitations", "seed"}
LAYOUTS = ("N0", "N1", "N3", "N7", "N13", "N19", "file")
MODES = ("angular", "cos", "sqrtcos")

_LAMBDA = 780.0
_GAMMA_MHZ = 6.0

# Named presets; the seed is never part of a preset.
PRESETS = {
    "fig3": dict(layout="N1", omega_mhz=3.0, w0_nm=430.0, bin_ns=10.0, max_wait_ns=400.0,
                 dt_cut_ns=50.0, duration_us=16000.0, J=16, unraveling="beam"),
    "fig5": dict(layout="N13", d_nm=660.0, w0_nm=900.0, omega_mhz=1.0, bin_ns=25.0,
                 max_wait_ns=1000.0, dt_cut_ns=75.0, duration_us=8000.0, J=4, max_excitations=4),
    "fig6": dict(layout="N19", d_nm=660.0, w0_nm=1100.0, omega_mhz=0.5, bin_ns=25.0,
                 max_wait_ns=2000.0, dt_cut_ns=175.0, duration_us=40000.0, J=1, max_excitations=3),
    "fig7": dict(layout="N1", omega_mhz=25.0, w0_nm=1.2 * _LAMBDA,
                 duration_us=4.0 / (2 * math.pi * _GAMMA_MHZ), J=5000, sample_interval=0.05,
                 burn_in=0.0),
    "fig8": dict(layout="N3", d_nm=0.6 * _LAMBDA, omega_mhz=10.0, w0_nm=1.2 * _LAMBDA,
                 duration_us=4.0 / (2 * math.pi * _GAMMA_MHZ), J=1000, sample_interval=0.05,
                 burn_in=0.0),
    "fig9": dict(layout="N3", d_nm=0.85 * _LAMBDA, w0_nm=1.7 * _LAMBDA, omega_mhz=_GAMMA_MHZ / 50,
                 duration_us=2000.0 / (2 * math.pi * _GAMMA_MHZ), J=20, sample_interval=0.5),
}


def _coerce(name, raw, typ, where):
    try:
        if typ is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        return str(raw)
    except ValueError:
        raise ConfigError(f"{where}: key {name!r} expects {typ.__name__}, got {raw!r}") from None


def build_config(values: dict, where: dict | None = None) -> RunConfig:
    """Validate a mapping of raw values (strings or numbers) into a RunConfig."""
    where = where or {}
    types = {f.name: {"int": int, "float": float, "str": str}[f.type] for f in fields(RunConfig)}
    data = {}
    preset = values.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"{where.get('preset', 'preset')}: unknown preset {preset!r}")
        data.update(PRESETS[preset])
    for k, v in values.items():
        if k == "preset":
            continue
        loc = where.get(k, k)
        if k not in types:
            raise ConfigError(f"{loc}: unknown key {k!r}")
        data[k] = _coerce(k, v, types[k], loc)
    missing = [k for k in REQUIRED if k not in data]
    if missing:
        raise ConfigError("missing keys: " + ", ".join(missing))
    for k, v in data.items():
        loc = where.get(k, k)
        if k in POSITIVE and not v > 0:
            raise ConfigError(f"{loc}: key {k!r} must be positive, got {v!r}")
        if k in NON_NEGATIVE and v < 0:
            raise ConfigError(f"{loc}: key {k!r} must be non-negative, got {v!r}")
    if data["layout"] not in LAYOUTS:
        raise ConfigError(f"{where.get('layout', 'layout')}: layout must be one of {LAYOUTS}")
    if data["layout"] in ("N3", "N7", "N13", "N19") and not data.get("d_nm", 0) > 0:
        raise ConfigError(f"layout {data['layout']} needs a positive d_nm")
    if data["layout"] == "file" and not data.get("coords"):
        raise ConfigError("layout file needs coords")
    if data.get("mode", "angular") not in MODES:
        raise ConfigError(f"{where.get('mode', 'mode')}: mode must be one of {MODES}")
    if data.get("unraveling", "grid") not in ("grid", "beam"):
        raise ConfigError(f"{where.get('unraveling', 'unraveling')}: unraveling must be grid or beam")
    if data.get("unraveling") == "beam" and data["layout"] != "N1":
        raise ConfigError("unraveling beam needs layout N1")
    if data.get("theta_cut_deg", 0) >= 90:
        raise ConfigError(f"{where.get('theta_cut_deg', 'theta_cut_deg')}: theta_cut_deg must be < 90")
    return RunConfig(**data)


def read_values(path):
    """Raw ``key = value`` pairs and their file:line locations; ``#`` starts a comment."""
    path = Path(path)
    values, where = {}, {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (x.strip() for x in line.split("=", 1))
        if k in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {k!r}")
        values[k] = v
        where[k] = f"{path}:{lineno}"
    return values, where


def parse_config(path) -> RunConfig:
    return build_config(*read_values(path))


def theta_cut(cfg: RunConfig, divergence: float) -> float:
    return np.radians(cfg.theta_cut_deg) if cfg.theta_cut_deg > 0 else 2.0 * divergence
