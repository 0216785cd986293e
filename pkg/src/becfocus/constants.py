"""Physical constants, species parameters, and unit scaling.

All quantities are SI unless noted. Angular frequencies are in rad/s
(written s^-1 in comments); linewidths and detunings are stored as
angular frequencies -- see the ``detuning_convention`` note on Rb85.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

HBAR = 1.054571817e-34  # J s (reduced Planck constant, CODATA 2018)
AMU = 1.66053906660e-27  # kg (atomic mass unit)
G_DEFAULT = 9.81  # m/s^2 (local gravitational acceleration)
BOHR_RADIUS = 5.29e-11  # m


@dataclass(frozen=True)
class SpeciesParams:
    """Atomic species constants used by the focusing model.

    mass: kg
    natural_linewidth: 1/s, angular (gamma of the driving transition)
    saturation_intensity: W/m^2
    three_body_K: m^6/s (three-body recombination coefficient)
    recoil_wavenumber: 1/m (k_L of the kick transition)
    bohr_radius: m (unit for scattering lengths)
    """

    name: str
    mass: float
    natural_linewidth: float
    saturation_intensity: float
    three_body_K: float
    recoil_wavenumber: float
    bohr_radius: float = BOHR_RADIUS

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name != "name" and (not math.isfinite(v) or v <= 0):
                raise ValueError(f"SpeciesParams.{f.name} must be strictly positive, got {v!r}")

    def replace(self, **kw) -> "SpeciesParams":
        return dataclasses.replace(self, **kw)


# Rb-85 on the D2 line (780.24 nm).  The linewidth is stored as an angular
# frequency: 3.8e7 s^-1 corresponds to Gamma = 2*pi*6.07 MHz.  Interpreting
# the same number as a linear frequency would be inconsistent with the D2
# linewidth, so the angular reading is the default (configurable by
# constructing a modified SpeciesParams).
RB85 = SpeciesParams(
    name="Rb-85",
    mass=84.911789732 * AMU,  # kg
    natural_linewidth=3.8e7,  # 1/s angular
    saturation_intensity=16.7,  # W/m^2
    three_body_K=4e-41,  # m^6/s
    recoil_wavenumber=2 * math.pi / 780.24e-9,  # 1/m
)

SPECIES_PRESETS = {"Rb-85": RB85, "rb85": RB85}


@dataclass(frozen=True)
class UnitScaling:
    """Harmonic-oscillator unit system used internally by the integrators.

    length_unit: m, time_unit: s, energy_unit: J = hbar / time_unit.
    """

    length_unit: float
    time_unit: float
    energy_unit: float

    def __post_init__(self):
        if self.length_unit <= 0 or self.time_unit <= 0:
            raise ValueError("units must be positive")
        if abs(self.energy_unit * self.time_unit / HBAR - 1.0) > 1e-12:
            raise ValueError("energy_unit must equal hbar / time_unit")

    @classmethod
    def for_trap(cls, mass: float, omega: float) -> "UnitScaling":
        """Oscillator units of a harmonic trap: l = sqrt(hbar/(m*omega))."""
        length = math.sqrt(HBAR / (mass * omega))
        return cls(length_unit=length, time_unit=1.0 / omega, energy_unit=HBAR * omega)

    # round-trip converters (exact inverses by construction)
    def to_si_length(self, x):
        return x * self.length_unit

    def from_si_length(self, x):
        return x / self.length_unit

    def to_si_time(self, t):
        return t * self.time_unit

    def from_si_time(self, t):
        return t / self.time_unit

    def to_si_energy(self, e):
        return e * self.energy_unit

    def from_si_energy(self, e):
        return e / self.energy_unit


def interaction_strength(a_s: float, species: SpeciesParams) -> float:
    """Mean-field interaction strength u = 4 pi hbar^2 a_s / m  (J m^3).

    a_s may be negative (attractive interactions).
    """
    return 4.0 * math.pi * HBAR**2 * a_s / species.mass


def kick_velocity(n_kicks: float, species: SpeciesParams) -> float:
    """Velocity from an n_kicks * hbar * k_L photon-recoil momentum kick (m/s)."""
    if n_kicks < 0:
        raise ValueError("n_kicks must be >= 0")
    return n_kicks * HBAR * species.recoil_wavenumber / species.mass


def fall_velocity_at(z0: float, v0: float = 0.0, g: float = G_DEFAULT) -> float:
    """Speed after falling a distance z0 from initial downward speed v0 (m/s)."""
    if z0 < 0:
        raise ValueError("z0 must be >= 0")
    return math.sqrt(v0 * v0 + 2.0 * g * z0)


def load_species(path: str) -> SpeciesParams:
    """Load a species preset from a key = value config file (SI units).

    Recognized keys: name, mass_amu (or mass_kg), natural_linewidth,
    saturation_intensity, three_body_K, wavelength_nm (or recoil_wavenumber),
    bohr_radius (optional).
    """
    raw: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad species config line: {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            raw[k] = v
    name = raw.pop("name", "custom")
    if "mass_kg" in raw:
        mass = float(raw.pop("mass_kg"))
    else:
        mass = float(raw.pop("mass_amu")) * AMU
    if "recoil_wavenumber" in raw:
        k_l = float(raw.pop("recoil_wavenumber"))
    else:
        k_l = 2 * math.pi / (float(raw.pop("wavelength_nm")) * 1e-9)
    kwargs = dict(
        name=name,
        mass=mass,
        natural_linewidth=float(raw.pop("natural_linewidth")),
        saturation_intensity=float(raw.pop("saturation_intensity")),
        three_body_K=float(raw.pop("three_body_K")),
        recoil_wavenumber=k_l,
    )
    if "bohr_radius" in raw:
        kwargs["bohr_radius"] = float(raw.pop("bohr_radius"))
    if raw:
        raise ValueError(f"unknown species config keys: {sorted(raw)}")
    return SpeciesParams(**kwargs)
