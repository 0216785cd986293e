"""becfocus: optical focusing of a freely falling Bose-Einstein condensate.

Variational width/loss dynamics, a 3D Gross-Pitaevskii cross-check solver,
deposition analytics, and deterministic parameter-sweep tooling.
"""

__version__ = "0.1.0"

from .constants import (AMU, G_DEFAULT, HBAR, RB85, SpeciesParams,
                        UnitScaling, fall_velocity_at, interaction_strength,
                        kick_velocity, load_species)
from .optics import (FocusingBeam, Kinematics, beam_intensity, calibrate_xi,
                     classical_trajectory, dipole_potential_exact, envelope_f,
                     harmonic_frequency_sq, optimal_power)
from .variational import (BetaState, CollapseDetected, VariationalConfig,
                          VariationalState, ansatz_density, initial_widths,
                          integrate, rhs_first_order, rhs_second_order,
                          slice_density_at_plane, width_vs_z)

__all__ = [
    "AMU", "G_DEFAULT", "HBAR", "RB85", "SpeciesParams", "UnitScaling",
    "fall_velocity_at", "interaction_strength", "kick_velocity",
    "load_species", "FocusingBeam", "Kinematics", "beam_intensity",
    "calibrate_xi", "classical_trajectory", "dipole_potential_exact",
    "envelope_f", "harmonic_frequency_sq", "optimal_power", "BetaState",
    "CollapseDetected", "VariationalConfig", "VariationalState",
    "ansatz_density", "initial_widths", "integrate", "rhs_first_order",
    "rhs_second_order", "slice_density_at_plane", "width_vs_z",
]
