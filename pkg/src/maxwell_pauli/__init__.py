"""Pseudospectral solver for the eps-modified many-body Maxwell-Pauli system."""

from .energy import (
    CoulombPotential,
    NuclearConfig,
    build_potential,
    coulomb_bound_gap,
    field_energy,
    kinetic_energy,
    scale_state,
    total_energy,
    validate_stability_hypothesis,
)
from .evolver import (
    EnergyLedger,
    StepConfig,
    StepFailure,
    SystemState,
    dissipation_audit,
    epsilon_continuation,
    make_state,
    picard_step,
    run,
)
from .spectral import SpectralGrid, make_grid

__version__ = "0.1.0"

__all__ = [
    "CoulombPotential",
    "EnergyLedger",
    "NuclearConfig",
    "SpectralGrid",
    "StepConfig",
    "StepFailure",
    "SystemState",
    "build_potential",
    "coulomb_bound_gap",
    "dissipation_audit",
    "epsilon_continuation",
    "field_energy",
    "kinetic_energy",
    "make_grid",
    "make_state",
    "picard_step",
    "run",
    "scale_state",
    "total_energy",
    "validate_stability_hypothesis",
]
