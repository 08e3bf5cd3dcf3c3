from app.flow.navier_stokes import ns_step
from app.flow.coupled import chns_step, initialize_chns, simulate_chns
from app.flow.energy import EnergyStepReport, energy_step_check, total_energy
from app.flow.linearization import StepLinearization, linearize_step

__all__ = [
    "ns_step", "chns_step", "initialize_chns", "simulate_chns",
    "EnergyStepReport", "energy_step_check", "total_energy",
    "StepLinearization", "linearize_step",
]
