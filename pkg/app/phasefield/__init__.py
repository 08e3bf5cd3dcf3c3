from app.phasefield.potentials import Potential, Variant, potential_eval
from app.phasefield.cahn_hilliard import ch_step, ch_step_pdas, ch_step_splitting, ch_trajectory
from app.phasefield.energy import ch_energy, ch_energy_terms

__all__ = [
    "Potential", "Variant", "potential_eval",
    "ch_step", "ch_step_pdas", "ch_step_splitting", "ch_trajectory",
    "ch_energy", "ch_energy_terms",
]
