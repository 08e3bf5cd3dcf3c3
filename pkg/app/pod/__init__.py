from app.pod.snapshots import (
    SnapshotSet,
    snapshot_gramian,
    snapshot_weights,
    trapezoidal_weights,
    uniform_weights,
)
from app.pod.basis import (
    DecayReport,
    PodBasis,
    decay_sweep,
    eigen_decay_report,
    normalized_spectrum,
    numerical_rank,
    pod_basis,
    projection_error,
    tail_sums,
)
from app.pod.ch_rom import RomOperators, RomRun, ch_rom_build, ch_rom_simulate, ch_rom_step, rom_trajectory_error
from app.pod.ns_rom import (
    DivFreeProjector,
    RomTrajectory,
    discrete_inf_sup,
    div_free_project,
    ns_rom_velocity,
    ns_rom_velocity_pressure,
    orthonormalize,
    project_basis,
    project_snapshots,
    reduced_saddle_check,
    supremizer,
)
