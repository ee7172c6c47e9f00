"""Weak-measurement collapse trajectories and the measuring Hamiltonian."""

from ._tolerances import TOL
from .control import (
    EffectiveHamiltonianSample,
    MostProbablePathParams,
    counter_hamiltonian_check,
    effective_hamiltonian_mpp,
    freeze_feedback_step,
    freeze_run,
    most_probable_path,
)
from .errors import *  # noqa: F401,F403
from .measurement import (
    GaussianMeasurementConfig,
    PositionGridConfig,
    Readout,
    apply_measurement,
    ground_state,
    measurement_operator,
    readout_density,
    sample_readout,
)
from .qstate import BasisKind, QuantumState, bloch_decompose, gellmann_basis, normalize
from .reconstruction import (
    ReconstructionResult,
    TrajectorySample,
    closed_form_nlevel_h,
    closed_form_qubit_h,
    energy_variance_nlevel,
    kernel_space_basis,
    power_identity_check,
    reconstruct_hamiltonian,
    time_derivative,
)
from .rng import TrajectoryStreams
from .trajectory import (
    EnsembleStats,
    TrajectoryRecord,
    dual_axis_trajectory,
    oscillator_trajectory,
    run_ensemble,
    run_trajectory,
)

__version__ = "0.1.0"
