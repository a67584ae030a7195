"""Quantum trajectory simulator for two dissipatively coupled Van der Pol
oscillators: steady-state analytics, diffusive/jump unravelings, and
synchronization statistics over Monte Carlo ensembles."""

__version__ = "0.1.0"

from .hilbert import (
    DensityMatrix,
    FockSpace,
    Operator,
    StateVector,
    annihilation,
    basis_state,
    creation,
    expectation,
    identity,
    number,
    position,
    reduced_density,
    tensor,
)
from .lindblad import (
    DegenerateSteadyStateError,
    LindbladModel,
    Superoperator,
    VdpParams,
    analytic_steady_state,
    build_vdp_model,
    classical_tongue,
    correlator_steady,
    liouvillian,
    marginal_excitation,
    propagate,
    steady_phase_difference,
    steady_state_numeric,
)
from .metrics import (
    WindowSpec,
    circular_mean,
    correlator,
    entanglement_entropy,
    pearson,
    phase_difference,
    time_average,
)
from .sse import (
    IntegratorConfig,
    NoiseStream,
    NormCollapseError,
    StepSizeError,
    TrajectoryRecord,
    TruncationLeakError,
    default_dt,
    read_raw_record,
    run_trajectory,
    sample_initial,
    step_diffusive,
    step_jump,
    write_raw_record,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    EnsembleResult,
    Histogram,
    Summary,
    SweepResult,
    ensemble_mean_state,
    histogram,
    run_ensemble,
    summarize,
    sweep,
)
