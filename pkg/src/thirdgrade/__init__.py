"""Pseudo-spectral toolkit for the stochastic third-grade fluid on the 2D torus.

Forward solves split the velocity into a pathwise part and an exactly
integrated Ornstein-Uhlenbeck part; linearized and adjoint solvers along a
frozen trajectory feed a Monte-Carlo projected-gradient optimizer for
velocity tracking.
"""

from .control import (
    Control,
    ControlProblem,
    OptimizerOptions,
    OptimizerState,
    StepCollapse,
    cost_J,
    gradient_estimate,
    optimality_residual,
    optimize,
    project_admissible,
)
from .forcing import NoisePath, NoiseSpec, ou_step, sample_stream, trace_diagnostics
from .sensitivity import (
    FrozenState,
    adjoint_rhs,
    duality_residual,
    linearized_rhs,
    solve_adjoint,
    solve_linearized,
)
from .spectral import (
    FluidParams,
    PhysicalField,
    SpectralField,
    TorusGrid,
    check_transport_identity,
    fft_forward,
    fft_inverse,
    leray_project,
    norms,
    op_J,
    op_K,
    rivlin_A,
    state_rhs_G,
    stokes_apply,
    transport_B,
    trilinear_b,
    upsilon_apply,
    upsilon_solve,
)
from .state import (
    Role,
    StateRunReport,
    TimeGrid,
    Trajectory,
    energy_audit,
    noise_trajectory,
    reconstruct_v,
    solve_state,
    solve_state_direct,
)
from .timestepping import NonFiniteError

__version__ = "0.1.0"
