"""Numerical engine for 1-D stochastic moving boundary problems.

Two diffusive phases live on the half-lines either side of a randomly
moving interface; the interface feels the boundary traces of both phases
and an independent Brownian forcing.  The package integrates the centered
(interface-fixed) system with a semi-implicit Euler-Maruyama scheme,
reconstructs the moving-frame solution, and ships a verification suite
for the operator inequalities and the distributional solution identity
the scheme relies on.

Modules
-------
grid        uniform interval grids, discrete inner products, difference stencils
operators   Robin-boundary diffusion operator, its square root, gradient bounds
noise       smooth spatial covariance, mode expansion, increment sampling
model       coefficient sets (melting-front, transport, order-book presets)
solver      semi-implicit Euler-Maruyama integrator for the centered system
frame       moving-frame reconstruction and weak-identity verification
mc          ensembles, explosion scans, convergence studies
cli         the ``mbsolve`` command-line entry point
"""

__version__ = "0.1.0"

from .grid import (
    Grid,
    MasterGrid,
    cell_inner,
    discrete_inner,
    discrete_norm,
    forward_diff,
    h1_norm_sq,
    make_grid,
    make_master_grid,
    node_gradient,
    second_diff,
)
from .operators import (
    RobinOperator,
    SpectralDecomposition,
    apply_operator,
    build_robin_operator,
    check_kato_first,
    check_kato_second,
    form_value,
    low_frequency_ratio_max,
    norm_equivalence,
    parabolicity_constant,
    robin_residual,
    sqrt_apply,
)
from .noise import (
    ModeExpansion,
    NoiseKernel,
    NoiseSampler,
    RangeError,
    WienerIncrement,
    build_expansion,
    check_kernel_regularity,
    custom_kernel,
    eval_modes,
    eval_xi_increment,
    gaussian_convolution_kernel,
    gaussian_covariance,
    sample_increment,
    sample_increments,
)
from .model import (
    CoefficientSet,
    ProbeBox,
    TraceValues,
    preset_burgers,
    preset_lob,
    preset_stefan,
    validate,
)
from .solver import (
    CenteredState,
    PathRecord,
    SolverConfig,
    StopReason,
    run,
    step,
    trace,
)
from .frame import (
    MovingFrameField,
    TestFunction,
    bump_family,
    eval_L1,
    eval_L2,
    master_for,
    to_moving_frame,
    toy_verify,
    weak_refinement_study,
    weak_residual,
)
from .mc import (
    ConvergenceReport,
    EnsembleStats,
    ExplosionScan,
    PathSummary,
    ensemble,
    explosion_scan,
    fit_order,
    heat_convergence_study,
    initial_moment_norm,
    robin_eigenvalue,
)

__all__ = [
    "__version__",
    # grid
    "Grid",
    "MasterGrid",
    "make_grid",
    "make_master_grid",
    "discrete_inner",
    "discrete_norm",
    "cell_inner",
    "forward_diff",
    "node_gradient",
    "second_diff",
    "h1_norm_sq",
    # operators
    "RobinOperator",
    "SpectralDecomposition",
    "build_robin_operator",
    "apply_operator",
    "sqrt_apply",
    "form_value",
    "robin_residual",
    "check_kato_first",
    "check_kato_second",
    "low_frequency_ratio_max",
    "norm_equivalence",
    "parabolicity_constant",
    # noise
    "RangeError",
    "NoiseKernel",
    "gaussian_convolution_kernel",
    "custom_kernel",
    "gaussian_covariance",
    "check_kernel_regularity",
    "ModeExpansion",
    "build_expansion",
    "eval_modes",
    "eval_xi_increment",
    "WienerIncrement",
    "NoiseSampler",
    "sample_increment",
    "sample_increments",
    # model
    "CoefficientSet",
    "TraceValues",
    "ProbeBox",
    "preset_stefan",
    "preset_burgers",
    "preset_lob",
    "validate",
    # solver
    "CenteredState",
    "StopReason",
    "PathRecord",
    "SolverConfig",
    "step",
    "run",
    "trace",
    # frame
    "TestFunction",
    "bump_family",
    "MovingFrameField",
    "master_for",
    "to_moving_frame",
    "eval_L1",
    "eval_L2",
    "weak_residual",
    "weak_refinement_study",
    "toy_verify",
    # mc
    "PathSummary",
    "EnsembleStats",
    "initial_moment_norm",
    "ensemble",
    "ExplosionScan",
    "explosion_scan",
    "ConvergenceReport",
    "fit_order",
    "robin_eigenvalue",
    "heat_convergence_study",
]
