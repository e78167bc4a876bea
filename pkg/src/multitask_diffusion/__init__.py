"""Multitask learning over graphs with Laplacian-regularized diffusion adaptation."""

from .analysis import (
    BoundTrajectory,
    InitMoments,
    SpectralBlocks,
    LimitingPoint,
    MomentTrajectory,
    bias_closed_form,
    bias_smoothness_relation,
    bound_recursions,
    empirical_moments,
    eta_sweep,
    init_moments_deterministic,
    init_moments_gaussian,
    spectral_blocks,
    limiting_point,
    single_task_point,
)
from .costs import (
    AgentNoise,
    CostError,
    EmpiricalLogisticCost,
    LogisticCost,
    NoiseProfile,
    QuadraticCost,
    estimate_noise_profile,
    kappa_prime,
)
from .diffusion import (
    AlgorithmParams,
    CombinationMatrix,
    DivergenceError,
    FixedPointError,
    StabilityError,
    StabilityLimits,
    Trajectory,
    atc_step,
    combination_matrix,
    contraction_check,
    deterministic_step,
    fixed_point,
    fixed_point_direct,
    run,
    run_batch,
    stability_limits,
)
from .graph import (
    DisconnectedGraphError,
    GraphError,
    Network,
    SpectralBasis,
    build_network,
    gft,
    igft,
    knn_gaussian_network,
    smoothness,
    spectral_decompose,
)

__version__ = "0.1.0"
