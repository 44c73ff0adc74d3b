"""Renyi-DP accounting and noise calibration for hybrid clipping and twice sampling."""

from .errors import HybridDPError, InfeasibleError, NumericError, UnsupportedError, ValidationError
from .kernels import BACKEND
from .noise import (
    LossEval,
    NoiseProfile,
    max_l2_lp_linf,
    optimal_noise_hybrid,
    optimal_noise_hypercube,
    optimal_noise_symmetric,
    optimize_noise_twice_hybrid,
    privacy_loss,
)
from .rdp import (
    MechanismSpec,
    RdpCurve,
    SamplingPlan,
    asymptotic_coordinate_limit,
    asymptotic_twice,
    calibrate_sigma,
    compose_and_convert,
    converted_epsilon,
    coordinate_sampling_rdp,
    coordinate_sampling_rdp_hybrid,
    gaussian_rdp,
    subsampled_gaussian_rdp_1d,
    twice_sampling_rdp,
)
from .sensitivity import (
    ClippedVector,
    Hybrid,
    Hypercube,
    L2Ball,
    LpLinfMix,
    SubspaceClip,
    clip_blocks,
    clip_hybrid,
    clip_l2,
    clip_linf,
    dominating_sensitivity,
)
from .sampler import (
    PrivateRelease,
    coordinate_sample_aggregate,
    estimate_mean_stats,
    hybrid_pipeline,
    twice_sample_aggregate,
)
from .subspace import OrthoBasis, approx_eigen, generate_basis, principal_angle, subspace_stats

__version__ = "0.1.0"
