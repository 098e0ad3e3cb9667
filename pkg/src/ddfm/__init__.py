"""ddfm: infrared/visible image fusion with diffusion priors.

The engine interleaves unconditional denoising-diffusion sampling with a
one-step hierarchical-Bayes EM correction that pulls each intermediate
clean-image estimate toward the source images, and ships an EM-only
fusion mode plus a six-metric evaluation suite.
"""

from .em import (
    EmParams,
    EmState,
    e_step,
    em_rectify,
    initial_state,
    lx_objective,
    q_objective,
    splitting_objective,
    update_hyperparams,
    update_k,
    update_u,
    update_x,
)
from .errors import (
    CapabilityError,
    ConfigError,
    FileFormatError,
    FusionError,
    InputRangeError,
    NumericError,
    ParameterError,
    ProtocolError,
    ShapeError,
    TransportError,
)
from .metrics import (
    MetricsReport,
    entropy,
    evaluate_fusion,
    mean_report,
    mutual_info,
    qabf,
    ssim_fusion,
    std_dev,
    vif,
)
from .pipeline import (
    FusionConfig,
    RunManifest,
    ddfm_fuse,
    em_only_fuse,
    fuse,
    parse_loss_trace,
)
from .sampler import SamplerState, make_rng, predict_x0, reverse_step, sample_unconditional
from .schedule import NoiseSchedule, build_linear_schedule, from_betas, respaced
from .score import AnalyticGaussianScore, RemoteScore, ScoreModel, analytic_score
from .tensor import (
    broadcast_ir,
    denormalize,
    div,
    grad,
    normalize,
    read_png,
    write_png,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticGaussianScore",
    "CapabilityError",
    "ConfigError",
    "EmParams",
    "EmState",
    "FileFormatError",
    "FusionConfig",
    "FusionError",
    "InputRangeError",
    "MetricsReport",
    "NoiseSchedule",
    "NumericError",
    "ParameterError",
    "ProtocolError",
    "RemoteScore",
    "RunManifest",
    "SamplerState",
    "ScoreModel",
    "ShapeError",
    "TransportError",
    "analytic_score",
    "broadcast_ir",
    "build_linear_schedule",
    "ddfm_fuse",
    "denormalize",
    "div",
    "e_step",
    "em_only_fuse",
    "em_rectify",
    "entropy",
    "evaluate_fusion",
    "from_betas",
    "fuse",
    "grad",
    "initial_state",
    "lx_objective",
    "make_rng",
    "mean_report",
    "mutual_info",
    "normalize",
    "parse_loss_trace",
    "predict_x0",
    "q_objective",
    "qabf",
    "read_png",
    "respaced",
    "reverse_step",
    "sample_unconditional",
    "splitting_objective",
    "ssim_fusion",
    "std_dev",
    "update_hyperparams",
    "update_k",
    "update_u",
    "update_x",
    "vif",
    "write_png",
]
