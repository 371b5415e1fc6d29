"""Variable-density k-space trajectory design and analysis toolkit."""

from .analysis import (
    PsfMetrics,
    PsfVolume,
    compute_psf,
    density_compensation,
    density_compliance,
    psf_metrics,
)
from .attraction import KernelField, eval_attraction, precompute_field
from .core import (
    FEAS_TOL,
    HardwareSpec,
    LinearConstraint,
    NormalizedLimits,
    SamplingPattern,
    WaveformReport,
    acceleration_factor,
    kspace_to_waveforms,
    normalized_limits,
    resample_to_dwell,
)
from .density import DensityParams, TargetDensity, discretize, kappa_1d, radial_value
from .optimizer import (
    OptimizerConfig,
    OptimizeResult,
    RunTrace,
    init_radial,
    optimize,
    perturb,
    step_size,
    upsample_shots,
)
from .projection import ProjectionConfig, feasibility_residuals, project_pattern, project_shot
from .repulsion import RepulsionConfig, eval_repulsion, eval_repulsion_direct, eval_repulsion_tree

__version__ = "0.1.0"

__all__ = [
    "FEAS_TOL",
    "DensityParams",
    "HardwareSpec",
    "KernelField",
    "LinearConstraint",
    "NormalizedLimits",
    "OptimizeResult",
    "OptimizerConfig",
    "ProjectionConfig",
    "PsfMetrics",
    "PsfVolume",
    "RepulsionConfig",
    "RunTrace",
    "SamplingPattern",
    "TargetDensity",
    "WaveformReport",
    "acceleration_factor",
    "compute_psf",
    "density_compensation",
    "density_compliance",
    "discretize",
    "eval_attraction",
    "eval_repulsion",
    "eval_repulsion_direct",
    "eval_repulsion_tree",
    "feasibility_residuals",
    "init_radial",
    "kappa_1d",
    "kspace_to_waveforms",
    "normalized_limits",
    "optimize",
    "perturb",
    "precompute_field",
    "project_pattern",
    "project_shot",
    "psf_metrics",
    "radial_value",
    "resample_to_dwell",
    "step_size",
    "upsample_shots",
]
