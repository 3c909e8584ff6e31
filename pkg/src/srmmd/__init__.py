"""Gradient-regularized MMD particle flows with kernel, Stein and metric tooling."""

from .errors import (
    CapabilityError,
    ConfigurationError,
    DivergenceError,
    NumericalError,
    PpmFormatError,
    SingularityError,
)
from .flows import FlowConfig, FlowTrajectory, ParticleEnsemble, flow_step, run_flow, vector_field
from .kernels import (
    FeatureMapKernel,
    GaussianKernel,
    PolynomialKernel,
    RieszKernel,
    kernel_from_config,
)
from .metrics import ksd_squared, mmd_squared, w2_exact
from .stein import SteinKernel, growth_diagnostics, stein_identity_statistic
from .targets import (
    AnalyticTarget,
    EmpiricalTarget,
    GaussianMixture,
    LogisticPosterior,
    SteinTarget,
    StudentTeacherSetup,
    SwissRoll,
    four_gaussians,
    ten_gaussians,
)
from .witness import (
    assemble_hybrid_witness,
    assemble_witness,
    primal_witness_oracle,
)

__all__ = [
    "CapabilityError",
    "ConfigurationError",
    "DivergenceError",
    "NumericalError",
    "PpmFormatError",
    "SingularityError",
    "FlowConfig",
    "FlowTrajectory",
    "ParticleEnsemble",
    "flow_step",
    "run_flow",
    "vector_field",
    "FeatureMapKernel",
    "GaussianKernel",
    "PolynomialKernel",
    "RieszKernel",
    "kernel_from_config",
    "ksd_squared",
    "mmd_squared",
    "w2_exact",
    "SteinKernel",
    "growth_diagnostics",
    "stein_identity_statistic",
    "AnalyticTarget",
    "EmpiricalTarget",
    "GaussianMixture",
    "LogisticPosterior",
    "SteinTarget",
    "StudentTeacherSetup",
    "SwissRoll",
    "four_gaussians",
    "ten_gaussians",
    "assemble_hybrid_witness",
    "assemble_witness",
    "primal_witness_oracle",
]

__version__ = "0.1.0"
