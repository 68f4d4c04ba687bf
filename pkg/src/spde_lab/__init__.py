"""Simulation and reaction-intensity estimation for the semi-linear
fractional stochastic heat equation at small diffusivity."""

__version__ = "0.1.0"

from .estimators import (  # noqa: E402
    EmptyWindow,
    EstimateResult,
    GridMismatch,
    KnownPhysics,
    NonparamSpec,
    Window,
    ZeroInformation,
    confidence_interval,
    estimate_global,
    estimate_localized,
    estimate_nonparametric,
    optimal_bandwidths,
)
from .experiments import MCConfig, MCResult, RateFit, coverage_and_normality, fit_rate, run_mc  # noqa: E402
from .mesh import MeshPolicy, MeshReport, check_mesh  # noqa: E402
from .modes import default_k_nu, estimate_spectral, ou_mle  # noqa: E402
from .simulator import (  # noqa: E402
    REACTIONS,
    AffineField,
    BlowUpError,
    GridSpec,
    ModelSpec,
    Trajectory,
    forward_semigroup,
    simulate,
)
from .spectral import DomainSpec, apply_semigroup, eigen, from_spectral, green_kernel, phi, to_spectral  # noqa: E402
