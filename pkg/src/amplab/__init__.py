"""Critical couplings of a stochastic linear amplifier driven by beamlet fields."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .field_model import (
    FieldModel,
    GaussianDraw,
    TorusGrid,
    build_beamlet_model,
    eval_field,
    gamma_at,
    k_vector,
    monomials,
    sample_gaussian,
)
from .torus_solver import ComplexMass, EvolvedField, dyson_reference, solve_amplifier, solve_eta
from .path_functionals import (
    DiscretePath,
    PathBounds,
    TimeGrid,
    bounds_and_centering,
    construct_epsilon_path,
    sup_time_integral,
)
from .spectral_optimizer import (
    CriticalReport,
    MuResult,
    critical_report,
    direction_value,
    integrated_gamma,
    mu_alternating,
    mu_oracle_sphere_grid,
    nystrom_covariance_eigs,
)
from .divergence_lab import (
    MomentEstimate,
    SlopeFit,
    closed_form_free_moment,
    growth_slope,
    lambda_scan,
    mc_moment,
    paley_wiener_check,
)
