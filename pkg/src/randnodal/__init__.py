"""Random spectral sums on compact manifolds: nodal sets, critical points and
their expected densities."""

from .gaussian_linalg import (
    TraceCoupledGaussian,
    expected_det_closed_form,
    expected_det_index,
    expected_det_profile,
    schur_conditional,
    signature,
)
from .model_ensembles import (
    RandomSection,
    SpectralBasis,
    build_basis,
    draw_section,
    eval_grid,
    eval_section,
    jet_covariance,
    kernel_diag,
    verify_kernel_asymptotics,
)
from .nodal_analysis import (
    EnsembleConfig,
    MorseFunctionSpec,
    NodalSummary,
    analyze_section,
    count_zeros_circle,
    default_morse,
    run_trials,
)
from .rice_density import (
    AsymptoticConstant,
    DensityQuery,
    asymptotic_constant,
    dtn_constants,
    finite_L_density,
    integrated_density,
)
from .symbol_geometry import (
    MomentSet,
    annulus_moments,
    ball_moments,
    euclidean_symbol,
    mc_moments,
    sphere_shell_moments,
)

__version__ = "0.1.0"
