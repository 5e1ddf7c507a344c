"""Simulation and verification toolkit for flows driven by rough paths.

The package covers four layers that build on one another:

* sample-path generation for fractional Brownian motion with small
  Hurst index, plus the Volterra kernel machinery behind it (``fbm``),
* fractional integrals and derivatives on grids, and the change of
  measure weight for perturbed drifts (``fraccalc``),
* path-by-path solvers for the perturbed ODE, the associated transport
  equation and the continuity equation (``flow``, ``transport``,
  ``continuity``),
* Monte Carlo experiment drivers that turn the solvers into
  reproducible statistical evidence (``analysis``), exposed through the
  ``fbmflow`` command line tool (``cli``).

Everything is deterministic given a seed: replicate-level seeds are
derived with a splitmix64 mix so results do not depend on chunking or
worker count.
"""

from .version import __version__
from .rng import derive_seed, rng_for, splitmix64
from .grids import GridFn1D, TimeGrid
from ._backend import backend_name
from .fbm import (
    FbmPath,
    SuperpositionSpec,
    cholesky_fbm,
    circulant_fbm,
    covariance_rh,
    default_lambda,
    kernel_factorization,
    kernel_kh,
    read_path_csv,
    superposed_path,
    volterra_fbm,
    volterra_weight_matrix,
    write_path_csv,
)
from .fraccalc import (
    GirsanovWeight,
    frac_derivative_left,
    frac_integral_left,
    girsanov_weight,
    kh_inverse_ac,
)
from .drifts import (
    DriftField,
    MollifiedFamily,
    drift_registry,
    make_drift,
    mollifier_cdf,
    mollifier_pdf,
)
from .flow import (
    FlowField,
    PicardNonConvergence,
    Trajectory,
    flow_grid,
    inverse_flow,
    malliavin_derivative,
    picard_solve,
    solve_forward,
    variational_derivative,
    write_flowfield_csv,
    write_trajectory_csv,
)
from .transport import (
    GridFunction,
    SpaceGrid,
    TestPair,
    bump_profile,
    read_gridfunction_csv,
    solve_transport,
    transformed_drift,
    upwind_reference,
    weak_residual,
    write_gridfunction_csv,
)
from .continuity import (
    ParticleEnsemble,
    from_density,
    fv_reference,
    pairwise_sum,
    push_forward,
    read_ensemble_csv,
    test_integral,
    write_comparison_csv,
    write_ensemble_csv,
)
from .analysis import (
    MalliavinField,
    McReport,
    averaging_tail,
    holder_fit,
    malliavin_field,
    moment_estimate,
    shuffle_identity_check,
    shuffle_permutations,
    simplex_integral,
    sobolev_slobodeckij,
    sobolev_slobodeckij_stats,
    uniqueness_gap,
)

__all__ = [
    "__version__",
    "backend_name",
    "derive_seed",
    "rng_for",
    "splitmix64",
    "TimeGrid",
    "GridFn1D",
    "FbmPath",
    "SuperpositionSpec",
    "covariance_rh",
    "kernel_kh",
    "kernel_factorization",
    "cholesky_fbm",
    "circulant_fbm",
    "volterra_fbm",
    "default_lambda",
    "superposed_path",
    "volterra_weight_matrix",
    "write_path_csv",
    "read_path_csv",
    "frac_integral_left",
    "frac_derivative_left",
    "kh_inverse_ac",
    "girsanov_weight",
    "GirsanovWeight",
    "DriftField",
    "MollifiedFamily",
    "make_drift",
    "drift_registry",
    "mollifier_pdf",
    "mollifier_cdf",
    "Trajectory",
    "FlowField",
    "PicardNonConvergence",
    "solve_forward",
    "picard_solve",
    "inverse_flow",
    "flow_grid",
    "variational_derivative",
    "malliavin_derivative",
    "write_trajectory_csv",
    "write_flowfield_csv",
    "SpaceGrid",
    "GridFunction",
    "TestPair",
    "bump_profile",
    "transformed_drift",
    "solve_transport",
    "weak_residual",
    "upwind_reference",
    "write_gridfunction_csv",
    "read_gridfunction_csv",
    "ParticleEnsemble",
    "push_forward",
    "test_integral",
    "from_density",
    "fv_reference",
    "pairwise_sum",
    "write_ensemble_csv",
    "read_ensemble_csv",
    "write_comparison_csv",
    "McReport",
    "MalliavinField",
    "moment_estimate",
    "uniqueness_gap",
    "averaging_tail",
    "malliavin_field",
    "sobolev_slobodeckij",
    "sobolev_slobodeckij_stats",
    "shuffle_permutations",
    "simplex_integral",
    "shuffle_identity_check",
    "holder_fit",
]
