"""Exact and Monte Carlo laboratory for a nearest-neighbor spin model
with quenched Gaussian site fields.

The package computes Gibbs expectations three ways (exhaustive enumeration,
a one-dimensional transfer matrix, and heat-bath MCMC) and cross-checks a
family of identities, correlation inequalities, and concentration bounds
over disorder ensembles.
"""

from .errors import CapacityError
from .lattice import LatticeSpec, BlockPartition, build_lattice, block_partition
from .disorder import (
    DisorderField,
    QuadratureGrid,
    sample_disorder,
    gauss_hermite_grid,
    disorder_average,
)
from .gibbs_exact import (
    ModelParams,
    GibbsSummary,
    enumerate_gibbs,
    gibbs_moment,
    batch_gibbs,
    transfer_matrix_1d,
    fd_derivative_check,
    fourth_derivative,
)
from .observables import (
    OverlapMoments,
    overlap_moments,
    field_energy,
    field_energy_variance,
    gg_covariance_terms,
)
from .gibbs_mcmc import (
    ChainState,
    McmcEstimate,
    TwoReplicaSeries,
    RungSeries,
    init_chain,
    heat_bath_sweep,
    run_two_replicas,
    estimate,
    parallel_tempering,
    tempered_two_replicas,
    mcmc_summary,
)
from .verify import (
    CheckConfig,
    EnsembleStats,
    LemmaReport,
    ensemble_scalars,
    check_fkg,
    check_free_energy_variance,
    check_overlap_variance,
    check_covariance_square_sum,
    check_field_energy_identity,
    check_gg_identity,
    check_gg_trend,
    check_convexity,
    check_block_decomposition,
    check_hermite_basis,
    check_fourth_derivative_bound,
    check_field_energy_concentration,
    concentration_experiment,
)
from .runner import ExperimentConfig, main

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "LatticeSpec",
    "BlockPartition",
    "build_lattice",
    "block_partition",
    "DisorderField",
    "QuadratureGrid",
    "sample_disorder",
    "gauss_hermite_grid",
    "disorder_average",
    "ModelParams",
    "GibbsSummary",
    "enumerate_gibbs",
    "gibbs_moment",
    "batch_gibbs",
    "transfer_matrix_1d",
    "fd_derivative_check",
    "fourth_derivative",
    "OverlapMoments",
    "overlap_moments",
    "field_energy",
    "field_energy_variance",
    "gg_covariance_terms",
    "ChainState",
    "McmcEstimate",
    "TwoReplicaSeries",
    "RungSeries",
    "init_chain",
    "heat_bath_sweep",
    "run_two_replicas",
    "estimate",
    "parallel_tempering",
    "tempered_two_replicas",
    "mcmc_summary",
    "CheckConfig",
    "EnsembleStats",
    "LemmaReport",
    "ensemble_scalars",
    "check_fkg",
    "check_free_energy_variance",
    "check_overlap_variance",
    "check_covariance_square_sum",
    "check_field_energy_identity",
    "check_gg_identity",
    "check_gg_trend",
    "check_convexity",
    "check_block_decomposition",
    "check_hermite_basis",
    "check_fourth_derivative_bound",
    "check_field_energy_concentration",
    "concentration_experiment",
    "ExperimentConfig",
    "main",
]
