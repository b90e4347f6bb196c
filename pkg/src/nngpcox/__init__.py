"""Exact Bayesian inference for Gaussian-CDF Cox processes, accelerated by
nearest-neighbor Gaussian processes."""

__version__ = "0.1.0"

from .errors import (
    DiagnosticError,
    NngpcoxError,
    NumericalError,
    RunawayThinningError,
    ValidationError,
)
from .geometry import Domain, EventSet, load_events, project_events, save_events
from .gp_core import (
    CovParams,
    DenseGP,
    SpaceTimeCovParams,
    block_inverse_update,
    dense_conditional,
    exp_cov,
)
from .mcmc import (
    AugmentedState,
    ChainConfig,
    GammaChainPrior,
    PosteriorDraws,
    inefficiency_factor,
    run_chain,
    sample_lambda_star,
    sample_latent,
    sample_theta_mh,
    sample_thinned,
)
from .nngp import (
    NeighborGraph,
    SparseFactor,
    build_neighbor_graph,
    nngp_conditional_new,
    nngp_factor,
    nngp_log_density,
    nngp_sample_prior,
)
from .simulator import SimOutput, simulate_exgcp_spacetime, simulate_exgcp_spatial, simulate_hpp
from .surfaces import (
    GridSpec,
    IntensityField,
    posterior_intensity_grid,
    predict_next_time,
    surface_max_abs_diff,
)
