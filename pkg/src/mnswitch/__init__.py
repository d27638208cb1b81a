"""Switching zero-inflated autoregressive multinomial models for disease panels."""

from .data import (
    AreaMetadata,
    CovariateSpec,
    DiseasePanel,
    build_model_data,
    load_area_metadata,
    load_covariates,
    load_panel,
    write_area_metadata,
    write_covariates,
    write_panel,
)
from .diagnostics import effective_sample_size, gelman_rubin
from .errors import ConvergenceError, NumericalError
from .ffbs import (
    FilterResult,
    backward_sample,
    enumerate_area,
    enumerate_posterior,
    filter_panel,
    forward_filter,
    marginal_loglik,
    model_tables,
    presence_marginals,
    smoothed_marginals,
)
from .mcmc import PosteriorDraws, PriorSpec, run_gibbs
from .model import (
    CoefLayout,
    ModelData,
    ModelVariant,
    ParameterState,
    complete_data_loglik,
    decode_state,
    emission_logpmf,
    encode_state,
    initial_distribution,
    mixture_probs,
    presence_prob,
    relative_odds,
    state_table,
    transition_matrix,
)
from .posterior import (
    WaicReport,
    fitted_quantiles,
    fitted_values,
    mean_relative_odds,
    presence_probabilities,
    response_curve,
    summarize,
    waic,
)
from .simulate import (
    PanelDesign,
    ReedFrostParams,
    SimulatedPanel,
    check_conditioning_identity,
    correlation_study,
    multinomial_baseline_correlation,
    simulate_panel,
    simulate_reed_frost,
)

__version__ = "0.1.0"
