"""Concurrent estimation of multi-ligand concentrations from one receptor type.

The toolkit covers the full chain: exact equilibrium dwell-time sampling,
moment-matching and maximum-likelihood estimators with their closed-form error
budgets and Cramer-Rao bounds, the kinetic-proofreading receptor that bins
bound durations biochemically, the reaction network that computes the estimate
from messenger counts, and sweep machinery that cross-validates every analytic
claim against Monte Carlo.
"""

from .errors import (
    ConfigError,
    DomainError,
    IndistinguishableLigandsError,
    InternalConsistencyError,
    LigandSenseError,
    NoEventsRetainedError,
    NoUnboundSignalError,
    UnidentifiableMixtureError,
)
from .kinetics import (
    LigandMixture,
    ObservationSet,
    bound_count_stats,
    bound_probability,
    bound_time_cdf,
    bound_time_pdf,
    derive_rng,
    diffusion_limited_binding_rate,
    log_likelihood,
    sample_observations,
)
from .estimators import (
    BinnedCounts,
    ConcentrationEstimate,
    EstimatorMatrices,
    ThresholdScheme,
    bin_counts,
    build_h,
    build_r,
    build_s,
    build_thresholds,
    estimate_concentrations,
    estimate_ratios_biased,
    estimate_ratios_unbiased,
    estimate_total_concentration,
    ml_ratio_oracle,
)
from .theory import (
    CrlbBounds,
    ErrorReport,
    FisherMatrix,
    NuOptimum,
    average_nmse,
    biased_estimator_analytics,
    concentration_variance,
    crlb,
    crlb_report,
    fisher_information,
    mean_reciprocal_unbound_time,
    nu_objective,
    optimize_nu,
    per_ligand_nmse,
    total_normalized_mse,
    unbiased_estimator_analytics,
    unbiased_ratio_variance,
    unknown_ligand_analytics,
    var_total_estimator,
)
from .kpr import (
    KprScheme,
    MessengerCounts,
    ReceptorCycles,
    absorption_probabilities,
    kpr_mixture_stats,
    kpr_rates,
    mixture_absorption_probabilities,
    sample_receptor_cycles,
    simulate_receptors,
)
from .crn import (
    CrnSpec,
    EndToEndResult,
    crn_integrate,
    crn_steady_state,
    end_to_end_sense,
)
from .experiments import (
    ScenarioConfig,
    SweepRow,
    geometric_unbinding_rates,
    run_kpr_figure,
    run_sweep,
    simulate_ratio_estimates,
    simulate_total_concentration_trials,
)

__version__ = "0.1.0"
