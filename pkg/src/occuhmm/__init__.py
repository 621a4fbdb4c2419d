"""Covariate-driven hidden Markov models and state occupancy estimation.

The package fits HMMs whose transition probabilities depend on external
covariates, and estimates how much time the chain spends in each state as
a function of a covariate of interest — by a naive stationary
approximation, by resampling the covariate process (parametric AR or block
bootstrap) and propagating the model, or by smoothing the propagated
probabilities directly with a Dirichlet regression.
"""

from .errors import (
    DomainError,
    ExtrapolationError,
    InputError,
    LikelihoodUnderflowError,
    NonUniquenessError,
    NumericalError,
    OccuHmmError,
    SingularMatrixError,
)
from .hmm import forward_loglik, propagate_state_probs, start_distribution, viterbi
from .model import (
    CovariateSeries,
    EmissionSpec,
    GammaChannel,
    GaussianChannel,
    HmmModel,
    ObservationSeries,
    StateProbSeries,
    TransitionCoefficients,
    VonMisesChannel,
    tpm_from_covariates,
)
from .occupancy import (
    BinningConfig,
    OccupancyCurve,
    bin_occupancy,
    count_mass_range,
    hypothetical_stationary_curve,
    monte_carlo_truth,
    stationary_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "BinningConfig",
    "CovariateSeries",
    "DomainError",
    "EmissionSpec",
    "ExtrapolationError",
    "GammaChannel",
    "GaussianChannel",
    "HmmModel",
    "InputError",
    "LikelihoodUnderflowError",
    "NonUniquenessError",
    "NumericalError",
    "ObservationSeries",
    "OccuHmmError",
    "OccupancyCurve",
    "SingularMatrixError",
    "StateProbSeries",
    "TransitionCoefficients",
    "VonMisesChannel",
    "bin_occupancy",
    "count_mass_range",
    "forward_loglik",
    "hypothetical_stationary_curve",
    "monte_carlo_truth",
    "propagate_state_probs",
    "stationary_distribution",
    "start_distribution",
    "tpm_from_covariates",
    "viterbi",
    "__version__",
]
