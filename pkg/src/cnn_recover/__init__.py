"""Recover the planted weights of a one-hidden-layer CNN whose patches do not overlap.

Inputs are standard Gaussian and labels are noiseless.  The package covers
the risk and its derivatives, moment-based initialization and gradient descent.
"""

from .activation import Activation, MomentProfile, check_properties, get_activation, moment_profile, rho
from .errors import (
    ConfigError, DecompositionError, DivergenceError, MagnitudeRecoveryError, NumericalError,
    RankDeficiencyError,
)
from .model import (
    ProblemConfig, SampleSet, conditioning, forward, make_ground_truth, match_columns, matching_error,
    patch, sample_dataset,
)
from .risk import empirical_risk, gradient, hessian, population_hessian_mc, spectrum
from .tensor_init import TensorInitOptions, decompose, estimate_moments, tensor_initialize, whiten
from .train import TrainConfig, contraction_check, gd_step, learn_cnn, partition

__version__ = "0.1.0"
