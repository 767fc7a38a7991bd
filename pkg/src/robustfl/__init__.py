"""Federated learning with aggregation weights from generalization-bound disagreement.

Each client estimates the mean and variance of its squared bounded loss after
local training, evaluates upper and lower bounds on that second moment over a
grid of Hellinger radii, and reports the summed gap ``eta``.  The server
weights client models by ``1 / eta`` instead of by sample counts.
"""

from .bounds import (
    AggregationWeights,
    BoundPair,
    DisagreementProfile,
    MomentEstimate,
    RadiusGrid,
    bound_pair,
    disagreement_profile,
    empirical_bernstein_std_upper,
    empirical_moments,
    hoeffding_mean_upper,
    lower_radius_limit,
    robust_weights,
    upper_radius_limit,
)
from .losses import BoundedLoss, compute_loss

__version__ = "0.1.0"

__all__ = [
    "AggregationWeights",
    "BoundPair",
    "BoundedLoss",
    "DisagreementProfile",
    "MomentEstimate",
    "RadiusGrid",
    "bound_pair",
    "compute_loss",
    "disagreement_profile",
    "empirical_bernstein_std_upper",
    "empirical_moments",
    "hoeffding_mean_upper",
    "lower_radius_limit",
    "robust_weights",
    "upper_radius_limit",
]
