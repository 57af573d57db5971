"""Boosted hurdle models for gridded count surveys.

Occupancy is modelled as a binomial GAM and positive counts as a
zero-truncated negative binomial GAMLSS (mean and overdispersion each on
their own predictor), all fit by component-wise gradient boosting over
single-degree-of-freedom base-learners, tuned by subsampled empirical
risk and screened by complementary-pairs stability selection.
"""

from hurdleboost.family import (
    BinomialLogit,
    GaussianCheck,
    TruncNBMean,
    TruncNBOverdispersion,
    truncnb_mean,
)

__version__ = "0.1.0"

__all__ = [
    "BinomialLogit",
    "GaussianCheck",
    "TruncNBMean",
    "TruncNBOverdispersion",
    "truncnb_mean",
    "__version__",
]
