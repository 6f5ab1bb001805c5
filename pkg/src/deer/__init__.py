"""Deep evidential regression for multi-annotator continuous labels."""

from .evidential import (
    LabelSet,
    LossBreakdown,
    NIGParams,
    UncertaintyReport,
    attribute_loss,
    multi_attribute_loss,
    nll_averaged,
    nll_per_observation,
    phi,
    predictive_logpdf,
    reg_mu,
    reg_sigma,
    uncertainty,
)

__version__ = "0.1.0"
