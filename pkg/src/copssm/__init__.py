"""Copula state space models.

A multivariate nonlinear non-Gaussian state space model on the copula scale:
each observed series is linked to a common latent state by a bivariate
copula, the latent states form a first-order copula Markov chain, and all
copulas are parametrized by Kendall's tau with the family itself treated as
a discrete parameter.  Inference combines No-U-Turn HMC over the continuous
parameters (families marginalized out) with exact Gibbs draws of the family
indicators.
"""

from .errors import (
    CompletenessError,
    ConfigError,
    DomainError,
    FitError,
    NumericError,
)
from .families import (
    EPS_TAU,
    EPS_U,
    CopulaSpec,
    Family,
    Kind,
    cdf,
    density,
    hfunc,
    hinv,
    log_density,
    log_density_grad,
    sample_pair,
    spec_for,
    tau_to_theta,
    theta_to_tau,
)
from .gauss import GaussSSMParams, JointCovariance, build_sigma, dense_loglik, kalman_loglik
from .model import (
    DEFAULT_FAMILIES,
    CopulaScaleData,
    MarginalizedPosterior,
    ModelParams,
    bivariate_margin_density_crosssection,
    bivariate_margin_density_temporal,
    constrain,
    gibbs_family_probs,
    latent_prior_logdensity,
    log_posterior,
    log_posterior_marginalized,
    loglik_obs,
    simulate,
    unconstrain,
)
from .sampler import PosteriorDraws, SamplerConfig, fit, nuts_sample
from .predict import PredictiveSamples, predict_insample, predict_oos, to_data_scale
from .margins import MarginalModel, boxcox, boxcox_inverse, fit_margin, residuals_to_copula
from .score import ScoreReport, comparison_table, crps_from_samples, cumulative_crps

__all__ = [name for name in dir() if not name.startswith("_")]
