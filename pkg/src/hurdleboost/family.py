"""Losses, links, and negative gradients for the hurdle model parameters.

Three distribution parameters are modelled, each on its own additive
predictor: presence probability (logit link) for the occupancy hurdle,
and the mean ``mu`` and overdispersion ``sigma`` of a zero-truncated
negative binomial for the positive counts (log links for both).

The negative binomial is parameterized so that

    E(Y) = mu,    Var(Y) = mu + sigma * mu**2,

which makes ``sigma -> 0`` the Poisson limit.  Under this convention the
probability of a zero draw is ``p0 = (1 + sigma*mu) ** (-1/sigma)``; the
zero-truncated density renormalizes the untruncated one by ``1 - p0`` on
the support ``y >= 1``.

All functions are vectorized over observations, operate in log space
(log-gamma, log1p, expm1) to avoid overflow, and clamp predictors to
``[-ETA_CLAMP, ETA_CLAMP]`` before exponentiating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

__all__ = [
    "ETA_CLAMP",
    "SIGMA_INIT_FLOOR",
    "FamilyError",
    "binomial_loss",
    "binomial_neg_gradient",
    "log_p_zero",
    "p_zero",
    "truncnb_logpmf",
    "truncnb_loss",
    "truncnb_neg_gradient_mu",
    "truncnb_neg_gradient_sigma",
    "truncnb_mean",
    "offset_init",
    "BinomialLogit",
    "TruncNBMean",
    "TruncNBOverdispersion",
    "GaussianCheck",
]

# Predictors are clamped at +-30 before exp(); exp(30) ~ 1e13 keeps every
# downstream quantity finite in double precision.
ETA_CLAMP = 30.0

# Floor for the method-of-moments overdispersion initializer, applied when
# the empirical variance does not exceed the mean.
SIGMA_INIT_FLOOR = 1e-4


class FamilyError(ValueError):
    """Invalid response values or non-finite intermediates in a family."""


def _clamp(eta):
    return np.clip(np.asarray(eta, dtype=float), -ETA_CLAMP, ETA_CLAMP)


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FamilyError(f"non-finite intermediate in {name}")


# ---------------------------------------------------------------------------
# Occupancy: Bernoulli with logit link
# ---------------------------------------------------------------------------

def binomial_loss(y, eta):
    """Negative Bernoulli log-likelihood, elementwise.

    Uses the softplus form ``log(1 + exp(eta)) - y*eta`` which is exact
    for eta of either sign via ``logaddexp``.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.logaddexp(0.0, eta) - y * eta


def binomial_neg_gradient(y, eta):
    """Negative gradient of the Bernoulli loss w.r.t. the predictor: y - expit(eta)."""
    y = np.asarray(y, dtype=float)
    out = y - expit(np.asarray(eta, dtype=float))
    _check_finite("binomial_neg_gradient", out)
    return out


# ---------------------------------------------------------------------------
# Zero-truncated negative binomial pieces
# ---------------------------------------------------------------------------

def log_p_zero(mu, sigma):
    """log P(Y = 0) for the untruncated NB: ``-(1/sigma) * log1p(sigma*mu)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return -np.log1p(sigma * mu) / sigma


def p_zero(mu, sigma):
    """P(Y = 0) = (1 + sigma*mu) ** (-1/sigma)."""
    return np.exp(log_p_zero(mu, sigma))


def _unpack(eta_mu, eta_sigma):
    eta_mu = _clamp(eta_mu)
    eta_sigma = _clamp(eta_sigma)
    mu = np.exp(eta_mu)
    sigma = np.exp(eta_sigma)
    return mu, sigma


def truncnb_logpmf(y, mu, sigma):
    """Log density of the zero-truncated NB at integer ``y >= 1``.

    The untruncated log pmf with size ``r = 1/sigma`` and success
    probability ``1/(1+sigma*mu)`` is renormalized by ``log(1 - p0)``
    computed as ``log(-expm1(log_p0))`` so that near-one ``p0`` keeps
    full relative precision.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 1) or np.any(y != np.floor(y)):
        raise FamilyError("truncated NB requires integer y >= 1")
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r = 1.0 / sigma
    log_c = np.log1p(sigma * mu)
    logpmf = (
        gammaln(y + r)
        - gammaln(r)
        - gammaln(y + 1.0)
        + y * (np.log(sigma) + np.log(mu) - log_c)
        - r * log_c
    )
    log_p0 = -r * log_c
    log_one_minus_p0 = np.log(-np.expm1(log_p0))
    out = logpmf - log_one_minus_p0
    _check_finite("truncnb_logpmf", out)
    return out


def truncnb_loss(y, eta_mu, eta_sigma):
    """Negative zero-truncated NB log-likelihood at predictor values, elementwise."""
    mu, sigma = _unpack(eta_mu, eta_sigma)
    return -truncnb_logpmf(y, mu, sigma)


def truncnb_neg_gradient_mu(y, eta_mu, eta_sigma):
    """Negative gradient of the truncated NB loss w.r.t. the mu predictor.

    With ``c = 1 + sigma*mu`` and ``w = p0/(1-p0)`` the derivative of the
    log-likelihood w.r.t. ``eta_mu = log(mu)`` is

        y - mu*(1 + sigma*y)/c - w*mu/c .

    ``w`` is computed as ``1/expm1(r*log1p(sigma*mu))`` which stays
    accurate both for p0 near 0 and near 1.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 1):
        raise FamilyError("truncated NB requires y >= 1")
    mu, sigma = _unpack(eta_mu, eta_sigma)
    c = 1.0 + sigma * mu
    a = np.log1p(sigma * mu) / sigma  # = -log_p0 > 0
    w = 1.0 / np.expm1(a)
    out = y - mu * (1.0 + sigma * y) / c - w * mu / c
    _check_finite("truncnb_neg_gradient_mu", out)
    return out


def truncnb_neg_gradient_sigma(y, eta_mu, eta_sigma):
    """Negative gradient of the truncated NB loss w.r.t. the sigma predictor.

    Derivative of the log-likelihood w.r.t. ``eta_sigma = log(sigma)``,
    with ``r = 1/sigma``, ``c = 1 + sigma*mu``, ``w = p0/(1-p0)``:

        -r*(digamma(y+r) - digamma(r)) + y + r*log(c)
          - mu*(1 + sigma*y)/c + w*(r*log(c) - mu/c) .
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 1):
        raise FamilyError("truncated NB requires y >= 1")
    mu, sigma = _unpack(eta_mu, eta_sigma)
    r = 1.0 / sigma
    log_c = np.log1p(sigma * mu)
    c = 1.0 + sigma * mu
    w = 1.0 / np.expm1(r * log_c)
    out = (
        -r * (digamma(y + r) - digamma(r))
        + y
        + r * log_c
        - mu * (1.0 + sigma * y) / c
        + w * (r * log_c - mu / c)
    )
    _check_finite("truncnb_neg_gradient_sigma", out)
    return out


def truncnb_mean(mu, sigma):
    """Mean of the zero-truncated NB: ``mu / (1 - p0)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    one_minus_p0 = -np.expm1(log_p_zero(mu, sigma))
    return mu / one_minus_p0


# ---------------------------------------------------------------------------
# Parameter families: the interface the boosting loop sees
# ---------------------------------------------------------------------------
#
# Each family exposes loss / neg_gradient / offset_init with the signature
# (y, eta, other), where `other` is the predictor of the companion GAMLSS
# parameter (ignored by single-parameter families).  Losses are elementwise;
# empirical risk is their mean.


@dataclass(frozen=True)
class BinomialLogit:
    """Bernoulli occupancy family on the logit scale."""

    name: str = "binomial_logit"
    link: str = "logit"

    def loss(self, y, eta, other=None):
        return binomial_loss(y, eta)

    def neg_gradient(self, y, eta, other=None):
        return binomial_neg_gradient(y, eta)

    def offset_init(self, y):
        y = np.asarray(y, dtype=float)
        ybar = y.mean()
        if ybar <= 0.0 or ybar >= 1.0:
            raise FamilyError(
                "degenerate binary response: all zeros or all ones, "
                "logit offset undefined"
            )
        return float(np.log(ybar) - np.log1p(-ybar))

    def response(self, eta):
        return expit(np.asarray(eta, dtype=float))


@dataclass(frozen=True)
class TruncNBMean:
    """Mean parameter of the zero-truncated NB, log link.

    ``other`` is the overdispersion predictor, held fixed during a mu step.
    """

    name: str = "truncnb_mu"
    link: str = "log"

    def loss(self, y, eta, other=None):
        return truncnb_loss(y, eta, other)

    def neg_gradient(self, y, eta, other=None):
        return truncnb_neg_gradient_mu(y, eta, other)

    def offset_init(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 1):
            raise FamilyError("count model is fit on positive counts only")
        return float(np.log(y.mean()))

    def response(self, eta):
        return np.exp(_clamp(eta))


@dataclass(frozen=True)
class TruncNBOverdispersion:
    """Overdispersion parameter of the zero-truncated NB, log link.

    ``other`` is the mean predictor, held fixed during a sigma step.
    The offset is the method-of-moments estimate
    ``max(SIGMA_INIT_FLOOR, (s^2 - ybar)/ybar^2)`` on the log scale,
    floored so underdispersed samples still yield a valid start.
    """

    name: str = "truncnb_sigma"
    link: str = "log"

    def loss(self, y, eta, other=None):
        return truncnb_loss(y, other, eta)

    def neg_gradient(self, y, eta, other=None):
        return truncnb_neg_gradient_sigma(y, other, eta)

    def offset_init(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 1):
            raise FamilyError("count model is fit on positive counts only")
        ybar = y.mean()
        s2 = y.var(ddof=1) if y.size > 1 else 0.0
        sigma_hat = max(SIGMA_INIT_FLOOR, (s2 - ybar) / ybar**2)
        return float(np.log(sigma_hat))

    def response(self, eta):
        return np.exp(_clamp(eta))


@dataclass(frozen=True)
class GaussianCheck:
    """Squared-error check mode: boosting with this family solves least squares."""

    name: str = "gaussian"
    link: str = "identity"

    def loss(self, y, eta, other=None):
        y = np.asarray(y, dtype=float)
        return 0.5 * (y - np.asarray(eta, dtype=float)) ** 2

    def neg_gradient(self, y, eta, other=None):
        return np.asarray(y, dtype=float) - np.asarray(eta, dtype=float)

    def offset_init(self, y):
        return float(np.mean(y))

    def response(self, eta):
        return np.asarray(eta, dtype=float)


def offset_init(family, y):
    """Offset initializer for ``family`` evaluated on the response vector."""
    return family.offset_init(y)
