"""Normal-inverse-gamma evidential outputs, their uncertainty terms and losses.

The scalar functions operate on one :class:`NIGParams` and one
:class:`LabelSet`. :func:`batch_attribute_loss` is the vectorised version used
in training; it returns the per-item loss and its derivatives with respect to
(gamma, upsilon, alpha, beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .special import StudentTParams, digamma, log_gamma, student_t_logpdf


@dataclass(frozen=True)
class NIGParams:
    gamma: float
    upsilon: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")
        if not (self.upsilon > 0 and math.isfinite(self.upsilon)):
            raise ValueError(f"upsilon must be > 0, got {self.upsilon}")
        if not (self.alpha > 1 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be > 0, got {self.beta}")

    def student_t(self) -> StudentTParams:
        """The marginal / predictive Student-t of one observation."""
        g, v, a, b = self.gamma, self.upsilon, self.alpha, self.beta
        return StudentTParams(dof=2.0 * a, loc=g, scale=b * (1.0 + v) / (v * a))


@dataclass(frozen=True)
class UncertaintyReport:
    mean: float
    aleatoric: float
    epistemic: float
    total: float


@dataclass(frozen=True)
class LabelSet:
    """The raw annotator labels for one attribute of one item."""

    values: tuple[float, ...]

    def __init__(self, values: Sequence[float]):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("a label set needs at least one label")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("labels must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / len(self.values)

    @property
    def variance(self) -> float:
        """Population variance (1/M normaliser)."""
        m = self.mean
        return math.fsum((v - m) ** 2 for v in self.values) / len(self.values)


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    reg_mu: float
    reg_sigma: float
    total: float


def uncertainty(omega: NIGParams) -> UncertaintyReport:
    a1 = omega.alpha - 1.0
    aleatoric = omega.beta / a1
    epistemic = omega.beta / (omega.upsilon * a1)
    return UncertaintyReport(mean=omega.gamma, aleatoric=aleatoric, epistemic=epistemic, total=aleatoric + epistemic)


def predictive_logpdf(y, omega: NIGParams):
    """ln St_{2 alpha}(y | gamma, beta (1 + upsilon) / (upsilon alpha)).

    This is both the marginal likelihood of a label and the test-time
    predictive density.
    """
    return student_t_logpdf(y, omega.student_t())


def phi(omega: NIGParams) -> float:
    """Reciprocal of the total predictive variance."""
    return 1.0 / uncertainty(omega).total


def nll_per_observation(labels: LabelSet, omega: NIGParams) -> float:
    return -float(np.mean(predictive_logpdf(np.array(labels.values), omega)))


def nll_averaged(labels: LabelSet, omega: NIGParams) -> float:
    return -predictive_logpdf(labels.mean, omega)


def reg_mu(labels: LabelSet, omega: NIGParams) -> float:
    return phi(omega) * abs(labels.mean - omega.gamma)


def reg_sigma(labels: LabelSet, omega: NIGParams) -> float:
    return phi(omega) * abs(labels.variance - uncertainty(omega).aleatoric)


def attribute_loss(
    labels: LabelSet,
    omega: NIGParams,
    lam: float,
    avg_nll: bool = False,
    use_reg_sigma: bool = True,
) -> LossBreakdown:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    nll = nll_averaged(labels, omega) if avg_nll else nll_per_observation(labels, omega)
    rm = reg_mu(labels, omega)
    rs = reg_sigma(labels, omega) if use_reg_sigma else 0.0
    return LossBreakdown(nll=nll, reg_mu=rm, reg_sigma=rs, total=nll + lam * (rm + rs))


def check_weights(epsilons: Sequence[float], n: int) -> None:
    if len(epsilons) != n:
        raise ValueError(f"expected {n} attribute weights, got {len(epsilons)}")
    if abs(math.fsum(epsilons) - 1.0) > 1e-9:
        raise ValueError(f"attribute weights must sum to 1, got {math.fsum(epsilons)}")


def multi_attribute_loss(
    item_labels: Sequence[LabelSet],
    omegas: Sequence[NIGParams],
    epsilons: Sequence[float],
    lambdas: Sequence[float],
    **variant,
) -> float:
    n = len(item_labels)
    if len(omegas) != n or len(lambdas) != n:
        raise ValueError("labels, predictions and lambdas must have the same length")
    check_weights(epsilons, n)
    return math.fsum(
        eps * attribute_loss(lab, om, lam, **variant).total
        for lab, om, eps, lam in zip(item_labels, omegas, epsilons, lambdas)
    )


# --- vectorised loss and derivatives ----------------------------------------


def nig_nll(y, gamma, upsilon, alpha, beta):
    """Elementwise -ln p(y | omega); arguments broadcast."""
    omega2 = 2.0 * beta * (1.0 + upsilon)
    return (
        0.5 * np.log(np.pi / upsilon)
        - alpha * np.log(omega2)
        + (alpha + 0.5) * np.log(upsilon * (y - gamma) ** 2 + omega2)
        + log_gamma(alpha)
        - log_gamma(alpha + 0.5)
    )


def nig_nll_grad(y, gamma, upsilon, alpha, beta):
    """Partial derivatives of :func:`nig_nll` w.r.t. (gamma, upsilon, alpha, beta)."""
    omega2 = 2.0 * beta * (1.0 + upsilon)
    err = y - gamma
    denom = upsilon * err**2 + omega2
    d_gamma = -(alpha + 0.5) * 2.0 * upsilon * err / denom
    d_upsilon = -0.5 / upsilon - alpha * 2.0 * beta / omega2 + (alpha + 0.5) * (err**2 + 2.0 * beta) / denom
    d_alpha = np.log(denom) - np.log(omega2) + digamma(alpha) - digamma(alpha + 0.5)
    d_beta = -alpha / beta + (alpha + 0.5) * 2.0 * (1.0 + upsilon) / denom
    return d_gamma, d_upsilon, d_alpha, d_beta


@dataclass(frozen=True)
class LossVariant:
    """Switches for the ablation variants of the per-attribute loss.

    ``avg_nll`` replaces the per-observation NLL by the NLL of the averaged
    label; ``use_reg_sigma=False`` drops the variance regulariser;
    ``detach_phi`` treats the regulariser weight as a constant when
    differentiating.
    """

    avg_nll: bool = False
    use_reg_sigma: bool = True
    detach_phi: bool = False


def batch_attribute_loss(labels, mask, gamma, upsilon, alpha, beta, lam, variant=LossVariant()):
    """Loss of one attribute for a batch of items, with gradients.

    ``labels`` and ``mask`` have shape (B, M_max); padded slots carry mask 0.
    ``gamma`` .. ``beta`` have shape (B,). Returns ``(loss, grads)`` where
    ``loss`` has shape (B,) and ``grads`` is a tuple of four (B,) arrays.
    """
    counts = mask.sum(axis=1)
    ybar = (labels * mask).sum(axis=1) / counts
    s2bar = (((labels - ybar[:, None]) ** 2) * mask).sum(axis=1) / counts

    if variant.avg_nll:
        nll = nig_nll(ybar, gamma, upsilon, alpha, beta)
        g_nll = nig_nll_grad(ybar, gamma, upsilon, alpha, beta)
    else:
        args = (labels, gamma[:, None], upsilon[:, None], alpha[:, None], beta[:, None])
        nll = (nig_nll(*args) * mask).sum(axis=1) / counts
        g_nll = tuple((g * mask).sum(axis=1) / counts for g in nig_nll_grad(*args))

    a1 = alpha - 1.0
    phi_ = upsilon * a1 / (beta * (1.0 + upsilon))
    if variant.detach_phi:
        dphi = (0.0, 0.0, 0.0)
    else:
        dphi = (a1 / (beta * (1.0 + upsilon) ** 2), upsilon / (beta * (1.0 + upsilon)), -phi_ / beta)

    mu_err = ybar - gamma
    abs_mu = np.abs(mu_err)
    r_mu = phi_ * abs_mu
    d_gamma_r = -phi_ * np.sign(mu_err)
    d_ups_r = abs_mu * dphi[0]
    d_alpha_r = abs_mu * dphi[1]
    d_beta_r = abs_mu * dphi[2]

    if variant.use_reg_sigma:
        aleatoric = beta / a1
        s_err = s2bar - aleatoric
        abs_s = np.abs(s_err)
        sign_s = np.sign(s_err)
        r_sigma = phi_ * abs_s
        d_ups_r = d_ups_r + abs_s * dphi[0]
        d_alpha_r = d_alpha_r + abs_s * dphi[1] + phi_ * sign_s * beta / a1**2
        d_beta_r = d_beta_r + abs_s * dphi[2] - phi_ * sign_s / a1
    else:
        r_sigma = np.zeros_like(r_mu)

    loss = nll + lam * (r_mu + r_sigma)
    grads = (
        g_nll[0] + lam * d_gamma_r,
        g_nll[1] + lam * d_ups_r,
        g_nll[2] + lam * d_alpha_r,
        g_nll[3] + lam * d_beta_r,
    )
    return loss, grads
