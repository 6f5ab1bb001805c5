"""Scalar special functions and densities used throughout the package.

Everything here accepts Python floats or numpy arrays and works in float64.
``marginal_oracle`` is deliberately slow: it integrates the Gaussian
likelihood against the normal-inverse-gamma prior numerically and exists only
to check the closed-form Student-t marginal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

__all__ = [
    "DomainError",
    "QuadratureError",
    "StudentTParams",
    "log_gamma",
    "digamma",
    "softplus",
    "sigmoid",
    "student_t_logpdf",
    "gaussian_logpdf",
    "invgamma_logpdf",
    "nig_logpdf",
    "marginal_oracle",
]

LOG_2PI = math.log(2.0 * math.pi)

# Below this the recurrence shifts the argument up before the asymptotic series.
_ASYMPTOTIC_MIN = 10.0

# B_2k / (2k (2k-1)) for the Stirling series of ln Gamma.
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)

# B_2k / (2k) for the asymptotic series of psi.
_PSI = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


class DomainError(ValueError):
    """Argument outside the domain of a special function or density."""


class QuadratureError(RuntimeError):
    """Numerical integration failed to reach the requested tolerance."""


def _as_positive(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise DomainError(f"{name} requires finite x > 0")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def log_gamma(x):
    """ln Gamma(x) for x > 0 (Stirling series after upward recurrence)."""
    z = _as_positive(x, "log_gamma").copy()
    shift = np.zeros_like(z)
    low = z < _ASYMPTOTIC_MIN
    while np.any(low):
        shift[low] += np.log(z[low])
        z[low] += 1.0
        low = z < _ASYMPTOTIC_MIN
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for coef in reversed(_STIRLING):
        series = series * inv2 + coef
    series *= inv
    result = (z - 0.5) * np.log(z) - z + 0.5 * LOG_2PI + series - shift
    return _out(result, x)


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    z = _as_positive(x, "digamma").copy()
    shift = np.zeros_like(z)
    low = z < _ASYMPTOTIC_MIN
    while np.any(low):
        shift[low] += 1.0 / z[low]
        z[low] += 1.0
        low = z < _ASYMPTOTIC_MIN
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for coef in reversed(_PSI):
        series = series * inv2 + coef
    series *= inv2
    result = np.log(z) - 0.5 / z - series - shift
    return _out(result, x)


def softplus(x):
    """ln(1 + exp(x)), overflow-safe."""
    arr = np.asarray(x, dtype=np.float64)
    result = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    return _out(result, x)


def sigmoid(x):
    """Logistic function; the derivative of ``softplus``."""
    arr = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(arr))
    result = np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _out(result, x)


@dataclass(frozen=True)
class StudentTParams:
    """Student-t with ``dof`` degrees of freedom, location ``loc`` and
    squared scale ``scale`` (the variance-like parameter, not its root)."""

    dof: float
    loc: float
    scale: float

    def __post_init__(self):
        if not (self.dof > 0 and math.isfinite(self.dof)):
            raise DomainError(f"dof must be positive, got {self.dof}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"scale must be positive, got {self.scale}")
        if not math.isfinite(self.loc):
            raise DomainError(f"loc must be finite, got {self.loc}")


def student_t_logpdf(t, p: StudentTParams):
    nu, r, s = p.dof, p.loc, p.scale
    t_arr = np.asarray(t, dtype=np.float64)
    norm = log_gamma(0.5 * (nu + 1.0)) - log_gamma(0.5 * nu) - 0.5 * math.log(math.pi * nu * s)
    result = norm - 0.5 * (nu + 1.0) * np.log1p((t_arr - r) ** 2 / (nu * s))
    return _out(result, t)


def gaussian_logpdf(x, mean, var):
    if not var > 0:
        raise DomainError("variance must be positive")
    x_arr = np.asarray(x, dtype=np.float64)
    result = -0.5 * (LOG_2PI + math.log(var)) - 0.5 * (x_arr - mean) ** 2 / var
    return _out(result, x)


def invgamma_logpdf(x, shape, rate):
    if not (shape > 0 and rate > 0):
        raise DomainError("inverse-gamma shape and rate must be positive")
    x_arr = _as_positive(x, "invgamma_logpdf")
    result = shape * math.log(rate) - log_gamma(shape) - (shape + 1.0) * np.log(x_arr) - rate / x_arr
    return _out(result, x)


def nig_logpdf(mu, sigma2, omega):
    """Log density of the normal-inverse-gamma prior at (mu, sigma2).

    ``omega`` is anything with ``gamma``, ``upsilon``, ``alpha`` and ``beta``
    attributes (normally :class:`deer.evidential.NIGParams`).
    """
    g, v, a, b = omega.gamma, omega.upsilon, omega.alpha, omega.beta
    if not (v > 0 and a > 0 and b > 0):
        raise DomainError("NIG requires upsilon, alpha, beta > 0")
    s2 = _as_positive(sigma2, "nig_logpdf sigma2")
    mu_arr = np.asarray(mu, dtype=np.float64)
    result = (
        a * math.log(b)
        + 0.5 * math.log(v)
        - log_gamma(a)
        - 0.5 * (LOG_2PI + np.log(s2))
        - (a + 1.0) * np.log(s2)
        - (2.0 * b + v * (g - mu_arr) ** 2) / (2.0 * s2)
    )
    return _out(result, np.broadcast(mu, sigma2))


def marginal_oracle(y: float, omega, rtol: float = 1e-8) -> float:
    """ln p(y | omega) by nested adaptive quadrature over (mu, sigma^2).

    The variance is integrated on a log scale (sigma^2 = exp(u)); for each
    variance the mean is integrated over a window of +-12 standard deviations
    around the peak of the integrand. Raises :class:`QuadratureError` if
    either level fails to reach ``rtol``.
    """
    g, v, a, b = float(omega.gamma), float(omega.upsilon), float(omega.alpha), float(omega.beta)
    y = float(y)
    log_prior_norm = a * math.log(b) + 0.5 * math.log(v) - log_gamma(a) - 0.5 * LOG_2PI
    peak = (y + v * g) / (1.0 + v)
    d2 = (y - g) ** 2

    # u0 sits near the mode of the u-integrand; integrand values are scaled by
    # exp(-ref) so that quadrature operates on O(1) numbers.
    u0 = math.log((b + 0.5 * v * d2 / (1.0 + v)) / (a + 1.5))
    ref = _log_joint_at_mode(y, g, v, a, b, u0, log_prior_norm)

    def inner(u):
        s2 = math.exp(u)
        half_width = 12.0 * math.sqrt(s2 / (1.0 + v))
        log_const = log_prior_norm - 0.5 * (LOG_2PI + u) - 0.5 * u - (a + 1.0) * u + u - ref

        def f(mu):
            return math.exp(log_const - (y - mu) ** 2 / (2.0 * s2) - (2.0 * b + v * (g - mu) ** 2) / (2.0 * s2))

        val, err = integrate.quad(
            f, peak - half_width, peak + half_width, points=[peak], epsabs=0.0, epsrel=rtol * 0.1, limit=200
        )
        if val > 0 and err > rtol * val:
            raise QuadratureError(f"inner quadrature did not converge at u={u:.4g}")
        return val

    lo, hi = u0 - 8.0, u0 + 8.0 + 40.0 / (a + 0.5)
    total, err = integrate.quad(inner, lo, hi, points=[u0], epsabs=0.0, epsrel=rtol * 0.1, limit=200)
    if not total > 0 or err > rtol * total:
        raise QuadratureError("outer quadrature did not converge")
    return math.log(total) + ref


def _log_joint_at_mode(y, g, v, a, b, u, log_prior_norm):
    # log of the mu-integrated joint at variance exp(u), evaluated at the peak mean
    s2 = math.exp(u)
    peak = (y + v * g) / (1.0 + v)
    return (
        log_prior_norm
        - 0.5 * (LOG_2PI + u)
        - 0.5 * u
        - (a + 1.0) * u
        + u
        - (y - peak) ** 2 / (2.0 * s2)
        - (2.0 * b + v * (g - peak) ** 2) / (2.0 * s2)
    )
