"""Prior densities and hyperparameter configuration.

Covers the benchmark (fixed) and hyper-g/n priors on the g scales, the full
inverse-Wishart and Cholesky-decomposed covariance priors, the shifted
exponential hyperprior on the Wishart degrees of freedom, the Beta-binomial
model-space prior, and the implied prior on the number of valid and relevant
instruments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

BRIC = "bric"
HYPER_G_OVER_N = "hyper-g-over-n"
INVERSE_WISHART = "inverse-wishart"
CHOLESKY = "cholesky"

# Hard cap on nu above its lower support bound during sampling; the shifted
# exponential prior leaves < e^-500 mass beyond it, but inverse-Wishart draws
# with enormous degrees of freedom become numerically degenerate.
NU_MAX_OFFSET = 500.0


class ConfigError(ValueError):
    """Raised for invalid prior or sampler configuration."""


@dataclass(frozen=True)
class GPriorSpec:
    """Choice of g-prior for one equation.

    ``bric`` fixes g at max(n, d^2) with d the full-design column count for
    the equation; ``hyper-g-over-n`` places the proper density
    ``(a-2)/(2n) (1+g/n)^(-a/2)`` on g and samples it.  ``two_component_c``
    activates the split intercept+covariate / instrument scaling
    (g_I = c * g_C) for the treatment equation; only legal with a single
    treatment and fixed instruments present.
    """

    kind: str = HYPER_G_OVER_N
    a: float = 3.0
    two_component_c: float | None = None

    def __post_init__(self):
        if self.kind not in (BRIC, HYPER_G_OVER_N):
            raise ConfigError(f"unknown g-prior kind {self.kind!r}")
        if self.kind == HYPER_G_OVER_N and not self.a > 2:
            raise ConfigError("hyper-g/n shape must satisfy a > 2")
        if self.two_component_c is not None and not 0 < self.two_component_c < 1:
            raise ConfigError("two-component ratio c must lie in (0, 1)")

    @property
    def random_g(self) -> bool:
        return self.kind == HYPER_G_OVER_N


@dataclass(frozen=True)
class CovPriorSpec:
    """Covariance prior: full inverse Wishart or Cholesky-decomposed.

    Under ``cholesky`` the three blocks get independent priors: the scaled
    residual covariance a_yx ~ N(0, omega_a I), the conditional outcome
    variance sigma_y|x ~ IG(nu/2, 1/2), and the treatment covariance
    Sigma_xx ~ IW(nu-1, I_l); the component hyperparameters track nu.
    ``nu=None`` puts a unit-scale exponential prior on nu shifted by l+1;
    a float fixes it.
    """

    kind: str = INVERSE_WISHART
    omega_a: float = 1.0
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in (INVERSE_WISHART, CHOLESKY):
            raise ConfigError(f"unknown covariance prior kind {self.kind!r}")
        if not self.omega_a > 0:
            raise ConfigError("omega_a must be positive")

    @property
    def random_nu(self) -> bool:
        return self.nu is None

    def fixed_nu(self, l: int) -> float:
        if self.nu is None:
            raise ConfigError("nu is random under this spec")
        if not self.nu > l:
            raise ConfigError(f"nu must exceed l={l}")
        return float(self.nu)


@dataclass(frozen=True)
class ModelPriorSpec:
    """Beta-binomial model prior, parameterized by prior mean model sizes.

    ``None`` entries default to half the number of eligible columns for the
    equation (pool size minus fixed instruments for the outcome equation).
    """

    m_L: float | None = None
    m_M: float | None = None

    def mean_size(self, equation: str, p: int, n_fixed: int = 0) -> float:
        eligible = p - n_fixed if equation == "outcome" else p
        m = self.m_L if equation == "outcome" else self.m_M
        if m is None:
            m = eligible / 2
        if eligible > 0 and not 0 < m < eligible:
            raise ConfigError(
                f"prior mean model size {m} must lie in (0, {eligible}) "
                f"for the {equation} equation"
            )
        return float(m)


def bric_g(n: int, p: int, l: int, equation: str) -> float:
    """Benchmark fixed g: max(n, (p+l+1)^2) outcome, max(n, (p+1)^2) treatment."""
    if n < 1 or p < 0 or l < 1:
        raise ConfigError("need n >= 1, p >= 0, l >= 1")
    d = p + l + 1 if equation == "outcome" else p + 1
    return float(max(n, d * d))


def hyper_gn_logpdf(g, n: int, a: float):
    """Log density (a-2)/(2n) * (1 + g/n)^(-a/2) on g >= 0."""
    if not a > 2:
        raise ConfigError("hyper-g/n shape must satisfy a > 2")
    g = np.asarray(g, dtype=float)
    out = np.where(
        g >= 0,
        math.log(a - 2) - math.log(2 * n) - 0.5 * a * np.log1p(g / n),
        -np.inf,
    )
    return out if out.ndim else float(out)


def model_log_prior(k: int, p: int, m: float) -> float:
    """Log Beta-binomial prior probability of one specific model of size k.

    Uses shape a=1 and b=(p-m)/m so the prior mean model size equals m; this
    is the per-model probability, not the probability of the size class.
    """
    if not 0 <= k <= p:
        raise ConfigError("model size k must lie in [0, p]")
    a = 1.0
    b = (p - m) / m
    return float(
        gammaln(a + b)
        - gammaln(a)
        - gammaln(b)
        + gammaln(a + k)
        + gammaln(b + p - k)
        - gammaln(a + b + p)
    )


def model_size_log_prior(k: int, p: int, m: float) -> float:
    """Log prior probability that the model size equals k (all models of size k)."""
    return model_log_prior(k, p, m) + float(
        gammaln(p + 1) - gammaln(k + 1) - gammaln(p - k + 1)
    )


def nz_prior_pmf(p: int, m_L: float, m_M: float) -> np.ndarray:
    """Implied prior pmf of the number of valid and relevant instruments.

    N_Z counts pool columns included in the treatment model but not in the
    outcome model.  Evaluated by summing p(L) p(M) over all index-count
    configurations (size of L, overlap with M, instrument count) in
    log space; exact for exchangeable Beta-binomial model priors.
    """
    if not 1 <= p <= 20:
        raise ConfigError("nz_prior_pmf supports 1 <= p <= 20")
    log_wL = np.array([model_log_prior(k, p, m_L) for k in range(p + 1)])
    log_wM = np.array([model_log_prior(k, p, m_M) for k in range(p + 1)])
    lgamma = gammaln(np.arange(p + 2, dtype=float) + 1.0)

    def log_binom(a: int, b: int) -> float:
        return float(lgamma[a] - lgamma[b] - lgamma[a - b])

    pmf = np.full(p + 1, -np.inf)
    for t in range(p + 1):
        terms = []
        for pi in range(p - t + 1):
            for k in range(pi + 1):
                m_size = pi - k + t
                terms.append(
                    log_binom(p, pi)
                    + log_binom(pi, k)
                    + log_binom(p - pi, t)
                    + log_wL[pi]
                    + log_wM[m_size]
                )
        pmf[t] = logsumexp(terms)
    out = np.exp(pmf)
    return out / out.sum()


def nu_log_prior(nu: float, l: int) -> float:
    """Unit-scale exponential log density on nu, shifted by l+1.

    Returns -inf outside [l+1, l+1+NU_MAX_OFFSET]; the upper truncation is a
    numerical guard carrying negligible probability mass.
    """
    shift = l + 1
    if nu < shift or nu > shift + NU_MAX_OFFSET:
        return -np.inf
    return -(nu - shift)


def _check_pds(S: np.ndarray, name: str) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(S, S.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return S


def sigma_log_prior_iw(Sigma: np.ndarray, nu: float) -> float:
    """Log inverse-Wishart density IW(nu, I) at Sigma."""
    Sigma = _check_pds(Sigma, "Sigma")
    k = Sigma.shape[0]
    if not nu > k - 1:
        return -np.inf
    return float(stats.invwishart.logpdf(Sigma, df=nu, scale=np.eye(k)))


def sigma_log_prior_cholesky(
    a_yx: np.ndarray,
    sigma_y_given_x: float,
    Sigma_xx: np.ndarray,
    nu: float,
    omega_a: float,
) -> float:
    """Sum of the three component log priors in the Cholesky parameterization."""
    a_yx = np.atleast_1d(np.asarray(a_yx, dtype=float))
    l = a_yx.size
    Sigma_xx = _check_pds(np.atleast_2d(Sigma_xx), "Sigma_xx")
    if sigma_y_given_x <= 0:
        return -np.inf
    xi = nu - 1.0
    if not xi > l - 1:
        return -np.inf
    log_a = float(np.sum(stats.norm.logpdf(a_yx, scale=math.sqrt(omega_a))))
    log_s = float(stats.invgamma.logpdf(sigma_y_given_x, a=nu / 2, scale=0.5))
    log_xx = float(stats.invwishart.logpdf(Sigma_xx, df=xi, scale=np.eye(l)))
    return log_a + log_s + log_xx
