"""Closed-form conditional posteriors and conditional Bayes factors.

All quadratic forms go through QR or Cholesky factorizations; explicit
matrix inversion is avoided throughout (conditioning of the design Gram
matrices under near-collinear pools).  Projection quadratic forms are
computed as norms of factor products, never as n x n projectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .data import DataError


class DesignQR(NamedTuple):
    """Reduced QR factorization of an n x d design matrix."""

    Q: np.ndarray
    R: np.ndarray

    @property
    def d(self) -> int:
        return self.R.shape[0]


def qr_design(U: np.ndarray) -> DesignQR:
    """Factor a design matrix, raising on (numerical) rank deficiency."""
    Q, R = np.linalg.qr(U)
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise DataError("rank-deficient design matrix")
    return DesignQR(Q, R)


def projection_quadratic(qr: DesignQR, v: np.ndarray) -> float:
    """v' P_U v computed as the squared norm of Q'v."""
    s = qr.Q.T @ v
    return float(s @ s)


@dataclass(frozen=True)
class SigmaPartition:
    """Partition of the (l+1) x (l+1) structural covariance matrix.

    ``sigma_y_given_x`` is the Schur complement sigma_yy - S_yx S_xx^-1 S_yx'
    and ``a_yx = S_yx S_xx^-1`` is the scaled residual covariance; both are
    obtained through triangular solves against the Cholesky factor of S_xx.
    """

    sigma_yy: float
    Sigma_yx: np.ndarray
    Sigma_xx: np.ndarray
    sigma_y_given_x: float
    a_yx: np.ndarray


def partition_sigma(Sigma: np.ndarray) -> SigmaPartition:
    Sigma = np.asarray(Sigma, dtype=float)
    if not np.allclose(Sigma, Sigma.T, atol=1e-8):
        raise ValueError("Sigma must be symmetric")
    try:
        Lxx = np.linalg.cholesky(Sigma[1:, 1:])
    except np.linalg.LinAlgError:
        raise ValueError("Sigma_xx block must be positive definite") from None
    sigma_yy = float(Sigma[0, 0])
    Sigma_yx = Sigma[0, 1:].copy()
    t = solve_triangular(Lxx, Sigma_yx, lower=True)
    sigma_ygx = sigma_yy - float(t @ t)
    if sigma_ygx <= 0:
        raise ValueError("Sigma must be positive definite (Schur complement <= 0)")
    a_yx = solve_triangular(Lxx.T, t, lower=False)
    return SigmaPartition(sigma_yy, Sigma_yx, Sigma[1:, 1:].copy(), sigma_ygx, a_yx)


def assemble_sigma(a_yx: np.ndarray, sigma_y_given_x: float, Sigma_xx: np.ndarray) -> np.ndarray:
    """Rebuild Sigma from its Cholesky-style components."""
    a_yx = np.atleast_1d(np.asarray(a_yx, dtype=float))
    Sigma_xx = np.atleast_2d(Sigma_xx)
    l = a_yx.size
    Sigma = np.empty((l + 1, l + 1))
    Sigma_yx = a_yx @ Sigma_xx
    Sigma[0, 0] = sigma_y_given_x + float(Sigma_yx @ a_yx)
    Sigma[0, 1:] = Sigma_yx
    Sigma[1:, 0] = Sigma_yx
    Sigma[1:, 1:] = Sigma_xx
    return Sigma


@dataclass(frozen=True)
class GaussianPosterior:
    """Multivariate normal with mean and lower-triangular covariance factor."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def rvs(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.cov_factor @ rng.standard_normal(self.mean.size)

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T


@dataclass(frozen=True)
class MatrixNormalPosterior:
    """Matrix normal with row-covariance factor and column covariance."""

    mean: np.ndarray
    row_cov_factor: np.ndarray
    col_cov: np.ndarray

    def rvs(self, rng: np.random.Generator) -> np.ndarray:
        Z = rng.standard_normal(self.mean.shape)
        Lc = np.linalg.cholesky(self.col_cov)
        return self.mean + self.row_cov_factor @ Z @ Lc.T


# ---------------------------------------------------------------------------
# Outcome equation
# ---------------------------------------------------------------------------

def corrected_outcome(
    q: np.ndarray,
    Q: np.ndarray,
    V: np.ndarray,
    Lam: np.ndarray,
    part: SigmaPartition,
) -> np.ndarray:
    """Endogeneity-corrected outcome: q - (Q - V Lam) a_yx'.

    The treatment residual acts as a control for the unobserved confounding;
    with a_yx = 0 the correction vanishes and the corrected outcome equals q.
    """
    H = Q - V @ Lam
    return q - H @ part.a_yx


def log_marginal_outcome(
    y_tilde: np.ndarray,
    qr: DesignQR,
    g: float,
    sigma_y_given_x: float,
) -> float:
    """Model- and g-dependent part of the conditional outcome log evidence.

    Equals -(d/2) log(1+g) + g/(1+g) * (y~' P_U y~) / (2 sigma_y|x); terms
    common to all models at fixed y~ are dropped, so differences of this
    quantity are exact log conditional Bayes factors.
    """
    s = projection_quadratic(qr, y_tilde)
    shrink = g / (g + 1.0)
    return -0.5 * qr.d * math.log1p(g) + 0.5 * shrink * s / sigma_y_given_x


def outcome_posterior(
    y_tilde: np.ndarray,
    U: np.ndarray,
    g: float,
    sigma_y_given_x: float,
    qr: DesignQR | None = None,
) -> GaussianPosterior:
    """Conditional posterior of the outcome coefficients under the g-prior.

    Mean  g/(1+g) (U'U)^-1 U' y~ and covariance sigma_y|x g/(1+g) (U'U)^-1,
    evaluated through the QR factorization of the design.
    """
    qr = qr or qr_design(U)
    shrink = g / (g + 1.0)
    mean = shrink * solve_triangular(qr.R, qr.Q.T @ y_tilde, lower=False)
    Rinv = solve_triangular(qr.R, np.eye(qr.d), lower=False)
    cov = sigma_y_given_x * shrink * (Rinv @ Rinv.T)
    return GaussianPosterior(mean, np.linalg.cholesky(cov))


def log_cbf_outcome(
    y_tilde: np.ndarray,
    U_i: np.ndarray,
    U_j: np.ndarray,
    g: float,
    sigma_y_given_x: float,
    qr_i: DesignQR | None = None,
    qr_j: DesignQR | None = None,
) -> float:
    """Log conditional Bayes factor of outcome model i versus model j.

    (d_j - d_i)/2 log(1+g) - g/(1+g)/(2 sigma_y|x) y~'(P_j - P_i)y~, with the
    projection difference computed as a difference of squared factor norms.
    """
    qr_i = qr_i or qr_design(U_i)
    qr_j = qr_j or qr_design(U_j)
    return log_marginal_outcome(y_tilde, qr_i, g, sigma_y_given_x) - log_marginal_outcome(
        y_tilde, qr_j, g, sigma_y_given_x
    )


# ---------------------------------------------------------------------------
# Treatment equation
# ---------------------------------------------------------------------------

def corrected_treatment(
    XQ: np.ndarray,
    eps: np.ndarray,
    part: SigmaPartition,
    g: float,
):
    """Endogeneity-corrected treatments and the induced scale matrices.

    Returns ``(X_tilde, B_Sigma, A_Sigma)`` with
    B = I + S_yx' S_yx S_xx^-1 / sigma_y|x,
    X~ = X - eps S_yx (B^-1)' / sigma_y|x,
    A = ((I + B^-1/g)^-1)' S_xx^-1 B  (symmetrized; positive definite).
    """
    l = XQ.shape[1]
    syx = np.atleast_1d(part.Sigma_yx)
    N = np.outer(syx, syx)
    B = np.eye(l) + np.linalg.solve(part.Sigma_xx, N).T / part.sigma_y_given_x
    corr = np.outer(eps, syx)
    X_tilde = XQ - np.linalg.solve(B, corr.T).T / part.sigma_y_given_x
    K = np.linalg.solve(B + np.eye(l) / g, B)
    A = K.T @ np.linalg.solve(part.Sigma_xx, B)
    A = 0.5 * (A + A.T)
    return X_tilde, B, A


def log_marginal_treatment(
    X_tilde: np.ndarray,
    qr: DesignQR,
    B_Sigma: np.ndarray,
    A_Sigma: np.ndarray,
    g: float,
) -> float:
    """Model- and g-dependent part of the joint treatment log evidence.

    Equals -(d_V/2) log|g B + I| + tr(A X~' P_V X~)/2; differences across
    models (or g values at fixed model) are exact log conditional quantities.
    """
    l = B_Sigma.shape[0]
    S = qr.Q.T @ X_tilde
    sign, logdet = np.linalg.slogdet(g * B_Sigma + np.eye(l))
    if sign <= 0:
        raise ValueError("g B + I must have positive determinant")
    return -0.5 * qr.d * logdet + 0.5 * float(np.sum(A_Sigma * (S.T @ S)))


def treatment_posterior(
    X_tilde: np.ndarray,
    V: np.ndarray,
    B_Sigma: np.ndarray,
    Sigma_xx: np.ndarray,
    g: float,
    qr: DesignQR | None = None,
) -> MatrixNormalPosterior:
    """Matrix-normal conditional posterior of the treatment coefficients.

    Mean (V'V)^-1 V' X~ K' with K = (I + B^-1/g)^-1, row covariance
    (V'V)^-1, column covariance (B + I/g)^-1 S_xx.
    """
    qr = qr or qr_design(V)
    l = B_Sigma.shape[0]
    K = np.linalg.solve(B_Sigma + np.eye(l) / g, B_Sigma)
    mean = solve_triangular(qr.R, qr.Q.T @ X_tilde, lower=False) @ K.T
    Rinv = solve_triangular(qr.R, np.eye(qr.d), lower=False)
    row_factor = np.linalg.cholesky(Rinv @ Rinv.T)
    col_cov = np.linalg.solve(B_Sigma + np.eye(l) / g, Sigma_xx)
    col_cov = 0.5 * (col_cov + col_cov.T)
    return MatrixNormalPosterior(mean, row_factor, col_cov)


def log_cbf_treatment(
    X_tilde: np.ndarray,
    V_i: np.ndarray,
    V_j: np.ndarray,
    B_Sigma: np.ndarray,
    A_Sigma: np.ndarray,
    g: float,
    qr_i: DesignQR | None = None,
    qr_j: DesignQR | None = None,
) -> float:
    """Log conditional Bayes factor of treatment model i versus model j."""
    qr_i = qr_i or qr_design(V_i)
    qr_j = qr_j or qr_design(V_j)
    lm_i = log_marginal_treatment(X_tilde, qr_i, B_Sigma, A_Sigma, g)
    lm_j = log_marginal_treatment(X_tilde, qr_j, B_Sigma, A_Sigma, g)
    return lm_i - lm_j


# ---------------------------------------------------------------------------
# Covariance matrix
# ---------------------------------------------------------------------------

def covariance_posterior_iw(eps: np.ndarray, H: np.ndarray, nu: float):
    """Inverse-Wishart conditional for Sigma: df nu+n, scale I + [eps:H]'[eps:H]."""
    H = np.atleast_2d(H)
    if H.shape[0] == 1 and eps.size > 1:
        H = H.T
    l = H.shape[1]
    if not nu > l:
        raise ValueError("nu must exceed the number of treatments")
    E = np.column_stack([eps, H])
    scale = np.eye(l + 1) + E.T @ E
    return float(nu + eps.size), 0.5 * (scale + scale.T)


def cholesky_ayx_posterior(
    eps: np.ndarray,
    H: np.ndarray,
    sigma_y_given_x: float,
    omega_a: float,
) -> GaussianPosterior:
    """Gaussian conditional for the scaled residual covariance a_yx.

    Ridge-style update: mean (H'H + (sigma/omega) I)^-1 H' eps, covariance
    sigma (H'H + (sigma/omega) I)^-1.  With H = 0 it collapses to the prior.
    """
    H = np.atleast_2d(H)
    if H.shape[0] == 1 and eps.size > 1:
        H = H.T
    l = H.shape[1]
    G = H.T @ H + (sigma_y_given_x / omega_a) * np.eye(l)
    Lg = np.linalg.cholesky(G)
    mean = solve_triangular(
        Lg.T, solve_triangular(Lg, H.T @ eps, lower=True), lower=False
    )
    Linv = solve_triangular(Lg, np.eye(l), lower=True)
    cov = sigma_y_given_x * (Linv.T @ Linv)
    return GaussianPosterior(mean, np.linalg.cholesky(cov))


def cholesky_sigma_ygx_posterior(eps: np.ndarray, H: np.ndarray, a_yx: np.ndarray, nu: float):
    """Inverse-gamma conditional (shape, scale) for sigma_y|x given a_yx."""
    H = np.atleast_2d(H)
    if H.shape[0] == 1 and eps.size > 1:
        H = H.T
    resid = eps - H @ np.atleast_1d(a_yx)
    return 0.5 * (eps.size + nu), 0.5 * (float(resid @ resid) + 1.0)


def cholesky_sigma_xx_posterior(H: np.ndarray, nu: float):
    """Inverse-Wishart conditional (df, scale) for the treatment covariance."""
    H = np.atleast_2d(H)
    n = H.shape[0]
    l = H.shape[1]
    scale = H.T @ H + np.eye(l)
    return float(n + nu - 1.0), 0.5 * (scale + scale.T)


def covariance_posterior_cholesky(
    eps: np.ndarray,
    H: np.ndarray,
    nu: float,
    omega_a: float,
    sigma_y_given_x: float,
    a_yx: np.ndarray,
):
    """The three covariance-component conditionals, in Gibbs update order:
    a_yx given sigma_y|x, then sigma_y|x given a_yx, then Sigma_xx."""
    return (
        cholesky_ayx_posterior(eps, H, sigma_y_given_x, omega_a),
        cholesky_sigma_ygx_posterior(eps, H, a_yx, nu),
        cholesky_sigma_xx_posterior(H, nu),
    )


# ---------------------------------------------------------------------------
# Two-component treatment prior (single treatment, fixed instruments)
# ---------------------------------------------------------------------------

def _two_component_precision(qr: DesignQR, G_diag: np.ndarray, b_sigma: float) -> np.ndarray:
    # b V'V + G^-1 V'V G^-1 built from the R factor; d_V x d_V only.
    RG = qr.R / G_diag[None, :]
    return b_sigma * (qr.R.T @ qr.R) + RG.T @ RG


def two_component_posterior(
    x_tilde: np.ndarray,
    V: np.ndarray,
    G_diag: np.ndarray,
    b_sigma: float,
    sigma_xx: float,
    qr: DesignQR | None = None,
) -> GaussianPosterior:
    """Treatment-coefficient posterior under the split-scale prior.

    G_diag holds sqrt(g_C) entries for the intercept and covariates and
    sqrt(g_I) entries for the instruments; the posterior is
    N(b A_G V'x~, sigma_xx A_G) with A_G = (b V'V + G^-1 V'V G^-1)^-1.
    Only available with a single treatment column.
    """
    qr = qr or qr_design(V)
    if G_diag.shape != (qr.d,):
        raise ValueError("G_diag must have one entry per design column")
    W = _two_component_precision(qr, G_diag, b_sigma)
    Lw = np.linalg.cholesky(W)
    rhs = V.T @ x_tilde
    mean = b_sigma * solve_triangular(
        Lw.T, solve_triangular(Lw, rhs, lower=True), lower=False
    )
    Linv = solve_triangular(Lw, np.eye(qr.d), lower=True)
    cov = sigma_xx * (Linv.T @ Linv)
    return GaussianPosterior(mean, np.linalg.cholesky(cov))


def log_marginal_two_component(
    x_tilde: np.ndarray,
    V: np.ndarray,
    G_diag: np.ndarray,
    b_sigma: float,
    sigma_xx: float,
    qr: DesignQR | None = None,
) -> float:
    """Model-dependent part of the evidence under the split-scale prior.

    log [ |A_G| / |G (V'V)^-1 G| ]^(1/2) + b^2/(2 sigma_xx) x~'V A_G V'x~.
    """
    qr = qr or qr_design(V)
    W = _two_component_precision(qr, G_diag, b_sigma)
    Lw = np.linalg.cholesky(W)
    logdet_W = 2.0 * float(np.sum(np.log(np.diag(Lw))))
    logdet_prior = 2.0 * float(np.sum(np.log(G_diag))) - 2.0 * float(
        np.sum(np.log(np.abs(np.diag(qr.R))))
    )
    rhs = V.T @ x_tilde
    half = solve_triangular(Lw, rhs, lower=True)
    quad = float(half @ half)
    return 0.5 * (-logdet_W - logdet_prior) + 0.5 * b_sigma**2 * quad / sigma_xx


def log_cbf_two_component(
    x_tilde: np.ndarray,
    V_i: np.ndarray,
    V_j: np.ndarray,
    G_i: np.ndarray,
    G_j: np.ndarray,
    b_sigma: float,
    sigma_xx: float,
) -> float:
    """Log conditional Bayes factor between treatment models, split-scale prior."""
    return log_marginal_two_component(
        x_tilde, V_i, G_i, b_sigma, sigma_xx
    ) - log_marginal_two_component(x_tilde, V_j, G_j, b_sigma, sigma_xx)
