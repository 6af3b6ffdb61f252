"""Plug-in standard errors, pointwise confidence intervals and z-tests.

Variances come from the first-order expansions of the iterated estimators
with population moments replaced by propensity-weighted sample moments:

    var(Gamma_ij) = s2 [L_i' M_L^-1 L_i / n + F_j' S_F^-1 F_j / (m pi_i)] + zeta_ij^2 / n
    var(Theta_ij) = s2 [(L_i' M_L^-1 L_i + X_i' M_X^-1 X_i) / n + F_j' S_F^-1 F_j / (m pi_i)]

with ``M_L = n^-1 sum pi_i L_i L_i'``, ``M_X = n^-1 sum pi_i X_i X_i'``,
``S_F = F'F / m`` and ``zeta_ij^2 = X_i' M_X^-1 Z_j M_X^-1 X_i`` where
``Z_j = n^-1 sum_k pi_k^2 Gamma_kj^2 X_k X_k'``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from .data import Covariates, MaskedMatrix, ModelState
from .errors import DegenerateMoments
from .linalg import COND_MAX
from .propensity import PropensityFit


@dataclass(frozen=True, eq=False)
class PluginMoments:
    sigma2: float
    M_L: np.ndarray
    M_X: np.ndarray
    Sigma_F: np.ndarray
    Z: np.ndarray  # (m, d, d)
    X: np.ndarray
    L: np.ndarray
    F: np.ndarray
    pi_hat: np.ndarray
    M_L_inv: np.ndarray
    M_X_inv: np.ndarray
    Sigma_F_inv: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.F.shape[0]


def residuals(state: ModelState, Y: MaskedMatrix, X: Covariates) -> np.ndarray:
    """``eps_hat`` on observed cells, zero elsewhere."""
    return Y.fmask * (Y.values - state.theta(X))


def _checked_inv(A, name):
    if A.size and np.linalg.cond(A) > COND_MAX:
        raise DegenerateMoments(f"{name} is singular (cond={np.linalg.cond(A):.3g})")
    return np.linalg.inv(A) if A.size else A


def plugin_moments(state: ModelState, Y: MaskedMatrix, X: Covariates, prop: PropensityFit) -> PluginMoments:
    n, m = Y.shape
    pi = prop.pi_hat
    E = residuals(state, Y, X)
    nobs = Y.total_observed
    if nobs == 0:
        raise DegenerateMoments("no observed cells")
    sigma2 = float(np.sum(E * E) / nobs)
    if not sigma2 > 0:
        raise DegenerateMoments("residual variance is zero")
    L, F, Xa = state.L, state.F, X.X
    M_L = (L * pi[:, None]).T @ L / n
    M_X = (Xa * pi[:, None]).T @ Xa / n
    S_F = F.T @ F / m
    d = Xa.shape[1]
    G2 = (pi[:, None] ** 2) * state.gamma**2
    XX = (Xa[:, :, None] * Xa[:, None, :]).reshape(n, d * d)
    Z = (G2.T @ XX / n).reshape(m, d, d)
    return PluginMoments(
        sigma2, M_L, M_X, S_F, Z, Xa, L, F, pi,
        _checked_inv(M_L, "M_L"), _checked_inv(M_X, "M_X"), _checked_inv(S_F, "Sigma_F"),
    )


def _quad(v, Ainv):
    return float(v @ Ainv @ v)


def zeta2(i: int, j: int, mom: PluginMoments) -> float:
    a = mom.M_X_inv @ mom.X[i]
    return float(a @ mom.Z[j] @ a)


def _common(i, j, mom):
    n, m = mom.n, mom.m
    lterm = _quad(mom.L[i], mom.M_L_inv) / n if mom.L.shape[1] else 0.0
    fterm = _quad(mom.F[j], mom.Sigma_F_inv) / (m * mom.pi_hat[i]) if mom.F.shape[1] else 0.0
    return lterm, fterm


def var_gamma(i: int, j: int, mom: PluginMoments) -> float:
    lterm, fterm = _common(i, j, mom)
    return mom.sigma2 * (lterm + fterm) + zeta2(i, j, mom) / mom.n


def var_theta(i: int, j: int, mom: PluginMoments) -> float:
    lterm, fterm = _common(i, j, mom)
    xterm = _quad(mom.X[i], mom.M_X_inv) / mom.n
    return mom.sigma2 * (lterm + xterm + fterm)


def _positive_sqrt(v, what):
    if not v > 0:
        raise DegenerateMoments(f"{what} variance is not positive ({v})")
    return float(np.sqrt(v))


def se_gamma(i: int, j: int, state: ModelState, mom: PluginMoments, prop: PropensityFit | None = None) -> float:
    """Standard error of ``Gamma_tilde[i, j]``.

    ``state`` and ``prop`` are accepted for interface symmetry; ``mom``
    already carries the fitted factors and propensities.
    """
    return _positive_sqrt(var_gamma(i, j, mom), "Gamma")


def se_theta(i: int, j: int, state: ModelState, mom: PluginMoments, prop: PropensityFit | None = None) -> float:
    return _positive_sqrt(var_theta(i, j, mom), "Theta")


def se_gamma_matrix(mom: PluginMoments) -> np.ndarray:
    """All ``n x m`` Gamma standard errors at once."""
    n, m = mom.n, mom.m
    lq = np.einsum("ik,kl,il->i", mom.L, mom.M_L_inv, mom.L) / n if mom.L.shape[1] else np.zeros(n)
    fq = np.einsum("jk,kl,jl->j", mom.F, mom.Sigma_F_inv, mom.F) if mom.F.shape[1] else np.zeros(m)
    A = mom.X @ mom.M_X_inv
    z2 = np.einsum("ia,jab,ib->ij", A, mom.Z, A)
    v = mom.sigma2 * (lq[:, None] + fq[None, :] / (m * mom.pi_hat[:, None])) + z2 / n
    return np.sqrt(v)


def beta_cov(j: int, state: ModelState, Y: MaskedMatrix, X: Covariates, prop: PropensityFit, mom: PluginMoments | None = None) -> np.ndarray:
    """Sandwich covariance of ``beta_tilde_j``:
    ``n^-1 M_X^-1 [n^-1 sum_i X_i X_i' (xi_ij eps_ij^2 + pi_i^2 Gamma_ij^2)] M_X^-1``.
    """
    n = Y.n
    pi = prop.pi_hat
    if mom is None:
        M_X = (X.X * pi[:, None]).T @ X.X / n
        M_X_inv = _checked_inv(M_X, "M_X")
    else:
        M_X_inv = mom.M_X_inv
    gam = state.L @ state.F[j]
    e = Y.fmask[:, j] * (Y.values[:, j] - X.X @ state.beta[j] - gam)
    w = Y.fmask[:, j] * e**2 + pi**2 * gam**2
    meat = (X.X * w[:, None]).T @ X.X / n
    return M_X_inv @ meat @ M_X_inv / n


@dataclass(frozen=True)
class InferenceReport:
    target: str
    index: tuple
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    z: float
    p_value: float
    level: float
    null_value: float = 0.0

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "index": list(self.index),
            "estimate": self.estimate,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "z": self.z,
            "p_value": self.p_value,
            "level": self.level,
            "null_value": self.null_value,
        }


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


def two_sided_p(z: float) -> float:
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def make_report(target, index, estimate, se, level=0.95, null_value=0.0) -> InferenceReport:
    if not se > 0:
        raise DegenerateMoments(f"non-positive standard error for {target}{index}")
    q = normal_quantile(0.5 + level / 2.0)
    z = (estimate - null_value) / se
    return InferenceReport(
        target, tuple(int(v) for v in index), float(estimate), float(se),
        float(estimate - q * se), float(estimate + q * se), float(z), two_sided_p(z), float(level), float(null_value),
    )


def infer_gamma(i, j, state, mom, level=0.95, null_value=0.0) -> InferenceReport:
    est = float(state.L[i] @ state.F[j]) if state.r else 0.0
    return make_report("gamma", (i, j), est, se_gamma(i, j, state, mom), level, null_value)


def infer_theta(i, j, state, mom, level=0.95, null_value=0.0) -> InferenceReport:
    est = float(mom.X[i] @ state.beta[j] + (state.L[i] @ state.F[j] if state.r else 0.0))
    return make_report("theta", (i, j), est, se_theta(i, j, state, mom), level, null_value)


def z_test_beta(
    j: int,
    p: int,
    state: ModelState,
    Y: MaskedMatrix,
    X: Covariates,
    prop: PropensityFit,
    null_value: float = 0.0,
    level: float = 0.95,
    mom: PluginMoments | None = None,
) -> InferenceReport:
    V = beta_cov(j, state, Y, X, prop, mom)
    se = _positive_sqrt(V[p, p], "beta")
    return make_report("beta", (j, p), float(state.beta[j, p]), se, level, null_value)
