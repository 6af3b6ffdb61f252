"""Logistic observation model ``P(xi_ij = 1 | X_i) = expit(gamma0 + Xtilde_i' gamma1)``.

Because the covariates vary only by row, the Bernoulli likelihood over all
cells collapses to a binomial likelihood with ``m`` trials per subject, so
each Newton step costs O(n d^2).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Covariates, MaskedMatrix
from .errors import NonConvergence, SeparationError

GRAD_TOL = 1e-10
MAX_ITER = 100
HESS_COND_MAX = 1e12
# fitted probabilities this close to 0 or 1 mean the MLE sits on the boundary
PI_EPS = 1e-8


class AlphaMode(str, enum.Enum):
    CONSTANT = "constant"
    COVARIATE = "covariate"


@dataclass(frozen=True, eq=False)
class PropensityFit:
    gamma0: float
    gamma1: np.ndarray
    pi_hat: np.ndarray
    alpha_hat: float
    iterations: int = 0
    grad_norm: float = 0.0
    loglik: float = float("nan")

    @property
    def pi_bar(self) -> float:
        return float(np.mean(self.pi_hat))

    @classmethod
    def full_observation(cls, n: int, d_tilde: int = 0) -> "PropensityFit":
        """Degenerate fit for a fully observed matrix (pi_hat = 1).

        The logistic MLE sits on the boundary there, so no fitting is done.
        """
        return cls(float("inf"), np.zeros(d_tilde), np.ones(n), 1.0)

    @classmethod
    def known(cls, pi) -> "PropensityFit":
        """Wrap known observation probabilities (used by oracle checks)."""
        pi = np.asarray(pi, dtype=float)
        return cls(float("nan"), np.zeros(0), pi, float(np.mean(pi)))

    def to_dict(self) -> dict:
        return {
            "gamma0": float(self.gamma0),
            "gamma1": [float(v) for v in self.gamma1],
            "pi_hat": [float(v) for v in self.pi_hat],
            "alpha_hat": float(self.alpha_hat),
            "iterations": int(self.iterations),
            "grad_norm": float(self.grad_norm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PropensityFit":
        return cls(
            float(d["gamma0"]),
            np.asarray(d["gamma1"], dtype=float),
            np.asarray(d["pi_hat"], dtype=float),
            float(d["alpha_hat"]),
            int(d.get("iterations", 0)),
            float(d.get("grad_norm", 0.0)),
        )


def _design(X: Covariates) -> np.ndarray:
    return np.column_stack([np.ones(X.n), X.xtilde])


def binomial_loglik(coef, Z, counts, m) -> float:
    eta = Z @ coef
    return float(np.sum(counts * eta - m * np.logaddexp(0.0, eta)))


def score(coef, Z, counts, m) -> np.ndarray:
    return Z.T @ (counts - m * expit(Z @ coef))


def fit_propensity(mask, X: Covariates, tol: float = GRAD_TOL, max_iter: int = MAX_ITER) -> PropensityFit:
    """Maximum likelihood fit of the logistic observation model.

    Newton-Raphson with step halving. Convergence is declared when the max
    norm of the score divided by the number of cells ``n*m`` drops below
    ``tol``.
    """
    mask = mask.mask if isinstance(mask, MaskedMatrix) else np.asarray(mask)
    n, m = mask.shape
    counts = mask.sum(axis=1).astype(float)
    if np.all(counts == 0) or np.all(counts == m):
        raise SeparationError("observed counts are all 0 or all m; the logistic MLE does not exist")
    Z = _design(X)
    # start from the intercept-only MLE
    coef = np.zeros(Z.shape[1])
    p0 = counts.sum() / (n * m)
    coef[0] = np.log(p0 / (1.0 - p0))
    ll = binomial_loglik(coef, Z, counts, m)
    scale = float(n * m)
    for it in range(1, max_iter + 1):
        p = expit(Z @ coef)
        g = Z.T @ (counts - m * p)
        H = (Z * (m * p * (1.0 - p))[:, None]).T @ Z
        if np.max(np.abs(g)) / scale <= tol:
            coef, g = _polish(coef, H, g, Z, counts, m, ll)
            return _finish(coef, Z, counts, m, it - 1, g, scale)
        if np.linalg.cond(H) > HESS_COND_MAX:
            raise SeparationError(f"Hessian numerically singular at iteration {it}")
        step = np.linalg.solve(H, g)
        if 0.5 * float(g @ step) <= 1e-12 * max(1.0, abs(ll)):
            # predicted gain is below the rounding level of the likelihood,
            # so a line search would only react to noise: take the full step
            coef = coef + step
            ll = binomial_loglik(coef, Z, counts, m)
            continue
        t = 1.0
        for _ in range(60):
            cand = coef + t * step
            ll_new = binomial_loglik(cand, Z, counts, m)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            # no ascent possible: at the optimum up to rounding
            return _finish(coef, Z, counts, m, it, g, scale)
        coef, ll = cand, ll_new
    g = score(coef, Z, counts, m)
    if np.max(np.abs(g)) / scale <= tol:
        return _finish(coef, Z, counts, m, max_iter, g, scale)
    raise NonConvergence(f"logistic fit did not converge in {max_iter} iterations")


def _polish(coef, H, g, Z, counts, m, ll):
    """One extra Newton step once converged, kept only if it does not lower the likelihood.

    Quadratic convergence takes the raw score to rounding level.
    """
    try:
        cand = coef + np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return coef, g
    if binomial_loglik(cand, Z, counts, m) >= ll:
        g_new = score(cand, Z, counts, m)
        if np.max(np.abs(g_new)) <= np.max(np.abs(g)):
            return cand, g_new
    return coef, g


def _finish(coef, Z, counts, m, iterations, g, scale) -> PropensityFit:
    pi = expit(Z @ coef)
    if np.any(pi <= PI_EPS) or np.any(pi >= 1.0 - PI_EPS):
        raise SeparationError("fitted probabilities reach 0 or 1: the covariates separate observed from unobserved rows")
    return PropensityFit(
        gamma0=float(coef[0]),
        gamma1=coef[1:].copy(),
        pi_hat=pi,
        alpha_hat=float(np.mean(pi)),
        iterations=iterations,
        grad_norm=float(np.max(np.abs(g)) / scale),
        loglik=binomial_loglik(coef, Z, counts, m),
    )


def estimate_propensity(mask, X: Covariates) -> PropensityFit:
    """``fit_propensity`` that also accepts a fully observed mask."""
    mask = mask.mask if isinstance(mask, MaskedMatrix) else np.asarray(mask)
    if np.all(mask == 1):
        return PropensityFit.full_observation(mask.shape[0], X.xtilde.shape[1])
    return fit_propensity(mask, X)


def estimate_alpha(fit: PropensityFit, mode: AlphaMode | str) -> float:
    mode = AlphaMode(mode)
    if mode is AlphaMode.CONSTANT:
        return float(np.mean(fit.pi_hat))
    if not np.isfinite(fit.gamma0):
        return 1.0
    return float(np.exp(fit.gamma0))


def default_alpha_mode(fit: PropensityFit) -> AlphaMode:
    return AlphaMode.COVARIATE if len(fit.gamma1) > 0 and np.isfinite(fit.gamma0) else AlphaMode.CONSTANT
