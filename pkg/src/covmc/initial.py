"""Initial estimators: per-column OLS, the IPW residual matrix and its truncated SVD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Covariates, MaskedMatrix
from .errors import RankDeficientColumn
from .linalg import COND_MAX, batched_cond, masked_grams, top_svd
from .propensity import PropensityFit


@dataclass(frozen=True, eq=False)
class SvdFactors:
    U: np.ndarray
    D: np.ndarray
    V: np.ndarray

    @property
    def r(self) -> int:
        return len(self.D)

    @property
    def L_hat(self) -> np.ndarray:
        return np.sqrt(self.U.shape[0]) * self.U

    @property
    def F_hat(self) -> np.ndarray:
        return self.V * self.D / np.sqrt(self.U.shape[0])

    @property
    def gamma(self) -> np.ndarray:
        return (self.U * self.D) @ self.V.T

    def truncate(self, k: int) -> "SvdFactors":
        return SvdFactors(self.U[:, :k], self.D[:k], self.V[:, :k])


def ols_beta_init(Y: MaskedMatrix, X: Covariates, cond_max: float = COND_MAX) -> np.ndarray:
    """Column-by-column OLS of the observed responses on ``X`` (m x d)."""
    M = Y.fmask
    G = masked_grams(M, X.X, axis=0)
    cond = batched_cond(G)
    bad = np.flatnonzero(cond > cond_max)
    if bad.size:
        j = int(bad[0])
        raise RankDeficientColumn(j, float(cond[j]))
    rhs = (X.X.T @ (M * Y.values)).T
    return np.linalg.solve(G, rhs[..., None])[..., 0]


def build_w(Y: MaskedMatrix, X: Covariates, beta_hat: np.ndarray, prop: PropensityFit) -> np.ndarray:
    resid = Y.fmask * (Y.values - X.X @ beta_hat.T)
    return resid / prop.pi_hat[:, None]


def svd_init(W: np.ndarray, r: int) -> SvdFactors:
    U, d, V = top_svd(W, r)
    return SvdFactors(U, d, V)
