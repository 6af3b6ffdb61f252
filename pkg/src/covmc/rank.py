"""Latent rank selection by the MSE-based information criterion.

For each candidate rank ``k`` the factors are started from the rank-``k``
truncation of the IPW residual SVD and refined by ``g`` F/L sweeps with the
OLS coefficients held fixed. The criterion is
``log mse(k, g) + k * h(n, m)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .als import _f_block, _l_block, objective_fstar
from .data import Covariates, MaskedMatrix, ModelState
from .errors import CovmcError
from .initial import SvdFactors, build_w, ols_beta_init, svd_init
from .propensity import AlphaMode, PropensityFit, default_alpha_mode, estimate_alpha

log = logging.getLogger(__name__)

MSE_FLOOR = 1e-300


def penalty_h(n: int, m: int, alpha_hat: float, C_h: float = 0.9, delta_h: float = 0.1) -> float:
    return C_h * n**delta_h * np.sqrt((m + n) / (m * n * alpha_hat))


def fit_fixed_beta(
    Y: MaskedMatrix,
    X: Covariates,
    beta_hat: np.ndarray,
    k: int,
    g: int,
    prop: PropensityFit | None = None,
    svd: SvdFactors | None = None,
    ridge_eps: float = 1e-8,
) -> ModelState:
    """Rank-``k`` factors after ``g`` (F, L) sweeps with beta frozen.

    ``svd`` may carry a precomputed SVD of the IPW matrix with at least ``k``
    components; otherwise ``prop`` is required to build it.
    """
    if g < 1:
        raise ValueError("g must be >= 1")
    if svd is None:
        if prop is None:
            raise ValueError("either prop or svd is required")
        svd = svd_init(build_w(Y, X, beta_hat, prop), k)
    f = svd.truncate(k)
    state = ModelState(beta_hat, f.L_hat, f.F_hat)
    for _ in range(g):
        state = state.replace(F=_f_block(state, Y, X, ridge_eps)[0])
        state = state.replace(L=_l_block(state, Y, X, ridge_eps)[0])
    return state


def mse_k_g(state: ModelState, Y: MaskedMatrix, X: Covariates, beta_hat: np.ndarray | None = None) -> float:
    if beta_hat is not None:
        state = state.replace(beta=beta_hat)
    return objective_fstar(state, Y, X) / (Y.n * Y.m)


@dataclass
class RankSelection:
    candidates: list
    mse_kg: list
    eic: list
    penalty_h: float
    r_hat: int
    g_used: int
    alpha_mode: str
    alpha_hat: float
    failed: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "candidates": [int(k) for k in self.candidates],
            "mse": [float(v) for v in self.mse_kg],
            "eic": [float(v) for v in self.eic],
            "h": float(self.penalty_h),
            "r_hat": int(self.r_hat),
            "g": int(self.g_used),
            "alpha_mode": self.alpha_mode,
            "alpha_hat": float(self.alpha_hat),
            "failed": {str(k): v for k, v in self.failed.items()},
        }


def select_rank(
    Y: MaskedMatrix,
    X: Covariates,
    prop: PropensityFit,
    r_bar: int = 10,
    g: int = 3,
    alpha_mode: AlphaMode | str | None = None,
    C_h: float = 0.9,
    delta_h: float = 0.1,
    beta_hat: np.ndarray | None = None,
) -> RankSelection:
    if r_bar < 1:
        raise ValueError("r_bar must be >= 1")
    r_bar = min(r_bar, Y.n, Y.m)
    mode = AlphaMode(alpha_mode) if alpha_mode is not None else default_alpha_mode(prop)
    alpha = estimate_alpha(prop, mode)
    h = penalty_h(Y.n, Y.m, alpha, C_h, delta_h)
    if beta_hat is None:
        beta_hat = ols_beta_init(Y, X)
    svd = svd_init(build_w(Y, X, beta_hat, prop), r_bar)
    cands, mses, eics, failed = [], [], [], {}
    for k in range(1, r_bar + 1):
        try:
            st = fit_fixed_beta(Y, X, beta_hat, k, g, svd=svd)
        except (CovmcError, np.linalg.LinAlgError) as exc:
            log.warning("rank %d excluded: %s", k, exc)
            failed[k] = str(exc)
            continue
        mse = mse_k_g(st, Y, X)
        cands.append(k)
        mses.append(mse)
        eics.append(float(np.log(max(mse, MSE_FLOOR)) + k * h))
    if not cands:
        raise CovmcError("every candidate rank failed")
    # argmin returns the first minimiser, i.e. the smallest k on ties
    r_hat = cands[int(np.argmin(eics))]
    return RankSelection(cands, mses, eics, float(h), r_hat, g, mode.value, alpha, failed)


def mse_initial_diagnostic(
    Y: MaskedMatrix,
    X: Covariates,
    beta_hat: np.ndarray,
    prop: PropensityFit,
    r_bar: int,
) -> list:
    """``mse(k, Gamma_hat^k)`` for k = 0..r_bar from the non-iterated SVD fits.

    Entry ``k`` uses the rank-``k`` truncation; entry 0 has no latent part.
    Normalised by ``n * m * pi_bar``.
    """
    M = Y.fmask
    R = M * (Y.values - X.X @ beta_hat.T)
    denom = Y.n * Y.m * prop.pi_bar
    out = [float(np.sum(R * R) / denom)]
    r_bar = min(r_bar, Y.n, Y.m)
    svd = svd_init(build_w(Y, X, beta_hat, prop), r_bar)
    # accumulate the rank-k reconstruction one component at a time
    G = np.zeros_like(R)
    for k in range(r_bar):
        G += np.outer(svd.U[:, k] * svd.D[k], svd.V[:, k])
        E = M * (R - G)
        out.append(float(np.sum(E * E) / denom))
    return out
