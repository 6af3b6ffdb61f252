"""Iterative-PCA (hard impute) comparator.

Each step fills the unobserved cells of the residual matrix with the previous
low-rank estimate, takes the rank-r SVD of the completed matrix, then refits
beta by per-column LS given the new Gamma.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .als import FitConfig, initial_state, solve_beta
from .data import Covariates, MaskedMatrix, ModelState
from .initial import svd_init
from .propensity import PropensityFit

PCA_MAX_STEPS = 500


@dataclass
class PcaTrace:
    steps_taken: int = 0
    delta_history: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    converged: bool = False
    observed_rss: list = field(default_factory=list)

    def to_dict(self, include_time: bool = False) -> dict:
        d = {
            "steps_taken": self.steps_taken,
            "delta_history": [float(v) for v in self.delta_history],
            "converged": self.converged,
            "observed_rss": [float(v) for v in self.observed_rss],
        }
        if include_time:
            d["wall_time"] = [float(v) for v in self.wall_time]
        return d


def pca_impute_step(W: np.ndarray, gamma_prev: np.ndarray, mask: np.ndarray, r: int) -> np.ndarray:
    """Rank-``r`` SVD reconstruction of ``W`` with unobserved cells taken from ``gamma_prev``."""
    if r == 0:
        return np.zeros_like(W, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    filled = np.where(mask, W, gamma_prev)
    f = svd_init(filled, r)
    return f.gamma


def _factor(gamma: np.ndarray, r: int):
    f = svd_init(gamma, r)
    return f.L_hat, f.F_hat


def fit_iterative_pca(
    Y: MaskedMatrix,
    X: Covariates,
    prop: PropensityFit,
    cfg: FitConfig,
    init: ModelState | None = None,
):
    """Hard-impute iterations from the same initial estimates as :func:`fit_iterative`.

    With ``cfg.converge`` the loop stops when ``||X dbeta' + dGamma||_inf^2 < tol``
    or after ``max(cfg.max_steps, ...)`` steps; ``PcaTrace.converged`` records which.
    """
    if init is None:
        init = initial_state(Y, X, prop, cfg.rank)
    mask = Y.mask.astype(bool)
    M = Y.fmask
    state = init
    gamma = init.gamma
    trace = PcaTrace()
    for _ in range(cfg.max_steps):
        t0 = time.perf_counter()
        prev_beta, prev_gamma = state.beta, gamma
        resid = Y.values - X.X @ state.beta.T
        gamma = pca_impute_step(resid, gamma, mask, cfg.rank)
        beta, _ = solve_beta(gamma, Y, X, cfg.ridge_eps)
        state = state.replace(beta=beta)
        trace.wall_time.append(time.perf_counter() - t0)
        trace.steps_taken += 1
        D = X.X @ (beta - prev_beta).T + (gamma - prev_gamma)
        delta = float(np.max(np.abs(D)) ** 2)
        trace.delta_history.append(delta)
        E = M * (Y.values - X.X @ beta.T - gamma)
        trace.observed_rss.append(float(np.sum(E * E)))
        trace.converged = delta < cfg.tol
        if cfg.converge and trace.converged:
            break
    L, F = _factor(gamma, cfg.rank) if cfg.rank else (np.zeros((Y.n, 0)), np.zeros((Y.m, 0)))
    return ModelState(state.beta, L, F), trace
