"""Iterative least squares: exact block minimisation of the observed-cell objective.

Each step updates beta, then F, then L. Every block is a collection of
independent small least-squares problems (one per column for beta and F, one
per row for L), solved here as batched normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Covariates, MaskedMatrix, ModelState
from .initial import build_w, ols_beta_init, svd_init
from .linalg import gram_solve, masked_grams
from .propensity import PropensityFit


@dataclass(frozen=True)
class FitConfig:
    rank: int
    max_steps: int = 3
    converge: bool = False
    tol: float = 1e-6
    ridge_eps: float = 1e-8

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    @classmethod
    def until_converged(cls, rank: int, max_steps: int = 500, **kw) -> "FitConfig":
        return cls(rank=rank, max_steps=max_steps, converge=True, **kw)


@dataclass
class FitTrace:
    objective_per_step: list = field(default_factory=list)
    objective_per_block: list = field(default_factory=list)
    delta_history: list = field(default_factory=list)
    steps_taken: int = 0
    converged: bool = False
    ridge_events: int = 0
    initial_objective: float = float("nan")

    @property
    def delta_inf(self) -> float:
        return self.delta_history[-1] if self.delta_history else float("nan")

    def to_dict(self) -> dict:
        return {
            "objective_per_step": [float(v) for v in self.objective_per_step],
            "objective_per_block": [float(v) for v in self.objective_per_block],
            "delta_history": [float(v) for v in self.delta_history],
            "steps_taken": self.steps_taken,
            "converged": self.converged,
            "ridge_events": self.ridge_events,
            "initial_objective": float(self.initial_objective),
        }


def _resid(Y: MaskedMatrix, X: Covariates, beta: np.ndarray) -> np.ndarray:
    return Y.fmask * (Y.values - X.X @ beta.T)


def objective_fstar(state: ModelState, Y: MaskedMatrix, X: Covariates) -> float:
    E = Y.fmask * (state.gamma - (Y.values - X.X @ state.beta.T))
    return float(np.sum(E * E))


def solve_beta(gamma, Y, X, ridge_eps=1e-8):
    """Per-column LS of ``Y - gamma`` on ``X``; returns ``(beta, ridged)``."""
    M = Y.fmask
    G = masked_grams(M, X.X, axis=0)
    rhs = (X.X.T @ (M * (Y.values - gamma))).T
    return gram_solve(G, rhs, ridge_eps)


def _beta_block(state, Y, X, ridge_eps):
    return solve_beta(state.gamma, Y, X, ridge_eps)


def _f_block(state, Y, X, ridge_eps):
    if state.r == 0:
        return np.zeros((Y.m, 0)), np.zeros(Y.m, dtype=bool)
    M = Y.fmask
    G = masked_grams(M, state.L, axis=0)
    rhs = _resid(Y, X, state.beta).T @ state.L
    return gram_solve(G, rhs, ridge_eps)


def _l_block(state, Y, X, ridge_eps):
    if state.r == 0:
        return np.zeros((Y.n, 0)), np.zeros(Y.n, dtype=bool)
    M = Y.fmask
    G = masked_grams(M, state.F, axis=1)
    rhs = _resid(Y, X, state.beta) @ state.F
    return gram_solve(G, rhs, ridge_eps)


def update_beta(state: ModelState, Y: MaskedMatrix, X: Covariates, cfg: FitConfig | None = None) -> np.ndarray:
    """Per-column LS of ``Y_j - Gamma_j`` on ``X`` over the observed rows."""
    return _beta_block(state, Y, X, cfg.ridge_eps if cfg else 1e-8)[0]


def update_f(state: ModelState, Y: MaskedMatrix, X: Covariates, cfg: FitConfig | None = None) -> np.ndarray:
    """``F_j = (sum_i xi_ij L_i L_i')^-1 sum_i xi_ij L_i (Y_ij - X_i' beta_j)``."""
    return _f_block(state, Y, X, cfg.ridge_eps if cfg else 1e-8)[0]


def update_l(state: ModelState, Y: MaskedMatrix, X: Covariates, cfg: FitConfig | None = None) -> np.ndarray:
    """Row analogue of :func:`update_f`."""
    return _l_block(state, Y, X, cfg.ridge_eps if cfg else 1e-8)[0]


def initial_state(Y: MaskedMatrix, X: Covariates, prop: PropensityFit, rank: int) -> ModelState:
    """OLS beta plus the rank-``rank`` SVD of the IPW residual matrix."""
    beta = ols_beta_init(Y, X)
    if rank == 0:
        return ModelState(beta, np.zeros((Y.n, 0)), np.zeros((Y.m, 0)))
    f = svd_init(build_w(Y, X, beta, prop), rank)
    return ModelState(beta, f.L_hat, f.F_hat)


def sup_change_sq(X: Covariates, old: ModelState, new: ModelState) -> float:
    """``||X dbeta' + dGamma||_inf^2`` between two consecutive iterates."""
    D = X.X @ (new.beta - old.beta).T + (new.gamma - old.gamma)
    return float(np.max(np.abs(D)) ** 2)


def iterate(state: ModelState, Y: MaskedMatrix, X: Covariates, cfg: FitConfig, trace: FitTrace | None = None):
    """Run up to ``cfg.max_steps`` (beta, F, L) sweeps from ``state``."""
    trace = trace if trace is not None else FitTrace()
    if not trace.objective_per_block:
        trace.initial_objective = objective_fstar(state, Y, X)
    eps = cfg.ridge_eps
    for _ in range(cfg.max_steps):
        prev = state
        beta, bad = _beta_block(state, Y, X, eps)
        trace.ridge_events += int(bad.sum())
        state = state.replace(beta=beta)
        trace.objective_per_block.append(objective_fstar(state, Y, X))
        F, bad = _f_block(state, Y, X, eps)
        trace.ridge_events += int(bad.sum())
        state = state.replace(F=F)
        trace.objective_per_block.append(objective_fstar(state, Y, X))
        L, bad = _l_block(state, Y, X, eps)
        trace.ridge_events += int(bad.sum())
        state = state.replace(L=L)
        obj = objective_fstar(state, Y, X)
        trace.objective_per_block.append(obj)
        trace.objective_per_step.append(obj)
        trace.steps_taken += 1
        delta = sup_change_sq(X, prev, state)
        trace.delta_history.append(delta)
        trace.converged = delta < cfg.tol
        if cfg.converge and trace.converged:
            break
    return state, trace


def fit_iterative(Y: MaskedMatrix, X: Covariates, prop: PropensityFit, cfg: FitConfig, init: ModelState | None = None):
    """Full pipeline: OLS init, IPW SVD init, then alternating LS sweeps.

    Returns ``(state, trace)``. ``init`` skips the initial estimators when
    they have already been computed.
    """
    if init is None:
        init = initial_state(Y, X, prop, cfg.rank)
    return iterate(init, Y, X, cfg)
