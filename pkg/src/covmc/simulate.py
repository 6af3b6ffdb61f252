"""Data-generating processes and Monte Carlo experiment drivers.

Both designs draw ``X_i ~ N(0, S_X)``, ``L_i ~ N(0, S_L)``, ``F_j ~ N(0, 4 S_F)``
with ``(S_X)_kl = (S_L)_kl = 0.5^|k-l|``, ``(S_F)_kl = 0.2^|k-l|``, unit
Gaussian noise and ``beta_j ~ N(0, 4 rho^2 I)``. ``beta`` is drawn once per
experiment seed; everything else is redrawn per replicate.

Observation model: constant rate ``pi`` ("dgp1") or
``pi_i = expit(log alpha_n + X_i' gamma1)`` with ``alpha_n = C log(n) / sqrt(n)``
and ``gamma1 = 0.2 * 1`` ("dgp2").

Random streams: the coefficient stream is ``SeedSequence([seed, 0])`` and
replicate ``k`` uses ``SeedSequence([seed, 1, k])``, so results do not
depend on execution order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .als import FitConfig, initial_state, iterate
from .bootstrap import all_zero, coef_zero, omega_hat, simultaneous_test
from .data import Covariates, MaskedMatrix, ModelState
from .errors import CovmcError
from .inference import infer_gamma, infer_theta, plugin_moments
from .pca import PCA_MAX_STEPS, fit_iterative_pca
from .propensity import AlphaMode, estimate_propensity
from .rank import mse_initial_diagnostic, select_rank

log = logging.getLogger(__name__)

RHO_GRID = (0.0, math.exp(-3), math.exp(-2.5), math.exp(-2), math.exp(-1.5), math.exp(-1))
GAMMA1 = 0.2


def ar1_cov(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass(frozen=True)
class DgpConfig:
    n: int = 200
    m: int = 200
    d: int = 3
    r: int = 3
    kind: str = "dgp1"
    pi: float = 0.5
    C: float = 2.0
    rho: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("dgp1", "dgp2"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.kind == "dgp1" and not 0 < self.pi <= 1:
            raise ValueError("dgp1 needs 0 < pi <= 1")
        if self.kind == "dgp2" and not self.C > 0:
            raise ValueError("dgp2 needs C > 0")
        if min(self.n, self.m) < self.d + self.r:
            raise ValueError("n and m must be at least d + r")

    @property
    def alpha_n(self) -> float:
        if self.kind == "dgp1":
            return self.pi
        return self.C * math.log(self.n) / math.sqrt(self.n)

    @property
    def alpha_mode(self) -> AlphaMode:
        return AlphaMode.CONSTANT if self.kind == "dgp1" else AlphaMode.COVARIATE


@dataclass(frozen=True, eq=False)
class DgpDraw:
    Y: MaskedMatrix
    X: Covariates
    truth: ModelState
    pi_true: np.ndarray
    eps: np.ndarray

    @property
    def mu(self) -> np.ndarray:
        return self.truth.theta(self.X)


def draw_beta(cfg: DgpConfig) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 0])))
    # scaling one standard draw keeps beta fixed in direction across rho values
    return 2.0 * cfg.rho * rng.standard_normal((cfg.m, cfg.d))


def gen_dgp(cfg: DgpConfig, rep: int = 0, beta: np.ndarray | None = None) -> DgpDraw:
    if beta is None:
        beta = draw_beta(cfg)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 1, rep])))
    n, m, d, r = cfg.n, cfg.m, cfg.d, cfg.r
    X = rng.standard_normal((n, d)) @ np.linalg.cholesky(ar1_cov(d, 0.5)).T
    L = rng.standard_normal((n, r)) @ np.linalg.cholesky(ar1_cov(r, 0.5)).T
    F = rng.standard_normal((m, r)) @ np.linalg.cholesky(4.0 * ar1_cov(r, 0.2)).T
    eps = cfg.noise_sd * rng.standard_normal((n, m))
    if cfg.kind == "dgp1":
        pi = np.full(n, float(cfg.pi))
    else:
        pi = expit(math.log(cfg.alpha_n) + X @ np.full(d, GAMMA1))
    U = rng.random((n, m))
    mask = (U < pi[:, None]).astype(np.int8)
    Y = X @ beta.T + L @ F.T + eps
    return DgpDraw(MaskedMatrix(np.where(mask == 1, Y, 0.0), mask), Covariates(X, has_intercept=False), ModelState(beta, L, F), pi, eps)


# -- experiment bookkeeping --------------------------------------------------


@dataclass
class ExperimentResult:
    name: str
    config: dict
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def replicates(self) -> int:
        return len(self.records)

    def column(self, key) -> np.ndarray:
        return np.array([rec[key] for rec in self.records if key in rec], dtype=float)

    def aggregates(self) -> dict:
        keys = []
        for rec in self.records:
            for k, v in rec.items():
                if k not in keys and isinstance(v, (int, float, bool, np.floating, np.integer)) and k != "rep":
                    keys.append(k)
        out = {}
        for k in keys:
            x = self.column(k)
            x = x[np.isfinite(x)]
            if not x.size:
                continue
            se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
            out[k] = {"mean": float(np.mean(x)), "mc_se": se, "median": float(np.median(x)), "count": int(x.size)}
        return out

    def to_json_dict(self) -> dict:
        return {
            "experiment": self.name,
            "config": self.config,
            "replicates": self.replicates,
            "failures": len(self.failures),
            "failure_details": self.failures,
            "aggregates": self.aggregates(),
        }

    def write(self, csv_path, json_path):
        keys = []
        for rec in self.records:
            for k in rec:
                if k not in keys:
                    keys.append(k)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for rec in self.records:
                w.writerow([_fmt(rec.get(k, "")) for k in keys])
        with open(json_path, "w") as fh:
            json.dump(_jsonable(self.to_json_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _run(name, cfg, replicates, body, extra_config=None):
    res = ExperimentResult(name, {**asdict(cfg), **(extra_config or {})})
    beta = draw_beta(cfg)
    for rep in range(replicates):
        draw = gen_dgp(cfg, rep, beta)
        try:
            rec = body(draw, rep)
        except (CovmcError, np.linalg.LinAlgError) as exc:
            log.warning("replicate %d failed: %s", rep, exc)
            res.failures.append({"rep": rep, "error": f"{type(exc).__name__}: {exc}"})
            continue
        res.records.append({"rep": rep, **rec})
    return res


def _mse(a, b) -> float:
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


# -- experiments -----------------------------------------------------------------

MSE_METHODS = ("init", "ls3", "lsc", "pca3", "pcac")


def run_mse_experiment(cfg: DgpConfig, replicates: int, methods=MSE_METHODS, g: int = 3, record_time: bool = False) -> ExperimentResult:
    """Entrywise MSE of beta and Gamma for the initial, iterated-LS and iterated-PCA estimators."""

    def body(draw, rep):
        Y, X, truth = draw.Y, draw.X, draw.truth
        prop = estimate_propensity(Y, X)
        t0 = time.perf_counter()
        init = initial_state(Y, X, prop, cfg.r)
        t_init = time.perf_counter() - t0
        rec = {}
        fits = {"init": (init, 0, t_init)}
        for meth in methods:
            if meth == "init":
                continue
            conv = meth.endswith("c")
            fcfg = FitConfig.until_converged(cfg.r, PCA_MAX_STEPS) if conv else FitConfig(cfg.r, max_steps=g)
            t0 = time.perf_counter()
            if meth.startswith("ls"):
                st, tr = iterate(init, Y, X, fcfg)
            else:
                st, tr = fit_iterative_pca(Y, X, prop, fcfg, init=init)
            fits[meth] = (st, tr.steps_taken, t_init + time.perf_counter() - t0)
            rec[f"converged_{meth}"] = bool(tr.converged)
        for meth, (st, its, secs) in fits.items():
            if meth not in methods:
                continue
            rec[f"mse_gamma_{meth}"] = _mse(st.gamma, truth.gamma)
            rec[f"mse_beta_{meth}"] = _mse(st.beta, truth.beta)
            rec[f"mse_theta_{meth}"] = _mse(st.theta(X), draw.mu)
            rec[f"iters_{meth}"] = its
            if record_time:
                rec[f"seconds_{meth}"] = secs
        return rec

    return _run("mse", cfg, replicates, body, {"methods": list(methods), "g": g})


def run_timing_experiment(cfg: DgpConfig, replicates: int) -> ExperimentResult:
    """Iterations and wall time to convergence for iterated LS vs iterated PCA."""
    res = run_mse_experiment(cfg, replicates, methods=("lsc", "pcac"), record_time=True)
    res.name = "timing"
    for rec in res.records:
        for meth in ("lsc", "pcac"):
            its = max(rec[f"iters_{meth}"], 1)
            rec[f"seconds_per_iter_{meth}"] = rec[f"seconds_{meth}"] / its
    return res


def coverage_hit(estimate, se, truth, level=0.95) -> bool:
    from .inference import normal_quantile

    q = normal_quantile(0.5 + level / 2)
    return bool(abs(estimate - truth) <= q * se)


def run_coverage_experiment(cfg: DgpConfig, replicates: int, targets=((1, 2),), level: float = 0.95, g: int = 3) -> ExperimentResult:
    """Bias, standard errors and CI hits for Gamma_ij and mu_ij at the given cells.

    Records the studentised statistics ``z_gamma_i_j`` and ``z_theta_i_j`` for
    normality checks.
    """

    def body(draw, rep):
        Y, X, truth = draw.Y, draw.X, draw.truth
        prop = estimate_propensity(Y, X)
        st, _ = iterate(initial_state(Y, X, prop, cfg.r), Y, X, FitConfig(cfg.r, max_steps=g))
        mom = plugin_moments(st, Y, X, prop)
        mu = draw.mu
        G = truth.gamma
        rec = {}
        for i, j in targets:
            rg = infer_gamma(i, j, st, mom, level)
            rt = infer_theta(i, j, st, mom, level)
            tag = f"{i}_{j}"
            rec[f"bias_gamma_{tag}"] = rg.estimate - G[i, j]
            rec[f"se_gamma_{tag}"] = rg.se
            rec[f"z_gamma_{tag}"] = (rg.estimate - G[i, j]) / rg.se
            rec[f"hit_gamma_{tag}"] = bool(rg.ci_low <= G[i, j] <= rg.ci_high)
            rec[f"bias_theta_{tag}"] = rt.estimate - mu[i, j]
            rec[f"se_theta_{tag}"] = rt.se
            rec[f"z_theta_{tag}"] = (rt.estimate - mu[i, j]) / rt.se
            rec[f"hit_theta_{tag}"] = bool(rt.ci_low <= mu[i, j] <= rt.ci_high)
        return rec

    return _run("coverage", cfg, replicates, body, {"targets": [list(t) for t in targets], "level": level, "g": g})


def default_hypotheses(cfg: DgpConfig) -> dict:
    group = range(cfg.m)
    hyps = {"all": all_zero(cfg.d, group)}
    for p in range(cfg.d):
        hyps[f"coef{p}"] = coef_zero(cfg.d, p, group)
    return hyps


def run_rejection_experiment(
    cfg: DgpConfig,
    replicates: int,
    rho_grid=RHO_GRID,
    hypotheses: dict | None = None,
    B: int = 500,
    alpha: float = 0.05,
    g: int = 3,
) -> ExperimentResult:
    """Bootstrap rejection rates of zero-coefficient hypotheses across a grid of signal sizes.

    Bootstrap seeds are ``seed * 1_000_003 + 1000 * rep + rho_index`` so each
    (rho, replicate) pair has its own multiplier stream.
    """
    hyps = hypotheses if hypotheses is not None else default_hypotheses(cfg)
    out = ExperimentResult("rejection", {**asdict(cfg), "rho_grid": list(rho_grid), "B": B, "alpha": alpha, "g": g, "hypotheses": sorted(hyps)})
    for ri, rho in enumerate(rho_grid):
        rcfg = replace(cfg, rho=rho)

        def body(draw, rep, ri=ri, rho=rho):
            Y, X = draw.Y, draw.X
            prop = estimate_propensity(Y, X)
            st, _ = iterate(initial_state(Y, X, prop, cfg.r), Y, X, FitConfig(cfg.r, max_steps=g))
            om = omega_hat(st, Y, X, prop)
            rec = {"rho_index": ri, "rho": rho}
            seed = cfg.seed * 1_000_003 + 1000 * rep + ri
            for name in sorted(hyps):
                res = simultaneous_test(st, Y, X, prop, hyps[name], B, alpha, seed, omega=om)
                rec[f"reject_{name}"] = res.reject
                rec[f"p_{name}"] = res.p_value
            return rec

        part = _run("rejection", rcfg, replicates, body)
        out.records.extend(part.records)
        out.failures.extend({**f, "rho_index": ri} for f in part.failures)
    return out


def rejection_rates(res: ExperimentResult, name: str = "all") -> dict:
    """Rejection rate per rho index."""
    rates = {}
    for ri in sorted({rec["rho_index"] for rec in res.records}):
        x = [rec[f"reject_{name}"] for rec in res.records if rec["rho_index"] == ri]
        rates[ri] = float(np.mean(x))
    return rates


def run_rank_experiment(cfg: DgpConfig, replicates: int, r_bar: int = 9, g: int = 3, diagnostic: bool = False, C_h: float = 0.9, delta_h: float = 0.1) -> ExperimentResult:
    """eIC rank estimates; with ``diagnostic`` also the mse(k) curves from initial and iterated fits."""

    def body(draw, rep):
        Y, X = draw.Y, draw.X
        prop = estimate_propensity(Y, X)
        sel = select_rank(Y, X, prop, r_bar, g, cfg.alpha_mode, C_h, delta_h)
        rec = {"r_hat": sel.r_hat, "correct": sel.r_hat == cfg.r, "h": sel.penalty_h}
        for k, v in zip(sel.candidates, sel.mse_kg):
            rec[f"mse_iter_{k}"] = v
        if diagnostic:
            from .initial import ols_beta_init

            curve = mse_initial_diagnostic(Y, X, ols_beta_init(Y, X), prop, r_bar)
            for k, v in enumerate(curve):
                rec[f"mse_init_{k}"] = v
        return rec

    return _run("rank", cfg, replicates, body, {"r_bar": r_bar, "g": g, "C_h": C_h, "delta_h": delta_h})


EXPERIMENTS = {
    "mse": run_mse_experiment,
    "coverage": run_coverage_experiment,
    "rejection": run_rejection_experiment,
    "rank": run_rank_experiment,
    "timing": run_timing_experiment,
}
