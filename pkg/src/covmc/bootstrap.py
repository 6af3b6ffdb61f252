"""Gaussian multiplier bootstrap for simultaneous linear hypotheses on beta.

Tests ``H0: A_j beta_j = a0_j`` for every ``j`` in a column group with the
sup statistic ``T = max_j ||A_j beta_j - a0_j||_inf``. Its null law is
approximated by ``T* = max_j ||n^-1 sum_i iota_i A_j omega_ij||_inf`` with
i.i.d. standard normal multipliers ``iota_i``, where ``omega_ij`` is the
estimated influence vector of ``beta_j``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Covariates, MaskedMatrix, ModelState
from .errors import DataError, EmptyGroup
from .inference import _checked_inv, residuals
from .propensity import PropensityFit


@dataclass(frozen=True, eq=False)
class ContrastSpec:
    group: np.ndarray  # column indices
    A: np.ndarray  # (|G|, q, d)
    a0: np.ndarray  # (|G|, q)

    def __post_init__(self):
        group = np.asarray(self.group, dtype=int).ravel()
        if group.size == 0:
            raise EmptyGroup("contrast group is empty")
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 1:
            A = A[None, :]
        if A.ndim == 2:
            A = np.broadcast_to(A, (group.size,) + A.shape).copy()
        if A.ndim != 3 or A.shape[0] != group.size:
            raise DataError(f"A must be q x d or |G| x q x d, got {A.shape}")
        q, d = A.shape[1:]
        if q > d:
            raise DataError(f"contrast has q={q} rows but only d={d} coefficients")
        if np.any(np.all(A.reshape(group.size, -1) == 0, axis=1)):
            raise DataError("every A_j must be nonzero")
        a0 = np.asarray(self.a0, dtype=float)
        if a0.ndim == 0:
            a0 = np.full(q, float(a0))
        if a0.ndim == 1:
            a0 = np.broadcast_to(a0, (group.size, q)).copy()
        if a0.shape != (group.size, q):
            raise DataError(f"a0 must be q or |G| x q, got {a0.shape}")
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "a0", a0)

    @property
    def q(self) -> int:
        return self.A.shape[1]

    @property
    def d(self) -> int:
        return self.A.shape[2]

    def scaled(self, c: float) -> "ContrastSpec":
        return ContrastSpec(self.group, c * self.A, c * self.a0)

    def to_dict(self) -> dict:
        return {"group": self.group.tolist(), "A": self.A.tolist(), "a0": self.a0.tolist()}

    @classmethod
    def from_dict(cls, d: dict, m: int | None = None) -> "ContrastSpec":
        group = d.get("group", "all")
        if group == "all":
            if m is None:
                raise DataError("group 'all' needs the number of columns")
            group = range(m)
        return cls(list(group), d["A"], d.get("a0", 0.0))

    @classmethod
    def load(cls, path, m: int | None = None) -> "ContrastSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), m)


# -- built-in contrasts ------------------------------------------------------


def all_zero(d: int, group) -> ContrastSpec:
    """``H0: beta_jp = 0`` for every p and every j in ``group``."""
    return ContrastSpec(list(group), np.eye(d), np.zeros(d))


def coef_zero(d: int, p: int, group) -> ContrastSpec:
    """``H0: beta_jp = 0`` for every j in ``group``."""
    A = np.zeros((1, d))
    A[0, p] = 1.0
    return ContrastSpec(list(group), A, np.zeros(1))


def pairwise_equal(d: int, p: int, p2: int, group) -> ContrastSpec:
    """``H0: beta_jp - beta_jp2 = 0`` for every j in ``group``."""
    A = np.zeros((1, d))
    A[0, p], A[0, p2] = 1.0, -1.0
    return ContrastSpec(list(group), A, np.zeros(1))


# -- statistics ----------------------------------------------------------------


def omega_hat(state: ModelState, Y: MaskedMatrix, X: Covariates, prop: PropensityFit) -> np.ndarray:
    """Influence vectors ``omega[j, i] = M_X^-1 X_i (xi_ij eps_ij + pi_i Gamma_ij)``, shape (m, n, d)."""
    n = Y.n
    pi = prop.pi_hat
    M_X = (X.X * pi[:, None]).T @ X.X / n
    XM = X.X @ _checked_inv(M_X, "M_X")
    S = residuals(state, Y, X) + pi[:, None] * state.gamma
    return S.T[:, :, None] * XM[None, :, :]


def t_stat(state: ModelState, spec: ContrastSpec) -> float:
    dev = np.einsum("gqd,gd->gq", spec.A, state.beta[spec.group]) - spec.a0
    return float(np.max(np.abs(dev)))


def multipliers(seed: int, b: int, n: int) -> np.ndarray:
    """Standard normal multipliers of replicate ``b`` from its own counter-based stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(b)]))).standard_normal(n)


def order_stat_index(B: int, alpha: float) -> int:
    """1-based rank ``ceil((1 - alpha)(B + 1))`` of the bootstrap critical value."""
    return int(math.ceil(round((1.0 - alpha) * (B + 1), 9)))


@dataclass
class BootstrapResult:
    T: float
    T_star_samples: np.ndarray
    quantile: float
    p_value: float
    reject: bool
    B: int
    seed: int
    alpha: float

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "T": float(self.T),
            "quantile": float(self.quantile),
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "B": int(self.B),
            "seed": int(self.seed),
            "alpha": float(self.alpha),
        }
        if include_samples:
            d["T_star_samples"] = [float(v) for v in self.T_star_samples]
        return d


def bootstrap_samples(omega: np.ndarray, spec: ContrastSpec, B: int, seed: int, chunk: int = 256) -> np.ndarray:
    m_g = spec.group.size
    n = omega.shape[1]
    AW = np.einsum("gqd,gid->igq", spec.A, omega[spec.group]).reshape(n, m_g * spec.q)
    out = np.empty(B)
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        iota = np.stack([multipliers(seed, b, n) for b in range(start, stop)])
        out[start:stop] = np.max(np.abs(iota @ AW), axis=1) / n
    return out


def bootstrap_quantile(omega: np.ndarray, spec: ContrastSpec, B: int = 1000, alpha: float = 0.05, seed: int = 0) -> BootstrapResult:
    """Bootstrap draws and their ``(1 - alpha)`` critical value (T fields left unset)."""
    if B < 100:
        raise DataError("B must be at least 100")
    samples = bootstrap_samples(omega, spec, B, seed)
    k = order_stat_index(B, alpha)
    q = float(np.sort(samples)[k - 1]) if k <= B else float("inf")
    return BootstrapResult(float("nan"), samples, q, float("nan"), False, B, seed, alpha)


def simultaneous_test(
    state: ModelState,
    Y: MaskedMatrix,
    X: Covariates,
    prop: PropensityFit,
    spec: ContrastSpec,
    B: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    omega: np.ndarray | None = None,
) -> BootstrapResult:
    if omega is None:
        omega = omega_hat(state, Y, X, prop)
    res = bootstrap_quantile(omega, spec, B, alpha, seed)
    T = t_stat(state, spec)
    res.T = T
    res.p_value = float((1 + np.sum(res.T_star_samples >= T)) / (B + 1))
    res.reject = bool(T > res.quantile)
    return res
