"""Partially observed response matrices, covariates and model state."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, DuplicateEntry, IndexOutOfRange


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MaskedMatrix:
    """Response matrix with a binary observation mask.

    Unobserved cells store 0.0 in ``values``; use :meth:`get` or
    :meth:`observed` rather than reading ``values`` directly.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        mask = np.asarray(self.mask)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(f"values {values.shape} and mask {mask.shape} must be equal 2-d shapes")
        if not np.all((mask == 0) | (mask == 1)):
            raise DataError("mask entries must be 0 or 1")
        mask = _frozen(mask, dtype=np.int8)
        values = np.where(mask == 1, values, 0.0)
        if not np.all(np.isfinite(values)):
            raise DataError("observed values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_dense(cls, Y, mask=None):
        Y = np.asarray(Y, dtype=float)
        if mask is None:
            mask = np.isfinite(Y)
        mask = np.asarray(mask).astype(np.int8)
        return cls(np.where(mask == 1, np.nan_to_num(Y), 0.0), mask)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def fmask(self) -> np.ndarray:
        """Mask as float64, convenient for BLAS products."""
        return self.mask.astype(float)

    def get(self, i: int, j: int) -> float | None:
        if self.mask[i, j]:
            return float(self.values[i, j])
        return None

    def observed_count(self, j: int | None = None):
        if j is None:
            return self.mask.sum(axis=0)
        return int(self.mask[:, j].sum())

    def row_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def total_observed(self) -> int:
        return int(self.mask.sum())

    def triplets(self) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(self.mask)
        return [(int(i), int(j), float(self.values[i, j])) for i, j in zip(rows, cols)]


def build_masked(triplets: Iterable[tuple[int, int, float]], n: int, m: int) -> MaskedMatrix:
    values = np.zeros((n, m))
    mask = np.zeros((n, m), dtype=np.int8)
    for row, col, value in triplets:
        row, col = int(row), int(col)
        if not (0 <= row < n and 0 <= col < m):
            raise IndexOutOfRange(f"cell ({row}, {col}) outside {n}x{m}")
        if mask[row, col]:
            raise DuplicateEntry(f"cell ({row}, {col}) appears more than once")
        mask[row, col] = 1
        values[row, col] = float(value)
    return MaskedMatrix(values, mask)


@dataclass(frozen=True, eq=False)
class Covariates:
    X: np.ndarray
    has_intercept: bool = True

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim != 2 or X.shape[1] < 1:
            raise DataError("covariate matrix must be n x d with d >= 1")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain non-finite entries")
        if self.has_intercept and not np.all(X[:, 0] == 1.0):
            raise DataError("has_intercept is set but column 0 is not all ones")
        object.__setattr__(self, "X", X)

    @classmethod
    def with_intercept(cls, Xtilde):
        Xtilde = np.asarray(Xtilde, dtype=float)
        if Xtilde.ndim == 1:
            Xtilde = Xtilde[:, None]
        return cls(np.column_stack([np.ones(Xtilde.shape[0]), Xtilde]), True)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def xtilde(self) -> np.ndarray:
        """Non-intercept covariates (the regressors of the propensity model)."""
        return self.X[:, 1:] if self.has_intercept else self.X


@dataclass(frozen=True, eq=False)
class ModelState:
    """Current ``(beta, L, F)``; ``Gamma = L F'`` and ``Theta = X beta' + Gamma``."""

    beta: np.ndarray
    L: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        L = np.asarray(self.L, dtype=float)
        F = np.asarray(self.F, dtype=float)
        if L.ndim == 1:
            L = L[:, None]
        if F.ndim == 1:
            F = F[:, None]
        if L.shape[1] != F.shape[1]:
            raise DataError(f"L has rank {L.shape[1]} but F has rank {F.shape[1]}")
        if F.shape[0] != beta.shape[0]:
            raise DataError("beta and F must have one row per column of Y")
        for a in (beta, L, F):
            a.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "F", F)

    @property
    def r(self) -> int:
        return self.L.shape[1]

    @property
    def gamma(self) -> np.ndarray:
        if self.r == 0:
            return np.zeros((self.L.shape[0], self.F.shape[0]))
        return self.L @ self.F.T

    def theta(self, X) -> np.ndarray:
        X = X.X if isinstance(X, Covariates) else np.asarray(X)
        return X @ self.beta.T + self.gamma

    def replace(self, **kw) -> "ModelState":
        d = {"beta": self.beta, "L": self.L, "F": self.F}
        d.update(kw)
        return ModelState(**d)


@dataclass(frozen=True)
class ColumnSystem:
    design: np.ndarray
    response: np.ndarray
    rows: np.ndarray


def column_system(Y: MaskedMatrix, X: Covariates, j: int) -> ColumnSystem:
    if not 0 <= j < Y.m:
        raise IndexOutOfRange(f"column {j} outside 0..{Y.m - 1}")
    rows = np.flatnonzero(Y.mask[:, j])
    return ColumnSystem(X.X[rows], Y.values[rows, j], rows)


# -- CSV interfaces ---------------------------------------------------------


def read_triplets(path, n: int | None = None, m: int | None = None) -> MaskedMatrix:
    """Read a ``row,col,value`` CSV; shape defaults to max index + 1."""
    trip = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row", "col", "value"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header row,col,value")
        for rec in reader:
            try:
                trip.append((int(rec["row"]), int(rec["col"]), float(rec["value"])))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: bad record {rec}") from exc
    if n is None:
        n = 1 + max((t[0] for t in trip), default=-1)
    if m is None:
        m = 1 + max((t[1] for t in trip), default=-1)
    return build_masked(trip, n, m)


def write_triplets(path, Y: MaskedMatrix | Iterable[tuple[int, int, float]]):
    trip = Y.triplets() if isinstance(Y, MaskedMatrix) else Y
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for i, j, v in trip:
            w.writerow([int(i), int(j), repr(float(v))])


def read_covariates(path, has_intercept: bool | None = None) -> Covariates:
    """Read a dense ``x0,x1,...`` CSV (one row per subject).

    Intercept detection: column 0 identically one unless overridden.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or not all(h.strip().startswith("x") for h in header):
            raise DataError(f"{path}: expected header x0,x1,...")
        rows = [[float(v) for v in rec] for rec in reader if rec]
    X = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if has_intercept is None:
        has_intercept = bool(len(rows)) and bool(np.all(X[:, 0] == 1.0))
    return Covariates(X, has_intercept)


def write_covariates(path, X: Covariates | np.ndarray):
    arr = X.X if isinstance(X, Covariates) else np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(arr.shape[1])])
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def dense_to_triplets(path_in, path_out):
    """Convert a dense CSV (blank cells = missing) into the triplet format."""
    trip = []
    with open(path_in, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            for j, v in enumerate(rec):
                if v.strip():
                    trip.append((i, j, float(v)))
    write_triplets(Path(path_out), trip)
    return trip
