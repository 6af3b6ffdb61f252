"""Ratings-data ingestion, demographic dummy coding and RMSE evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Covariates, MaskedMatrix, ModelState, build_masked
from .errors import DataError, EmptySplit, UnknownCategory

RATING_MIN, RATING_MAX = 0.5, 5.0
AGE_GROUPS = ("0-24", "25-34", "35-49", "50+")
_GENDER = {"f": 0, "female": 0, "0": 0, "m": 1, "male": 1, "1": 1}


@dataclass(frozen=True)
class UserRecord:
    user: str
    gender: str
    age_group: str


def gender_code(g) -> int:
    key = str(g).strip().lower()
    if key not in _GENDER:
        raise UnknownCategory(f"unknown gender {g!r}")
    return _GENDER[key]


def age_dummies(a) -> list:
    a = str(a).strip()
    if a not in AGE_GROUPS:
        raise UnknownCategory(f"unknown age group {a!r}; expected one of {AGE_GROUPS}")
    k = AGE_GROUPS.index(a)
    return [1.0 if k == t else 0.0 for t in (1, 2, 3)]


def encode_covariates(users, interactions: bool = False) -> Covariates:
    """Columns ``[1, G, A1, A2, A3]`` plus ``[G*A1, G*A2, G*A3]`` with interactions.

    Female and age "0-24" are the reference cells.
    """
    rows = []
    for u in users:
        gender, age = (u.gender, u.age_group) if isinstance(u, UserRecord) else (u[-2], u[-1])
        g = float(gender_code(gender))
        a = age_dummies(age)
        row = [1.0, g, *a]
        if interactions:
            row += [g * v for v in a]
        rows.append(row)
    d = 8 if interactions else 5
    return Covariates(np.array(rows, dtype=float).reshape(len(rows), d), has_intercept=True)


def clamp_rating(y: float) -> float:
    return min(max(float(y), RATING_MIN), RATING_MAX)


def predict_adjusted(state: ModelState, X: Covariates, i: int, j: int) -> float:
    """Fitted ``X_i' beta_j + L_i' F_j`` clamped to the rating scale."""
    return clamp_rating(X.X[i] @ state.beta[j] + state.L[i] @ state.F[j])


def predict_cells(state: ModelState, X: Covariates, rows, cols, adjusted: bool = False) -> np.ndarray:
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    pred = np.einsum("td,td->t", X.X[rows], state.beta[cols]) + np.einsum("tk,tk->t", state.L[rows], state.F[cols])
    if adjusted:
        pred = np.clip(pred, RATING_MIN, RATING_MAX)
    return pred


def rmse(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptySplit("RMSE over an empty set")
    return float(np.sqrt(np.mean((y - np.asarray(pred, dtype=float)) ** 2)))


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    train: MaskedMatrix
    test: list  # (row, col, rating)
    X: Covariates
    user_ids: list
    item_ids: list

    def cells(self, which: str):
        if which == "train":
            return self.train.triplets()
        if which == "test":
            return list(self.test)
        raise ValueError(f"unknown split {which!r}")


def rmse_eval(state: ModelState, dataset: RatingsDataset, which: str = "test", adjusted: bool = False) -> float:
    trip = dataset.cells(which)
    if not trip:
        raise EmptySplit(f"{which} split is empty")
    r, c, y = (np.array(v) for v in zip(*trip))
    return rmse(y, predict_cells(state, dataset.X, r, c, adjusted))


@dataclass(frozen=True)
class EvalReport:
    rmse_train: float
    rmse_test: float
    rmse_adjusted_test: float
    rmse_adjusted_train: float
    r_hat_used: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate(state: ModelState, dataset: RatingsDataset) -> EvalReport:
    return EvalReport(
        rmse_eval(state, dataset, "train"),
        rmse_eval(state, dataset, "test"),
        rmse_eval(state, dataset, "test", adjusted=True),
        rmse_eval(state, dataset, "train", adjusted=True),
        state.r,
    )


# -- file ingestion ---------------------------------------------------------------


def read_ratings(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"user", "item", "rating"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header user,item,rating")
        for rec in reader:
            try:
                val = float(rec["rating"])
            except ValueError as exc:
                raise DataError(f"{path}: bad rating {rec['rating']!r}") from exc
            if not RATING_MIN <= val <= RATING_MAX:
                raise DataError(f"{path}: rating {val} outside [{RATING_MIN}, {RATING_MAX}]")
            out.append((rec["user"].strip(), rec["item"].strip(), val))
    return out


def read_users(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"user", "gender", "age_group"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header user,gender,age_group")
        return [UserRecord(r["user"].strip(), r["gender"].strip(), r["age_group"].strip()) for r in reader]


def _sort_ids(ids):
    ids = set(ids)
    try:
        return sorted(ids, key=lambda s: (0, int(s)))
    except ValueError:
        return sorted(ids)


def build_dataset(ratings: list, users: list, test_per_user: int = 10, seed: int = 0, interactions: bool = False) -> RatingsDataset:
    """Index users and items, hold out ``test_per_user`` ratings per user, dummy-code covariates.

    Held-out cells are sampled uniformly per user from a generator seeded by
    ``seed``. Every user needs more than ``test_per_user`` ratings and every
    item at least one training rating.
    """
    user_map = {u.user: u for u in users}
    missing = sorted({r[0] for r in ratings} - set(user_map))
    if missing:
        raise DataError(f"ratings reference users without covariates: {missing[:5]}")
    user_ids = _sort_ids(r[0] for r in ratings)
    item_ids = _sort_ids(r[1] for r in ratings)
    urow = {u: k for k, u in enumerate(user_ids)}
    icol = {it: k for k, it in enumerate(item_ids)}
    by_user: dict = {}
    seen = set()
    for u, it, v in ratings:
        cell = (urow[u], icol[it])
        if cell in seen:
            raise DataError(f"duplicate rating for user {u} item {it}")
        seen.add(cell)
        by_user.setdefault(urow[u], []).append((cell[0], cell[1], v))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2])))
    train, test = [], []
    for row in range(len(user_ids)):
        cells = sorted(by_user[row], key=lambda t: t[1])
        if len(cells) <= test_per_user:
            raise DataError(f"user {user_ids[row]} has {len(cells)} ratings; need more than {test_per_user}")
        held = set(rng.choice(len(cells), size=test_per_user, replace=False).tolist()) if test_per_user else set()
        for k, c in enumerate(cells):
            (test if k in held else train).append(c)
    counts = np.zeros(len(item_ids), dtype=int)
    for _, c, _ in train:
        counts[c] += 1
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"items with no training ratings: {[item_ids[k] for k in empty[:5]]}")
    Y = build_masked(train, len(user_ids), len(item_ids))
    X = encode_covariates([user_map[u] for u in user_ids], interactions)
    if np.linalg.matrix_rank(X.X) < X.d:
        raise DataError("dummy-coded design is rank deficient on the training users")
    return RatingsDataset(Y, sorted(test), X, user_ids, item_ids)
