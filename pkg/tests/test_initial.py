import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covmc.data import Covariates, MaskedMatrix
from covmc.errors import RankDeficientColumn, RankTooLarge
from covmc.initial import build_w, ols_beta_init, svd_init
from covmc.linalg import gram_solve, top_svd
from covmc.propensity import PropensityFit


def _power_iteration_oracle(W, k, iters=5000):
    """Leading singular values by power iteration on W'W with deflation."""
    rng = np.random.default_rng(123)
    A = W.T @ W
    vals = []
    for _ in range(k):
        v = rng.standard_normal(A.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = A @ v
            lam_new = float(v @ w)
            v = w / np.linalg.norm(w)
            if abs(lam_new - lam) < 1e-15 * max(1.0, lam_new):
                break
            lam = lam_new
        lam = float(v @ A @ v)
        vals.append(np.sqrt(lam))
        A = A - lam * np.outer(v, v)
    return np.array(vals)


def test_ols_noiseless_recovers_beta():
    rng = np.random.default_rng(0)
    X = Covariates(np.column_stack([np.ones(20), rng.standard_normal((20, 2))]))
    beta = rng.standard_normal((6, 3))
    Y = MaskedMatrix(X.X @ beta.T, np.ones((20, 6)))
    np.testing.assert_allclose(ols_beta_init(Y, X), beta, atol=1e-10)


def test_ols_intercept_only_is_mean():
    X = Covariates(np.ones((4, 1)))
    Y = MaskedMatrix(np.array([[1.0], [2.0], [9.0], [3.0]]), np.array([[1], [1], [0], [1]]))
    assert ols_beta_init(Y, X)[0, 0] == pytest.approx(2.0)


@given(st.integers(0, 2**31 - 1))
def test_ols_matches_pinv_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = 5, 4
    X = Covariates(np.column_stack([np.ones(n), rng.standard_normal(n)]))
    mask = rng.random((n, m)) < 0.6
    mask[:2] = True
    Y = MaskedMatrix(rng.standard_normal((n, m)), mask)
    got = ols_beta_init(Y, X)
    for j in range(m):
        rows = np.flatnonzero(mask[:, j])
        ref = np.linalg.pinv(X.X[rows]) @ Y.values[rows, j]
        np.testing.assert_allclose(got[j], ref, atol=1e-10)


def test_ols_rank_deficient_column():
    X = Covariates(np.column_stack([np.ones(4), np.arange(4.0)]))
    mask = np.ones((4, 2))
    mask[1:, 1] = 0
    with pytest.raises(RankDeficientColumn) as info:
        ols_beta_init(MaskedMatrix(np.ones((4, 2)), mask), X)
    assert info.value.column == 1


def test_w_examples():
    rng = np.random.default_rng(2)
    X = Covariates(np.column_stack([np.ones(6), rng.standard_normal(6)]))
    beta = rng.standard_normal((5, 2))
    G = rng.standard_normal((6, 5))
    Y = MaskedMatrix(X.X @ beta.T + G, np.ones((6, 5)))
    np.testing.assert_allclose(build_w(Y, X, beta, PropensityFit.known(np.ones(6))), G, atol=1e-12)

    one = MaskedMatrix(np.array([[2.0, 0.0]]), np.array([[1, 0]]))
    W = build_w(one, Covariates(np.ones((1, 1))), np.zeros((2, 1)), PropensityFit.known([0.5]))
    assert W[0, 0] == 4.0 and W[0, 1] == 0.0

    empty = MaskedMatrix(np.zeros((3, 2)), np.zeros((3, 2)))
    assert not build_w(empty, Covariates(np.ones((3, 1))), np.ones((2, 1)), PropensityFit.known(np.full(3, 0.3))).any()


def test_svd_rank_one_exact():
    rng = np.random.default_rng(3)
    u = rng.standard_normal(7)
    v = rng.standard_normal(5)
    W = np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    np.testing.assert_allclose(svd_init(W, 1).gamma, W, atol=1e-10)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_svd_full_rank_reconstruction(n, m, seed):
    W = np.random.default_rng(seed).standard_normal((n, m))
    np.testing.assert_allclose(svd_init(W, min(n, m)).gamma, W, atol=1e-8)


@pytest.mark.parametrize("shape", [(50, 40), (40, 50), (120, 90)])
def test_svd_matches_power_iteration(shape):
    W = np.random.default_rng(4).standard_normal(shape)
    f = svd_init(W, 3)
    np.testing.assert_allclose(f.D, _power_iteration_oracle(W, 3), rtol=1e-6)
    np.testing.assert_allclose(f.U.T @ f.U, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(f.V.T @ f.V, np.eye(3), atol=1e-10)


def test_partial_and_full_svd_agree():
    # the eigensolver path (q >= 40, 4k <= q) against LAPACK's full SVD
    W = np.random.default_rng(5).standard_normal((200, 60))
    U, d, _ = top_svd(W, 5)
    U2, d2, _ = np.linalg.svd(W, full_matrices=False)
    np.testing.assert_allclose(d, d2[:5], rtol=1e-10)
    np.testing.assert_allclose(np.abs(U.T @ U2[:, :5]), np.eye(5), atol=1e-8)


def test_factor_normalisation_and_signs():
    W = np.random.default_rng(6).standard_normal((30, 20))
    f = svd_init(W, 4)
    n = W.shape[0]
    np.testing.assert_allclose(f.L_hat.T @ f.L_hat / n, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(f.L_hat @ f.F_hat.T, f.gamma, atol=1e-12)
    idx = np.argmax(np.abs(f.U), axis=0)
    assert np.all(f.U[idx, np.arange(4)] > 0)


def test_svd_rank_too_large():
    with pytest.raises(RankTooLarge):
        svd_init(np.ones((3, 2)), 3)


def test_gram_solve_ridges_singular_systems():
    G = np.stack([np.eye(2), np.zeros((2, 2))])
    x, bad = gram_solve(G, np.array([[1.0, 2.0], [0.0, 0.0]]))
    assert bad.tolist() == [False, True]
    np.testing.assert_allclose(x[0], [1.0, 2.0])
    assert np.all(np.isfinite(x))
