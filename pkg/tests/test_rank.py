import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instance
from covmc.als import _f_block, _l_block, objective_fstar
from covmc.data import Covariates, MaskedMatrix, ModelState
from covmc.initial import build_w, ols_beta_init, svd_init
from covmc.propensity import PropensityFit, estimate_propensity
from covmc.rank import fit_fixed_beta, mse_initial_diagnostic, mse_k_g, penalty_h, select_rank


def test_penalty_values():
    # 0.9 * 200^0.1 * sqrt(400 / (40000 * 0.5)) = 0.216202 to six places
    assert penalty_h(200, 200, 0.5) == pytest.approx(0.216202, abs=1e-6)
    assert penalty_h(200, 200, 0.5) == pytest.approx(0.9 * math.exp(0.1 * math.log(200)) * math.sqrt(400 / 20000), rel=1e-12)
    assert penalty_h(200, 200, 0.5, C_h=0.0) == 0.0


@given(st.integers(1, 10**6), st.floats(0.0, 5.0))
def test_penalty_square_case(n, C):
    assert penalty_h(n, n, 1.0, C_h=C) == pytest.approx(C * n**0.1 * math.sqrt(2 / n), rel=1e-12, abs=1e-300)


def _lowrank_full(n=40, m=30, r=2, seed=0):
    rng = np.random.default_rng(seed)
    X = Covariates(np.column_stack([np.ones(n), rng.standard_normal(n)]))
    beta = rng.standard_normal((m, 2))
    G = rng.standard_normal((n, r)) @ rng.standard_normal((m, r)).T
    return MaskedMatrix(X.X @ beta.T + G, np.ones((n, m))), X


def test_fixed_beta_noiseless_exact():
    Y, X = _lowrank_full()
    prop = estimate_propensity(Y, X)
    beta = ols_beta_init(Y, X)
    # OLS on a full mask absorbs the part of Gamma explained by X; the rest is exactly low rank
    st_ = fit_fixed_beta(Y, X, beta, 2, 1, prop=prop)
    assert mse_k_g(st_, Y, X) <= 1e-12


def test_fixed_beta_one_step_composition(instance):
    Y, X, _ = instance
    prop = estimate_propensity(Y, X)
    beta = ols_beta_init(Y, X)
    f = svd_init(build_w(Y, X, beta, prop), 2)
    got = fit_fixed_beta(Y, X, beta, 2, 1, svd=f)
    s = ModelState(beta, f.L_hat, f.F_hat)
    s = s.replace(F=_f_block(s, Y, X, 1e-8)[0])
    s = s.replace(L=_l_block(s, Y, X, 1e-8)[0])
    assert np.array_equal(got.L, s.L) and np.array_equal(got.F, s.F)
    np.testing.assert_array_equal(got.beta, beta)


@given(st.integers(0, 2**31 - 1))
def test_fixed_beta_descends(seed):
    Y, X, _ = random_instance(seed)
    prop = estimate_propensity(Y, X)
    beta = ols_beta_init(Y, X)
    f = svd_init(build_w(Y, X, beta, prop), 3)
    vals = [mse_k_g(fit_fixed_beta(Y, X, beta, 3, g, svd=f), Y, X) for g in range(1, 6)]
    assert np.all(np.diff(vals) <= 1e-9 * np.array(vals[:-1]))


def test_mse_examples(instance):
    Y, X, truth = instance
    assert mse_k_g(truth, Y, X) == pytest.approx(objective_fstar(truth, Y, X) / (Y.n * Y.m))
    vals = np.zeros((3, 3))
    vals[1, 1] = 3.0
    mask = np.zeros((3, 3))
    mask[1, 1] = 1
    s = ModelState(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)))
    assert mse_k_g(s, MaskedMatrix(vals, mask), Covariates(np.ones((3, 1)))) == pytest.approx(1.0)


def test_noiseless_rank_two_selected():
    Y, X = _lowrank_full()
    sel = select_rank(Y, X, estimate_propensity(Y, X), r_bar=5)
    assert sel.r_hat == 2
    assert all(v > 0 for v in np.exp(sel.eic))


def test_single_candidate(instance):
    Y, X, _ = instance
    sel = select_rank(Y, X, estimate_propensity(Y, X), r_bar=1)
    assert sel.r_hat == 1 and sel.candidates == [1]


def test_selection_is_argmin_with_smallest_tie(instance):
    Y, X, _ = instance
    sel = select_rank(Y, X, estimate_propensity(Y, X), r_bar=4)
    k = int(np.argmin(sel.eic))
    assert sel.r_hat == sel.candidates[k]
    assert sel.to_dict()["r_hat"] == sel.r_hat


def test_diagnostic_full_observation_monotone():
    rng = np.random.default_rng(3)
    n, m = 40, 30
    X = Covariates(np.column_stack([np.ones(n), rng.standard_normal(n)]))
    Y = MaskedMatrix(rng.standard_normal((n, m)) + rng.standard_normal((n, 3)) @ rng.standard_normal((3, m)), np.ones((n, m)))
    curve = mse_initial_diagnostic(Y, X, ols_beta_init(Y, X), PropensityFit.known(np.ones(n)), 9)
    assert np.all(np.diff(curve) <= 1e-12)


def test_diagnostic_baseline(instance):
    Y, X, _ = instance
    prop = estimate_propensity(Y, X)
    beta = ols_beta_init(Y, X)
    curve = mse_initial_diagnostic(Y, X, beta, prop, 3)
    R = Y.values - X.X @ beta.T
    mean_sq = np.mean(R[Y.mask == 1] ** 2)
    # with an intercept the fitted propensities reproduce the observed count exactly
    assert curve[0] == pytest.approx(mean_sq * Y.total_observed / (Y.n * Y.m * prop.pi_bar), rel=1e-12)
    assert curve[0] == pytest.approx(mean_sq, rel=1e-9)
