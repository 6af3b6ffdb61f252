import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit, logit

from covmc.data import Covariates
from covmc.errors import SeparationError
from covmc.propensity import (
    AlphaMode,
    PropensityFit,
    binomial_loglik,
    default_alpha_mode,
    estimate_alpha,
    estimate_propensity,
    fit_propensity,
    score,
)
from covmc.simulate import DgpConfig, gen_dgp


def _mask_with_counts(counts, m):
    mask = np.zeros((len(counts), m), dtype=np.int8)
    for i, c in enumerate(counts):
        mask[i, :c] = 1
    return mask


def _grid_oracle(Z, counts, m, lo=-3.0, hi=3.0):
    """Coarse-to-fine 2-d grid search of the binomial log-likelihood."""
    c0 = c1 = 0.0
    span = (hi - lo) / 2
    centre = np.array([(lo + hi) / 2, (lo + hi) / 2])
    while span > 1e-7:
        g = np.linspace(-span, span, 41)
        A, B = np.meshgrid(centre[0] + g, centre[1] + g, indexing="ij")
        eta = A[..., None] * Z[:, 0] + B[..., None] * Z[:, 1]
        ll = np.sum(counts * eta - m * np.logaddexp(0, eta), axis=-1)
        k = np.unravel_index(np.argmax(ll), ll.shape)
        c0, c1 = A[k], B[k]
        centre = np.array([c0, c1])
        span /= 4
    return c0, c1


def test_intercept_only_closed_form():
    m = 50
    mask = _mask_with_counts([20] * 10, m)
    X = Covariates(np.ones((10, 1)))
    fit = fit_propensity(mask, X)
    assert fit.gamma0 == pytest.approx(-0.405465, abs=1e-6)
    assert fit.gamma0 == pytest.approx(logit(0.4), abs=1e-12)
    np.testing.assert_allclose(fit.pi_hat, 0.4, atol=1e-12)


def test_matches_grid_search_oracle():
    m = 1000
    mask = _mask_with_counts([200, 500, 800], m)
    X = Covariates.with_intercept(np.array([-1.0, 0.0, 1.0]))
    fit = fit_propensity(mask, X)
    Z = np.column_stack([np.ones(3), X.xtilde[:, 0]])
    c0, c1 = _grid_oracle(Z, mask.sum(axis=1).astype(float), m)
    assert fit.gamma0 == pytest.approx(c0, abs=1e-4)
    assert fit.gamma1[0] == pytest.approx(c1, abs=1e-4)
    # raw first-order condition
    g = score(np.r_[fit.gamma0, fit.gamma1], Z, mask.sum(axis=1), m)
    assert np.max(np.abs(g)) <= 1e-8


@given(st.integers(0, 2**31 - 1))
def test_score_vanishes_and_probabilities_interior(seed):
    rng = np.random.default_rng(seed)
    n, m = 40, 30
    Xt = rng.standard_normal((n, 2))
    pi = expit(-0.3 + Xt @ np.array([0.4, -0.2]))
    mask = rng.random((n, m)) < pi[:, None]
    if mask.all() or not mask.any():
        return
    X = Covariates.with_intercept(Xt)
    fit = fit_propensity(mask, X)
    assert np.all((fit.pi_hat > 0) & (fit.pi_hat < 1))
    assert fit.grad_norm <= 1e-10
    Z = np.column_stack([np.ones(n), Xt])
    coef = np.r_[fit.gamma0, fit.gamma1]
    # a perturbed coefficient never has a higher likelihood
    base = binomial_loglik(coef, Z, mask.sum(1), m)
    for _ in range(5):
        assert binomial_loglik(coef + 1e-3 * rng.standard_normal(3), Z, mask.sum(1), m) <= base + 1e-9


def test_separation_errors():
    X = Covariates.with_intercept(np.arange(4.0))
    with pytest.raises(SeparationError):
        fit_propensity(np.zeros((4, 5)), X)
    with pytest.raises(SeparationError):
        fit_propensity(np.ones((4, 5)), X)


def test_full_mask_degenerate_fit():
    X = Covariates.with_intercept(np.arange(4.0))
    fit = estimate_propensity(np.ones((4, 5)), X)
    np.testing.assert_array_equal(fit.pi_hat, 1.0)
    assert estimate_alpha(fit, "covariate") == 1.0
    assert estimate_alpha(fit, "constant") == 1.0


def test_estimate_alpha_examples():
    const = PropensityFit(0.0, np.zeros(1), np.full(5, 0.4), 0.4)
    assert estimate_alpha(const, AlphaMode.CONSTANT) == pytest.approx(0.4)
    assert estimate_alpha(const, AlphaMode.COVARIATE) == pytest.approx(1.0)
    assert default_alpha_mode(const) is AlphaMode.COVARIATE
    assert default_alpha_mode(PropensityFit(0.1, np.zeros(0), np.full(5, 0.4), 0.4)) is AlphaMode.CONSTANT


def test_dict_roundtrip():
    fit = PropensityFit(-0.5, np.array([0.1, 0.2]), np.array([0.3, 0.4]), 0.6, 4, 1e-12)
    back = PropensityFit.from_dict(fit.to_dict())
    assert back.gamma0 == fit.gamma0 and np.array_equal(back.gamma1, fit.gamma1)


@pytest.mark.slow
def test_alpha_hat_tracks_generating_rate():
    # DGP2 with alpha_n = 2 log(n) / sqrt(n), n = 400: median relative error under 25%
    cfg = DgpConfig(n=400, m=400, kind="dgp2", C=2.0, seed=11)
    ratios = []
    for rep in range(100):
        draw = gen_dgp(cfg, rep)
        fit = fit_propensity(draw.Y, draw.X)
        ratios.append(estimate_alpha(fit, "covariate") / cfg.alpha_n)
    assert abs(np.median(ratios) - 1.0) < 0.25


def test_perfect_separation_detected():
    x = np.r_[-np.ones(5), np.ones(5)]
    mask = np.zeros((10, 6))
    mask[5:] = 1
    with pytest.raises(SeparationError):
        fit_propensity(mask, Covariates.with_intercept(x))
