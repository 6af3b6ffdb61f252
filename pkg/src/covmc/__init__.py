"""Matrix completion with row covariates under covariate-dependent missingness."""

__version__ = "0.1.0"

from .als import FitConfig, FitTrace, fit_iterative, objective_fstar, update_beta, update_f, update_l
from .bootstrap import ContrastSpec, omega_hat, simultaneous_test, t_stat
from .data import Covariates, MaskedMatrix, ModelState, build_masked, column_system
from .inference import plugin_moments, se_gamma, se_theta, z_test_beta
from .initial import build_w, ols_beta_init, svd_init
from .pca import fit_iterative_pca, pca_impute_step
from .propensity import AlphaMode, PropensityFit, estimate_alpha, estimate_propensity, fit_propensity
from .rank import penalty_h, select_rank
from .simulate import DgpConfig, gen_dgp

__all__ = [
    "AlphaMode",
    "ContrastSpec",
    "Covariates",
    "DgpConfig",
    "FitConfig",
    "FitTrace",
    "MaskedMatrix",
    "ModelState",
    "PropensityFit",
    "build_masked",
    "build_w",
    "column_system",
    "estimate_alpha",
    "estimate_propensity",
    "fit_iterative",
    "fit_iterative_pca",
    "fit_propensity",
    "gen_dgp",
    "objective_fstar",
    "ols_beta_init",
    "omega_hat",
    "pca_impute_step",
    "penalty_h",
    "plugin_moments",
    "se_gamma",
    "se_theta",
    "select_rank",
    "simultaneous_test",
    "svd_init",
    "t_stat",
    "update_beta",
    "update_f",
    "update_l",
    "z_test_beta",
]
