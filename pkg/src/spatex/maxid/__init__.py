"""Max-infinitely-divisible dependence model with Gaussian profiles."""

from .kernel import (
    NumericError,
    exponent_V,
    exponent_V_hermite,
    kappa_bar,
    kappa_bar_inv,
    marginal_G,
    marginal_G_inv,
    rho,
    single_site,
)
from .model import (
    FitError,
    MaxIdFit,
    MaxIdParams,
    PairData,
    PairSet,
    clic,
    copula_cdf,
    fit,
    model_chi,
    pair_loglik,
    pll,
)

__all__ = [
    "FitError", "MaxIdFit", "MaxIdParams", "NumericError", "PairData", "PairSet", "clic", "copula_cdf",
    "exponent_V", "exponent_V_hermite", "fit", "kappa_bar", "kappa_bar_inv", "marginal_G", "marginal_G_inv",
    "model_chi", "pair_loglik", "pll", "rho", "single_site",
]
