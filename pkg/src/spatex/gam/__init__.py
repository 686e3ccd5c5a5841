"""Generalised additive models for the GEV parameters."""

from .crossval import CVResult, FoldAssignment, cv_score, forward_select, make_folds, select_smoothing
from .fitting import ConvergenceError, MarginalFit, fit, xi_link, xi_link_inv
from .formula import PARAMS, DesignMatrices, ModelFormula, build_design, load_formulas

__all__ = [
    "CVResult", "ConvergenceError", "DesignMatrices", "FoldAssignment", "MarginalFit", "ModelFormula", "PARAMS",
    "build_design", "cv_score", "fit", "forward_select", "load_formulas", "make_folds", "select_smoothing",
    "xi_link", "xi_link_inv",
]
