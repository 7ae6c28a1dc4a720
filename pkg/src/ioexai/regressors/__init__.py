"""Interpretable regressors: tree ensembles and least squares."""

from .ensemble import (
    KINDS,
    EnsembleModel,
    FitConfig,
    derive_seeds,
    fit_ensemble,
    predict,
    signed_residual_mean,
    training_loss,
    weighted_median,
)
from .io import ModelFormatError, ModelVersionError, dumps, load_model, loads, save_model
from .tree import FitError, Tree, fit_tree

__all__ = [
    "KINDS",
    "EnsembleModel",
    "FitConfig",
    "FitError",
    "ModelFormatError",
    "ModelVersionError",
    "Tree",
    "derive_seeds",
    "dumps",
    "fit_ensemble",
    "fit_tree",
    "load_model",
    "loads",
    "predict",
    "save_model",
    "signed_residual_mean",
    "training_loss",
    "weighted_median",
]
