"""Histogram-based gradient-boosted trees for binary classification."""
from .binning import BinMapper, fit_bins
from .ensemble import (
    Ensemble,
    Hyperparameters,
    ModelFormatError,
    load_model,
    log_loss,
    save_model,
    train,
)

predict_proba = Ensemble.predict_proba

__all__ = [
    "BinMapper",
    "Ensemble",
    "Hyperparameters",
    "ModelFormatError",
    "fit_bins",
    "load_model",
    "log_loss",
    "predict_proba",
    "save_model",
    "train",
]
