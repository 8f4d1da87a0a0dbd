"""Regression engines: local GP, fully-connected network and LSTM with a shared trainer."""

from .io import load, read_extra, save
from .model import EarlyStopping, TrainedRegressor, fit, grad_check, predict, predict_variance
from .spec import FCSpec, GPSpec, LSTMSpec, RegressorSpec, TrainSpec

__all__ = [
    "EarlyStopping", "FCSpec", "GPSpec", "LSTMSpec", "RegressorSpec", "TrainSpec", "TrainedRegressor",
    "fit", "grad_check", "load", "predict", "predict_variance", "read_extra", "save",
]
