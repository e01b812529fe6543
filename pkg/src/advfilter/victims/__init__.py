"""Victim classifiers: CSP/xDAWN + logistic regression and compact CNNs."""
from advfilter.victims.cnn import PRESETS, CnnArch, CompactCnn
from advfilter.victims.linalg import generalized_eigh, jacobi_eigh
from advfilter.victims.serialize import load_model, save_model
from advfilter.victims.spatial import SpatialFeatureModel, fit_csp, fit_xdawn
from advfilter.victims.training import (
    ModelSpec,
    TrainConfig,
    build_model,
    fit_model,
    frozen,
    parameter_hash,
    predict,
    predict_proba,
    train,
)

__all__ = [
    "PRESETS",
    "CnnArch",
    "CompactCnn",
    "ModelSpec",
    "SpatialFeatureModel",
    "TrainConfig",
    "build_model",
    "fit_csp",
    "fit_model",
    "fit_xdawn",
    "frozen",
    "generalized_eigh",
    "jacobi_eigh",
    "load_model",
    "parameter_hash",
    "predict",
    "predict_proba",
    "save_model",
    "train",
]
