"""Random forest, RBF support vector regression, kernel ridge and boosted trees."""
from .kernels import NumericalError, rbf_kernel
from .model import (ALGORITHMS, FeatureMismatchError, GridSearch, MapPrediction, ModelError,
                    RegressorModel, RegressorSpec, fit_rows, load_model, predict, predict_map,
                    predict_rows, save_model, train)

__all__ = [
    "ALGORITHMS", "FeatureMismatchError", "GridSearch", "MapPrediction", "ModelError", "NumericalError",
    "RegressorModel", "RegressorSpec", "fit_rows", "load_model", "predict", "predict_map", "predict_rows",
    "rbf_kernel", "save_model", "train",
]
