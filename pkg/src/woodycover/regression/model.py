"""Common train/predict interface over the four regressors."""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..features import (FeatureTable, StandardizationParams, apply_standardization,
                        fit_standardization)
from ..raster import RasterGrid
from .kernels import KernelRidgeState, fit_kernel_ridge, predict_kernel_ridge
from .svr import SVRState, fit_svr, predict_svr
from .trees import (BoostingState, ForestState, Tree, fit_gradient_boosting, fit_random_forest,
                    predict_gradient_boosting, predict_random_forest)

log = logging.getLogger(__name__)

MODEL_FORMAT = "woodycover-model"
MODEL_VERSION = 1

ALGORITHMS = ("RF", "SVR", "KR", "GBT")

DEFAULTS: dict[str, dict[str, Any]] = {
    "RF": {"n_trees": 100, "max_depth": None, "min_leaf": 2, "mtry": None, "bootstrap": True, "seed": 0},
    "SVR": {"C": 10.0, "epsilon": 0.01, "gamma": None, "tol": 1e-3, "max_iter": 100_000},
    "KR": {"alpha": 1e-3, "gamma": None, "kernel": "rbf"},
    "GBT": {"n_rounds": 200, "learning_rate": 0.1, "max_depth": 6, "lambda": 1.0, "gamma_split": 0.0,
            "min_child_weight": 1.0, "seed": 0},
}
# learners that see standardized features
SCALED = {"SVR", "KR"}


class ModelError(ValueError):
    pass


class FeatureMismatchError(ModelError):
    pass


@dataclass
class RegressorSpec:
    """Algorithm tag plus hyperparameters; unspecified values take the defaults."""

    algorithm: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in DEFAULTS:
            raise ModelError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        unknown = set(self.params) - set(DEFAULTS[self.algorithm])
        if unknown:
            raise ModelError(f"unknown {self.algorithm} hyperparameters: {sorted(unknown)}")
        merged = dict(DEFAULTS[self.algorithm])
        merged.update(self.params)
        self.params = merged
        self.validate()

    def validate(self) -> None:
        p = self.params
        positive = {"RF": ["n_trees", "min_leaf"], "SVR": ["C", "tol", "max_iter"], "KR": ["alpha"],
                    "GBT": ["n_rounds", "learning_rate"]}[self.algorithm]
        for name in positive:
            if not p[name] > 0:
                raise ModelError(f"{self.algorithm}.{name} must be positive, got {p[name]}")
        for name in ("gamma", "mtry", "max_depth"):
            if name in p and p[name] is not None and p[name] < 0:
                raise ModelError(f"{self.algorithm}.{name} must be non-negative")
        if self.algorithm == "SVR" and p["epsilon"] < 0:
            raise ModelError("SVR.epsilon must be non-negative")
        if self.algorithm == "GBT" and (p["lambda"] < 0 or p["gamma_split"] < 0 or p["min_child_weight"] < 0):
            raise ModelError("GBT lambda, gamma_split and min_child_weight must be non-negative")

    def with_params(self, **overrides) -> "RegressorSpec":
        params = dict(self.params)
        params.update(overrides)
        return RegressorSpec(self.algorithm, params)

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegressorSpec":
        return cls(d["algorithm"], dict(d.get("params", {})))


@dataclass
class RegressorModel:
    spec: RegressorSpec
    feature_names: list[str]
    state: Any
    standardization: StandardizationParams | None = None
    info: dict = field(default_factory=dict)

    @property
    def algorithm(self) -> str:
        return self.spec.algorithm

    @property
    def converged(self) -> bool:
        return bool(self.info.get("converged", True))


def _gamma(params, n_features):
    g = params.get("gamma")
    if g is None:
        return 1.0 / n_features if n_features > 0 else 1.0
    return float(g)


def fit_rows(X, y, feature_names: Sequence[str], spec: RegressorSpec) -> RegressorModel:
    """Train ``spec`` on a raw predictor matrix."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or X.shape[1] != len(feature_names):
        raise ModelError(f"inconsistent training shapes X{X.shape}, y{y.shape}, {len(feature_names)} names")
    if len(y) < 1:
        raise ModelError("no training rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ModelError("non-finite training data")
    p = spec.params
    info: dict = {"n_train": int(len(y))}
    scaler = None
    if spec.algorithm in SCALED:
        scaler = fit_standardization(X, feature_names=list(feature_names))
        Z = apply_standardization(scaler, X)
        info["removed_features"] = list(scaler.removed)
        gamma = _gamma(p, Z.shape[1])
        info["gamma"] = gamma
        if spec.algorithm == "KR":
            state = fit_kernel_ridge(Z, y, p["alpha"], gamma, p.get("kernel", "rbf"))
            info["jitter"] = state.jitter
        else:
            state = fit_svr(Z, y, p["C"], p["epsilon"], gamma, p["tol"], int(p["max_iter"]))
            info.update(converged=state.converged, n_iter=state.n_iter, max_violation=state.max_violation)
    elif spec.algorithm == "RF":
        state = fit_random_forest(X, y, int(p["n_trees"]), p["max_depth"], int(p["min_leaf"]), p["mtry"],
                                  bool(p["bootstrap"]), int(p["seed"]))
    else:
        state = fit_gradient_boosting(X, y, int(p["n_rounds"]), float(p["learning_rate"]), p["max_depth"],
                                      float(p["lambda"]), float(p["gamma_split"]),
                                      float(p["min_child_weight"]), int(p["seed"]))
        info["train_loss"] = state.train_loss
    return RegressorModel(spec, list(feature_names), state, scaler, info)


def _align(model: RegressorModel, rows, feature_names: Sequence[str] | None) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if feature_names is None:
        feature_names = model.feature_names
    feature_names = list(feature_names)
    if feature_names == model.feature_names:
        return rows
    if sorted(feature_names) != sorted(model.feature_names) or len(set(feature_names)) != len(feature_names):
        missing = sorted(set(model.feature_names) - set(feature_names))[:5]
        extra = sorted(set(feature_names) - set(model.feature_names))[:5]
        raise FeatureMismatchError(f"feature names differ from training (missing {missing}, unexpected {extra})")
    pos = {n: i for i, n in enumerate(feature_names)}
    return rows[:, [pos[n] for n in model.feature_names]]


def predict_rows(model: RegressorModel, rows, feature_names: Sequence[str] | None = None,
                 chunk: int = 4096) -> np.ndarray:
    """Raw (unclipped) predictions; columns are matched to training by name."""
    X = _align(model, rows, feature_names)
    if X.shape[1] != len(model.feature_names):
        raise FeatureMismatchError(f"{X.shape[1]} columns for {len(model.feature_names)} training features")
    if model.standardization is not None:
        X = apply_standardization(model.standardization, X)
    out = np.empty(len(X))
    for s in range(0, len(X), chunk):
        out[s:s + chunk] = _predict_state(model, X[s:s + chunk])
    return out


def _predict_state(model, X):
    st = model.state
    if isinstance(st, KernelRidgeState):
        return predict_kernel_ridge(st, X)
    if isinstance(st, SVRState):
        return predict_svr(st, X)
    if isinstance(st, ForestState):
        return predict_random_forest(st, X)
    if isinstance(st, BoostingState):
        return predict_gradient_boosting(st, X)
    raise ModelError(f"unsupported model state {type(st).__name__}")


def predict(model: RegressorModel, table: FeatureTable) -> np.ndarray:
    return predict_rows(model, table.rows, table.feature_names)


# -- grid search -------------------------------------------------------------

@dataclass
class GridSearch:
    """Exhaustive search over ``grid`` (name -> candidate values) by k-fold CV RMSE."""

    grid: dict
    folds: int = 5
    seed: int = 0

    def candidates(self) -> list[dict]:
        names = list(self.grid)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.grid[n] for n in names))]

    def to_dict(self) -> dict:
        return {"grid": {k: list(v) for k, v in self.grid.items()}, "folds": self.folds, "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "GridSearch":
        return cls({k: list(v) for k, v in d["grid"].items()}, int(d.get("folds", 5)), int(d.get("seed", 0)))


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if not 2 <= k <= n:
        raise ModelError(f"cannot make {k} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def cv_rmse(X, y, feature_names, spec: RegressorSpec, folds: Sequence[np.ndarray]) -> float:
    """Mean over folds of the held-out RMSE."""
    n = len(y)
    scores = []
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        m = fit_rows(X[train], y[train], feature_names, spec)
        resid = predict_rows(m, X[test]) - y[test]
        scores.append(math.sqrt(float(np.mean(resid ** 2))))
    return float(np.mean(scores))


def train(table: FeatureTable, spec: RegressorSpec, search: GridSearch | None = None) -> RegressorModel:
    """Fit ``spec`` on the table; with ``search``, pick parameters by CV first and refit on all rows."""
    if search is None:
        model = fit_rows(table.rows, table.targets, table.feature_names, spec)
    else:
        folds = kfold_indices(len(table), search.folds, search.seed)
        results = []
        for cand in search.candidates():
            s = spec.with_params(**cand)
            results.append((cv_rmse(table.rows, table.targets, table.feature_names, s, folds), cand))
        best_score, best = min(results, key=lambda r: r[0])  # first wins on ties
        model = fit_rows(table.rows, table.targets, table.feature_names, spec.with_params(**best))
        model.info["grid_search"] = {"chosen": best, "cv_rmse": best_score,
                                     "results": [{"params": c, "cv_rmse": r} for r, c in results]}
    model.info["target_class"] = table.target_class
    model.info["experiment"] = table.experiment
    return model


# -- map prediction ----------------------------------------------------------

@dataclass
class MapPrediction:
    grid: RasterGrid
    values: np.ndarray  # float64, NaN where invalid
    n_clipped_low: int
    n_clipped_high: int

    @property
    def n_clipped(self) -> int:
        return self.n_clipped_low + self.n_clipped_high


def predict_map(model: RegressorModel, enmap: RasterGrid, stm: RasterGrid | None = None,
                band_name: str | None = None) -> MapPrediction:
    """Per-cell cover prediction clipped to [0, 1].

    Cells with any invalid predictor are invalid in the output.
    """
    names = list(enmap.band_names)
    blocks = [enmap.values.reshape(enmap.n_bands, -1)]
    valid = enmap.valid_mask.ravel().copy()
    if stm is not None:
        if stm.geometry != enmap.geometry:
            raise ModelError("STM cube must be resampled to the EnMAP grid before prediction")
        names += list(stm.band_names)
        blocks.append(stm.values.reshape(stm.n_bands, -1))
        valid &= stm.valid_mask.ravel()
    if sorted(names) != sorted(model.feature_names):
        raise FeatureMismatchError("raster bands do not match the model's training features")
    X = np.concatenate(blocks, axis=0).T.astype(np.float64)
    valid &= np.all(np.isfinite(X), axis=1)
    raw = np.full(X.shape[0], np.nan)
    idx = np.flatnonzero(valid)
    if idx.size:
        raw[idx] = predict_rows(model, X[idx], names)
    low = int(np.sum(raw[idx] < 0))
    high = int(np.sum(raw[idx] > 1))
    clipped = np.where(valid, np.clip(raw, 0.0, 1.0), np.nan)
    shape = enmap.geometry.shape
    band = band_name or f"FWC_{model.info.get('target_class', 'target')}"
    grid = RasterGrid(enmap.geometry, np.where(valid, clipped, 0.0).reshape((1,) + shape),
                      valid.reshape(shape), [band.replace(" ", "_")], dtype="f32")
    if low or high:
        log.info("clipped %d predictions below 0 and %d above 1", low, high)
    return MapPrediction(grid, clipped.reshape(shape), low, high)


# -- serialization -------------------------------------------------------------

def _state_to_dict(state) -> dict:
    if isinstance(state, KernelRidgeState):
        return {"type": "KR", "support": state.support.tolist(), "dual_coef": state.dual_coef.tolist(),
                "gamma": state.gamma, "kernel": state.kernel, "jitter": state.jitter}
    if isinstance(state, SVRState):
        return {"type": "SVR", "support": state.support.tolist(), "beta": state.beta.tolist(),
                "bias": state.bias, "gamma": state.gamma, "converged": state.converged,
                "n_iter": state.n_iter, "max_violation": state.max_violation, "kernel": state.kernel}
    if isinstance(state, ForestState):
        return {"type": "RF", "trees": [t.to_dict() for t in state.trees]}
    if isinstance(state, BoostingState):
        return {"type": "GBT", "base_score": state.base_score, "learning_rate": state.learning_rate,
                "trees": [t.to_dict() for t in state.trees], "train_loss": list(state.train_loss)}
    raise ModelError(f"cannot serialize {type(state).__name__}")


def _support(rows, n_features):
    return np.asarray(rows, dtype=np.float64).reshape(-1, n_features)


def _state_from_dict(d: dict, n_features: int):
    kind = d["type"]
    if kind == "KR":
        return KernelRidgeState(_support(d["support"], n_features), np.asarray(d["dual_coef"], dtype=np.float64),
                                d["gamma"], d["kernel"], d["jitter"])
    if kind == "SVR":
        return SVRState(_support(d["support"], n_features), np.asarray(d["beta"], dtype=np.float64), d["bias"],
                        d["gamma"], d["converged"], d["n_iter"], d["max_violation"], d["kernel"])
    if kind == "RF":
        return ForestState([Tree.from_dict(t) for t in d["trees"]])
    if kind == "GBT":
        return BoostingState(d["base_score"], d["learning_rate"], [Tree.from_dict(t) for t in d["trees"]],
                             list(d["train_loss"]))
    raise ModelError(f"unknown model state type {kind!r}")


def model_to_dict(model: RegressorModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": model.spec.to_dict(),
        "feature_names": list(model.feature_names),
        "standardization": None if model.standardization is None else model.standardization.to_dict(),
        "state": _state_to_dict(model.state),
        "info": model.info,
    }


def model_from_dict(d: dict) -> RegressorModel:
    if d.get("format") != MODEL_FORMAT:
        raise ModelError("not a woodycover model file")
    if d.get("version") != MODEL_VERSION:
        raise ModelError(f"model version {d.get('version')} is not supported (expected {MODEL_VERSION})")
    scaler = None if d["standardization"] is None else StandardizationParams.from_dict(d["standardization"])
    n_model_features = len(scaler.kept) if scaler is not None else len(d["feature_names"])
    return RegressorModel(RegressorSpec.from_dict(d["spec"]), list(d["feature_names"]),
                          _state_from_dict(d["state"], n_model_features), scaler, dict(d["info"]))


def save_model(model: RegressorModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n")


def load_model(path) -> RegressorModel:
    return model_from_dict(json.loads(Path(path).read_text()))
