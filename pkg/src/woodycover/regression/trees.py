"""Exact greedy regression trees: random forest (variance reduction) and
second-order gradient boosting on squared error."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

VARIANCE = "variance"
NEWTON = "newton"
# gains below this fraction of the parent score are rounding noise
GAIN_RTOL = 1e-12


class Split(NamedTuple):
    feature: int
    threshold: float
    gain: float


def _midpoint(a: float, b: float) -> float:
    t = a + (b - a) / 2.0
    return a if t >= b else t


def best_split(X: np.ndarray, targets: np.ndarray, features: Sequence[int] | None = None,
               criterion: str = VARIANCE, *, hessians: np.ndarray | None = None, min_leaf: int = 1,
               reg_lambda: float = 1.0, gamma_split: float = 0.0,
               min_child_weight: float = 0.0) -> Split | None:
    """Best axis-aligned split of the rows in ``X``.

    ``criterion="variance"``: ``targets`` are responses and the gain is the
    drop in sum of squares, ``N Var(parent) - N_L Var(L) - N_R Var(R)``.

    ``criterion="newton"``: ``targets`` are gradients, ``hessians`` their
    second derivatives (default 1) and the gain is
    ``1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)] - gamma_split``.

    Thresholds are midpoints between consecutive distinct values; rows with
    ``x <= threshold`` go left. Ties go to the lowest feature index, then the
    lowest threshold. Returns None when no split has positive gain.
    """
    X = np.asarray(X, dtype=np.float64)
    g = np.asarray(targets, dtype=np.float64)
    n = len(g)
    if features is None:
        features = range(X.shape[1])
    features = np.sort(np.asarray(list(features), dtype=np.int64))
    if n < 2 or len(features) == 0:
        return None
    if criterion == VARIANCE:
        if np.ptp(g) == 0:
            return None
        h = np.ones(n)
        g = g - g.mean()
        lam = 0.0
    elif criterion == NEWTON:
        h = np.ones(n) if hessians is None else np.asarray(hessians, dtype=np.float64)
        lam = float(reg_lambda)
    else:
        raise ValueError(f"unknown split criterion {criterion!r}")

    Xs = X[:, features]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR, HR = G - GL, H - HL
    admissible = xs[1:] > xs[:-1]
    if criterion == VARIANCE:
        nl = np.arange(1, n)[:, None]
        admissible &= (nl >= min_leaf) & (n - nl >= min_leaf)
        parent = G * G / H
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL * GL / HL + GR * GR / HR - parent
        scale = float(np.dot(g, g))
    else:
        admissible &= (HL >= min_child_weight) & (HR >= min_child_weight)
        nl = np.arange(1, n)[:, None]
        admissible &= (nl >= min_leaf) & (n - nl >= min_leaf)
        parent = G * G / (H + lam)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma_split
        scale = 0.5 * float(np.dot(g, g) / max(h.min(), 1e-300))
    gain = np.where(admissible & np.isfinite(gain), gain, -np.inf)
    best = gain.max()
    if not best > GAIN_RTOL * max(scale, 1e-300):
        return None
    # feature-major scan so that near-ties resolve to lowest feature, then position
    near = gain.T >= best - GAIN_RTOL * max(abs(best), scale)
    fi, pos = divmod(int(np.argmax(near.ravel())), n - 1)
    thr = _midpoint(xs[pos, fi], xs[pos + 1, fi])
    return Split(int(features[fi]), float(thr), float(gain[pos, fi]))


@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def _add(self, value=0.0) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def freeze(self) -> "Tree":
        self._arrays = (
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
        )
        return self

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "_arrays"):
            self.freeze()
        feat, thr, left, right, value = self._arrays
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = feat[node]
            internal = f >= 0
            if not internal.any():
                return value[node]
            go_left = X[rows, np.maximum(f, 0)] <= thr[node]
            node = np.where(internal, np.where(go_left, left[node], right[node]), node)

    def to_dict(self) -> dict:
        return {"feature": list(map(int, self.feature)), "threshold": list(map(float, self.threshold)),
                "left": list(map(int, self.left)), "right": list(map(int, self.right)),
                "value": list(map(float, self.value))}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(list(d["feature"]), list(d["threshold"]), list(d["left"]), list(d["right"]),
                   list(d["value"])).freeze()

    def structure(self) -> tuple:
        return (tuple(self.feature), tuple(self.threshold), tuple(self.left), tuple(self.right),
                tuple(self.value))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def node_features(seed: int, node: int, p: int, mtry: int) -> np.ndarray:
    """Candidate features for one node: the ``mtry`` lowest hash keys, ascending."""
    if mtry >= p:
        return np.arange(p)
    counters = np.uint64(node) * np.uint64(p) + np.arange(p, dtype=np.uint64)
    keys = _splitmix64(np.uint64(seed) + _splitmix64(counters))
    return np.sort(np.argsort(keys, kind="stable")[:mtry])


def grow_reference(X, targets, hessians, sample_idx, criterion, *, max_depth=None, min_leaf=1,
                   mtry=None, seed=0, reg_lambda=0.0, gamma_split=0.0, min_child_weight=0.0) -> Tree:
    """Straightforward tree growth calling :func:`best_split` at every node.

    Slow; kept as the executable definition the compiled builder is checked
    against.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    h = np.ones(len(t)) if hessians is None else np.asarray(hessians, dtype=np.float64)
    p = X.shape[1]
    mtry = p if mtry is None else min(max(1, int(mtry)), p)
    tree = Tree()
    root = tree._add()
    stack = [(root, np.asarray(sample_idx, dtype=np.int64), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if criterion == VARIANCE:
            tree.value[node] = float(t[idx].mean())
        else:
            tree.value[node] = newton_leaf_weight(t[idx].sum(), h[idx].sum(), reg_lambda)
        if (max_depth is not None and depth >= max_depth) or p == 0:
            continue
        split = best_split(X[idx], t[idx], node_features(seed, node, p, mtry), criterion,
                           hessians=h[idx], min_leaf=min_leaf, reg_lambda=reg_lambda,
                           gamma_split=gamma_split, min_child_weight=min_child_weight)
        if split is None:
            continue
        go_left = X[idx, split.feature] <= split.threshold
        tree.feature[node] = split.feature
        tree.threshold[node] = split.threshold
        tree.left[node] = lnode = tree._add()
        tree.right[node] = rnode = tree._add()
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    return tree.freeze()


def grow_compiled(X, targets, hessians, sample_idx, criterion, *, max_depth=None, min_leaf=1,
                  mtry=None, seed=0, reg_lambda=0.0, gamma_split=0.0, min_child_weight=0.0,
                  presorted=None) -> Tree:
    """Same contract as :func:`grow_reference`, compiled and presorted.

    ``presorted`` may hold ``argsort(X[sample_idx], axis=0).T`` to reuse
    across calls on the same rows; it is not modified.
    """
    from . import _treebuild

    X = np.asarray(X, dtype=np.float64)
    idx = np.asarray(sample_idx, dtype=np.int64)
    Xb = np.ascontiguousarray(X[idx])
    t = np.ascontiguousarray(np.asarray(targets, dtype=np.float64)[idx])
    if hessians is None or criterion == VARIANCE:
        h = np.ones(len(idx))
    else:
        h = np.ascontiguousarray(np.asarray(hessians)[idx], dtype=np.float64)
    m, p = Xb.shape
    if p == 0:
        tree = Tree()
        tree._add(t.mean() if criterion == VARIANCE else newton_leaf_weight(t.sum(), h.sum(), reg_lambda))
        return tree.freeze()
    mtry = p if mtry is None else min(max(1, int(mtry)), p)
    if presorted is None:
        order = np.ascontiguousarray(np.argsort(Xb, axis=0, kind="stable").T)
    else:
        order = presorted.copy()
    crit = _treebuild.VARIANCE_CODE if criterion == VARIANCE else _treebuild.NEWTON_CODE
    depth = np.iinfo(np.int64).max if max_depth is None else int(max_depth)
    feat, thr, left, right, value = _treebuild.build_tree(
        Xb, t, h, order, np.uint64(seed), int(mtry), depth, int(min_leaf), float(min_child_weight),
        float(reg_lambda), float(gamma_split), crit)
    return Tree(feat.tolist(), thr.tolist(), left.tolist(), right.tolist(), value.tolist()).freeze()


ENGINES = {"compiled": grow_compiled, "reference": grow_reference}


def tree_seed(seed: int, index: int) -> int:
    """Independent 64-bit stream key per (seed, tree index); identical in serial
    and parallel runs."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def fit_cart(X, y, *, max_depth=None, min_leaf: int = 1, mtry: int | None = None, seed: int = 0,
             sample_idx=None, engine: str = "compiled") -> Tree:
    """Variance-reduction regression tree; leaf value = mean response."""
    idx = np.arange(len(y)) if sample_idx is None else sample_idx
    return ENGINES[engine](X, y, None, idx, VARIANCE, max_depth=max_depth, min_leaf=max(1, int(min_leaf)),
                           mtry=mtry, seed=seed)


@dataclass
class ForestState:
    trees: list


def fit_random_forest(X, y, n_trees: int = 100, max_depth=None, min_leaf: int = 2, mtry=None,
                      bootstrap: bool = True, seed: int = 0, engine: str = "compiled") -> ForestState:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if mtry is None:
        mtry = max(1, math.ceil(p / 3))
    trees = []
    for t in range(int(n_trees)):
        key = tree_seed(seed, t)
        if bootstrap:
            idx = np.random.default_rng(key).integers(0, n, size=n)
        else:
            idx = np.arange(n)
        trees.append(fit_cart(X, y, max_depth=max_depth, min_leaf=min_leaf, mtry=mtry, seed=key,
                              sample_idx=idx, engine=engine))
    return ForestState(trees)


def predict_random_forest(state: ForestState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    total = np.zeros(len(X))
    for tree in state.trees:
        total += tree.predict(X)
    return total / len(state.trees)


def newton_leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    """Optimal leaf weight -G / (H + lambda)."""
    return -G / (H + reg_lambda)


@dataclass
class BoostingState:
    base_score: float
    learning_rate: float
    trees: list
    train_loss: list = field(default_factory=list)


def fit_gradient_boosting(X, y, n_rounds: int = 200, learning_rate: float = 0.1, max_depth: int = 6,
                          reg_lambda: float = 1.0, gamma_split: float = 0.0, min_child_weight: float = 1.0,
                          seed: int = 0, engine: str = "compiled") -> BoostingState:
    """Squared-error boosting with gradients ``pred - y`` and unit hessians.

    ``seed`` is accepted for interface symmetry; with no row or column
    subsampling the fit is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    base = float(y.mean())
    pred = np.full(n, base)
    h = np.ones(n)
    idx = np.arange(n)
    kwargs = dict(max_depth=max_depth, reg_lambda=reg_lambda, gamma_split=gamma_split,
                  min_child_weight=min_child_weight)
    if engine == "compiled" and p > 0:
        kwargs["presorted"] = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    grow = ENGINES[engine]
    trees = []
    loss = [float(np.sum((y - pred) ** 2))]
    for _ in range(int(n_rounds)):
        g = pred - y
        tree = grow(X, g, h, idx, NEWTON, **kwargs)
        trees.append(tree)
        pred = pred + learning_rate * tree.predict(X)
        loss.append(float(np.sum((y - pred) ** 2)))
    return BoostingState(base, float(learning_rate), trees, loss)


def predict_gradient_boosting(state: BoostingState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    pred = np.full(len(X), state.base_score)
    for tree in state.trees:
        pred = pred + state.learning_rate * tree.predict(X)
    return pred
