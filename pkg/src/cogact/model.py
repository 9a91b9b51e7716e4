"""Gradient-boosted decision trees, written from scratch.

Second-order boosting: every round fits one regression tree per output to
the gradient/hessian of the weighted loss, growing level by level with an
exact greedy search over sorted feature values. Split score and leaf weight
use the usual regularized forms::

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma
    leaf = -G / (H + lambda)

Missing values (NaN) follow a per-split default branch chosen during
training. Objectives: ``softmax`` (K outputs) and ``logistic`` (1 output).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _tree_kernels as kern
from .errors import CorruptModel, EmptyDataset, FeatureOrderMismatch, LabelOutOfRange, VersionMismatch

MODEL_FORMAT = "cogact-gbt"
MODEL_VERSION = 1
OBJECTIVES = ("softmax", "logistic")
_PRIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class GBTParams:
    n_rounds: int = 50
    learning_rate: float = 0.3
    max_depth: int = 4
    min_child_weight: float = 1.0
    lambda_l2: float = 1.0
    gamma_min_gain: float = 0.0
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_child_weight < 0 or self.lambda_l2 < 0 or self.gamma_min_gain < 0:
            raise ValueError("min_child_weight, lambda_l2 and gamma_min_gain must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")


@dataclass(eq=False)
class Tree:
    """Flat binary tree; node 0 is the root, ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left_missing: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left_missing = np.asarray(self.left_missing, dtype=bool)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=float)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        def rec(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(rec(self.left[node]), rec(self.right[node]))

        return rec(0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left_missing": self.left_missing.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self._arrays(), other._arrays()))

    def _arrays(self):
        return (self.feature, self.threshold, self.left_missing, self.left, self.right, self.value)


@dataclass(eq=False)
class GBTModel:
    objective: str
    n_classes: int
    base_score: np.ndarray
    feature_names: tuple[str, ...]
    params: GBTParams
    trees: list[list[Tree]] = field(default_factory=list)  # per round: one tree per output
    train_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        self.base_score = np.asarray(self.base_score, dtype=float)
        self.feature_names = tuple(self.feature_names)
        self._packed = None

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.objective == "softmax" else 1

    def _pack(self):
        if self._packed is None:
            flat = [t for rnd in self.trees for t in rnd]
            T = len(flat)
            M = max((t.n_nodes for t in flat), default=1)
            feat = np.full((T, M), -1, dtype=np.int64)
            thr = np.zeros((T, M))
            lm = np.zeros((T, M), dtype=bool)
            left = np.zeros((T, M), dtype=np.int64)
            right = np.zeros((T, M), dtype=np.int64)
            value = np.zeros((T, M))
            for j, t in enumerate(flat):
                m = t.n_nodes
                feat[j, :m], thr[j, :m], lm[j, :m] = t.feature, t.threshold, t.left_missing
                left[j, :m], right[j, :m], value[j, :m] = t.left, t.right, t.value
            out = np.array([k for rnd in self.trees for k in range(len(rnd))], dtype=np.int64)
            self._packed = (feat, thr, lm, left, right, value, out)
        return self._packed

    def __eq__(self, other):
        if not isinstance(other, GBTModel):
            return NotImplemented
        return model_to_dict(self) == model_to_dict(other)


# --- objectives --------------------------------------------------------------------


def _softmax(margins: np.ndarray) -> np.ndarray:
    z = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_loss(margins: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean cross-entropy."""
    mx = margins.max(axis=1)
    lse = mx + np.log(np.exp(margins - mx[:, None]).sum(axis=1))
    nll = lse - margins[np.arange(labels.size), labels]
    return float(np.dot(weights, nll) / weights.sum())


def softmax_grad_hess(margins: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Per-sample gradient and diagonal hessian of ``w * CE`` w.r.t. the margins."""
    p = _softmax(margins)
    y = np.zeros_like(p)
    y[np.arange(labels.size), labels] = 1.0
    w = weights[:, None]
    return w * (p - y), w * p * (1.0 - p)


def logistic_loss(margins: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    m = margins.reshape(-1)
    nll = np.maximum(m, 0) - labels * m + np.log1p(np.exp(-np.abs(m)))
    return float(np.dot(weights, nll) / weights.sum())


def logistic_grad_hess(margins: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    p = _sigmoid(margins.reshape(-1))
    g = weights * (p - labels)
    h = weights * p * (1.0 - p)
    return g[:, None], h[:, None]


def _loss(objective, margins, labels, weights):
    if objective == "softmax":
        return softmax_loss(margins, labels, weights)
    return logistic_loss(margins, labels, weights)


def _grad_hess(objective, margins, labels, weights):
    if objective == "softmax":
        return softmax_grad_hess(margins, labels, weights)
    return logistic_grad_hess(margins, labels, weights)


# --- training ----------------------------------------------------------------------


def compute_example_weights(labels) -> np.ndarray:
    """Class-balancing weights ``N / (K_present * n_c)``; mean weight is 1."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyDataset("no examples to weight")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    per_class = labels.size / (classes.size * counts)
    return per_class[inverse]


@dataclass
class _Presorted:
    order: np.ndarray
    svals: np.ndarray
    starts: np.ndarray
    miss: np.ndarray
    mstarts: np.ndarray


def _presort(X: np.ndarray) -> _Presorted:
    n, F = X.shape
    orders, vals, misses = [], [], []
    starts = [0]
    mstarts = [0]
    for f in range(F):
        col = X[:, f]
        nan = np.isnan(col)
        idx = np.flatnonzero(~nan)
        o = idx[np.argsort(col[idx], kind="stable")]
        orders.append(o)
        vals.append(col[o])
        misses.append(np.flatnonzero(nan))
        starts.append(starts[-1] + o.size)
        mstarts.append(mstarts[-1] + misses[-1].size)
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
    return _Presorted(
        cat(orders, np.int64), cat(vals, float), np.array(starts, dtype=np.int64),
        cat(misses, np.int64), np.array(mstarts, dtype=np.int64),
    )


def _base_score(objective: str, labels: np.ndarray, weights: np.ndarray, K: int) -> np.ndarray:
    prior = np.bincount(labels, weights=weights, minlength=K)[:K] / weights.sum()
    prior = np.clip(prior, _PRIOR_FLOOR, 1 - _PRIOR_FLOOR)
    if objective == "softmax":
        return np.log(prior)
    return np.array([np.log(prior[1] / (1 - prior[1]))])


def _grow_trees(X, ps: _Presorted, gh, in_sample, params: GBTParams) -> list[Tree]:
    """Grow one tree per output level by level."""
    n, K = gh.shape[0], gh.shape[1]
    lam, mcw, eta = params.lambda_l2, params.min_child_weight, params.learning_rate
    pos = np.where(in_sample[:, None], 0, -1).astype(np.int64) * np.ones((1, K), dtype=np.int64)
    nodes = [dict(feature=[-1], threshold=[0.0], left_missing=[False], left=[-1], right=[-1], value=[0.0]) for _ in range(K)]
    frontier = [[0] for _ in range(K)]

    for depth in range(params.max_depth + 1):
        S = max(len(fr) for fr in frontier)
        if S == 0:
            break
        G, H = kern.node_totals(gh, pos, S)
        parent = G * G / np.where(H + lam > 0, H + lam, 1.0)
        best_score = parent + 2.0 * params.gamma_min_gain
        best_feat = np.full((K, S), -1, dtype=np.int64)
        best_thr = np.zeros((K, S))
        best_lm = np.zeros((K, S), dtype=bool)
        best_hl = np.zeros((K, S))
        best_hm = np.zeros((K, S), dtype=bool)
        if depth < params.max_depth:
            kern.find_splits(ps.svals, ps.order, ps.starts, ps.miss, ps.mstarts, gh, pos, G, H, lam, mcw,
                             best_score, best_feat, best_thr, best_lm, best_hl, best_hm)

        child_slot = np.zeros((K, S), dtype=np.int64)
        new_frontier = []
        for c in range(K):
            nd = nodes[c]
            nxt = []
            for s, node in enumerate(frontier[c]):
                f = int(best_feat[c, s])
                if f < 0:
                    denom = H[c, s] + lam
                    nd["value"][node] = float(-eta * G[c, s] / denom) if denom > 0 else 0.0
                    continue
                if not best_hm[c, s]:
                    # no missing values seen here: send NaN to the heavier child
                    best_lm[c, s] = best_hl[c, s] >= H[c, s] - best_hl[c, s]
                li = len(nd["feature"])
                for key, val in (("feature", -1), ("threshold", 0.0), ("left_missing", False), ("left", -1), ("right", -1), ("value", 0.0)):
                    nd[key].extend([val, val])
                nd["feature"][node] = f
                nd["threshold"][node] = float(best_thr[c, s])
                nd["left_missing"][node] = bool(best_lm[c, s])
                nd["left"][node] = li
                nd["right"][node] = li + 1
                child_slot[c, s] = len(nxt)
                nxt.extend([li, li + 1])
            new_frontier.append(nxt)
        kern.advance(X, pos, best_feat, best_thr, best_lm, child_slot)
        frontier = new_frontier

    return [Tree(**nd) for nd in nodes]


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return np.ascontiguousarray(X)


def train(
    X,
    labels,
    weights=None,
    params: GBTParams = GBTParams(),
    objective: str = "softmax",
    n_classes: int | None = None,
    feature_names: Sequence[str] | None = None,
) -> GBTModel:
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    X = _as_matrix(X)
    labels = np.asarray(labels)
    n = labels.size
    if n == 0 or X.shape[0] == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if X.shape[0] != n:
        raise ValueError("X and labels differ in length")
    if not np.issubdtype(labels.dtype, np.integer):
        if np.any(labels != np.round(labels)):
            raise LabelOutOfRange("labels must be integer class codes")
        labels = labels.astype(np.int64)
    if objective == "logistic":
        K = 2
    else:
        K = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= K:
        raise LabelOutOfRange(f"labels must lie in [0, {K})")
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (n,) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be non-negative, one per example, with a positive sum")
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(X.shape[1]))
    if len(feature_names) != X.shape[1]:
        raise FeatureOrderMismatch("feature_names does not match the number of columns")

    model = GBTModel(objective, K, _base_score(objective, labels, weights, K), feature_names, params)
    margins = np.tile(model.base_score, (n, 1))
    model.train_loss.append(_loss(objective, margins, labels, weights))
    if params.n_rounds == 0:
        return model

    ps = _presort(X)
    rng = np.random.default_rng(params.seed)
    gh = np.empty((n, model.n_outputs, 2))
    tree_out = np.arange(model.n_outputs, dtype=np.int64)
    for _ in range(params.n_rounds):
        g, h = _grad_hess(objective, margins, labels, weights)
        gh[:, :, 0] = g
        gh[:, :, 1] = h
        in_sample = rng.random(n) < params.subsample if params.subsample < 1 else np.ones(n, dtype=bool)
        trees = _grow_trees(X, ps, gh, in_sample, params)
        model.trees.append(trees)
        single = GBTModel(objective, K, model.base_score, feature_names, params, [trees])
        kern.predict_trees(X, *single._pack()[:-1], tree_out, margins)
        model.train_loss.append(_loss(objective, margins, labels, weights))
    model._packed = None
    return model


# --- prediction --------------------------------------------------------------------


def _input_matrix(model: GBTModel, X, feature_names) -> np.ndarray:
    if hasattr(X, "values") and hasattr(X, "feature_names") and not isinstance(X, np.ndarray):
        feature_names, X = X.feature_names, X.values  # FeatureTable
    elif hasattr(X, "values") and isinstance(getattr(X, "values"), Mapping):
        X = X.values  # FeatureVector
    if isinstance(X, Mapping):
        if feature_names is None:
            feature_names = tuple(X.keys())
        X = [X[k] for k in feature_names]
    if feature_names is not None and tuple(feature_names) != model.feature_names:
        raise FeatureOrderMismatch(f"model expects features {model.feature_names}")
    X = _as_matrix(X)
    if X.shape[1] != len(model.feature_names):
        raise FeatureOrderMismatch(f"expected {len(model.feature_names)} features, got {X.shape[1]}")
    return X


def predict_margin(model: GBTModel, X, feature_names=None) -> np.ndarray:
    X = _input_matrix(model, X, feature_names)
    out = np.tile(model.base_score, (X.shape[0], 1))
    if model.trees:
        kern.predict_trees(X, *model._pack(), out)
    return out


def predict_proba(model: GBTModel, X, feature_names=None) -> np.ndarray:
    """Class probabilities, shape (n, K) for softmax or (n, 1) for logistic
    (probability of the positive class). A single vector gives shape (K,)."""
    single = _is_single(X)
    m = predict_margin(model, X, feature_names)
    p = _softmax(m) if model.objective == "softmax" else _sigmoid(m)
    return p[0] if single else p


def _is_single(X) -> bool:
    if isinstance(X, Mapping) or (hasattr(X, "values") and isinstance(getattr(X, "values"), Mapping)):
        return True
    if hasattr(X, "feature_names") and not isinstance(X, np.ndarray):
        return False
    return np.ndim(X) == 1


def labels_from_proba(probs: np.ndarray, objective: str = "softmax") -> np.ndarray:
    """Argmax with ties to the lowest code; logistic is positive iff p > 0.5."""
    probs = np.asarray(probs, dtype=float)
    if objective == "logistic":
        return (probs.reshape(-1) > 0.5).astype(np.int64)
    return np.argmax(np.atleast_2d(probs), axis=1)


def predict_label(model: GBTModel, X, feature_names=None):
    single = _is_single(X)
    p = predict_proba(model, X, feature_names)
    lab = labels_from_proba(np.atleast_2d(p), model.objective)
    return int(lab[0]) if single else lab


# --- persistence -------------------------------------------------------------------


def model_to_dict(model: GBTModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "objective": model.objective,
        "n_classes": model.n_classes,
        "base_score": model.base_score.tolist(),
        "feature_names": list(model.feature_names),
        "params": asdict(model.params),
        "trees": [[t.to_dict() for t in rnd] for rnd in model.trees],
        "train_loss": list(model.train_loss),
    }


def model_from_dict(d: dict) -> GBTModel:
    if d.get("format") != MODEL_FORMAT:
        raise CorruptModel("not a model file")
    if d.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"model version {d.get('version')} is not supported (expected {MODEL_VERSION})")
    try:
        params = GBTParams(**d["params"])
        trees = [[Tree(**t) for t in rnd] for rnd in d["trees"]]
        model = GBTModel(
            d["objective"], int(d["n_classes"]), d["base_score"], d["feature_names"], params, trees,
            list(d.get("train_loss", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed model: {exc}") from None
    F = len(model.feature_names)
    for rnd in model.trees:
        if len(rnd) != model.n_outputs:
            raise CorruptModel("wrong number of trees in a round")
        for t in rnd:
            m = t.n_nodes
            if not (t.threshold.size == t.left_missing.size == t.left.size == t.right.size == t.value.size == m):
                raise CorruptModel("tree arrays differ in length")
            inner = t.feature >= 0
            if np.any(t.feature >= F) or np.any(t.left[inner] >= m) or np.any(t.right[inner] >= m) \
                    or np.any(t.left[inner] <= np.flatnonzero(inner)) or not np.all(np.isfinite(t.threshold)):
                raise CorruptModel("tree structure is inconsistent")
    return model


def dumps_model(model: GBTModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def save_model(model: GBTModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> GBTModel:
    try:
        with open(Path(path), encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise CorruptModel(f"{path}: not a model file")
    return model_from_dict(d)
