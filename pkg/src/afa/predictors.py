"""Losses and arbitrary-subset predictors.

A subset predictor answers "what is the label distribution given these
observed feature values" for any subset of features, including the empty
one. Batched evaluation goes through ``predict_masked`` on full-width
value/mask matrices; the scalar ``predict_dist`` is sugar on top of it.
"""

from __future__ import annotations

import json
import math
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from ._validation import as_class_labels, as_float_matrix, check_observed_values
from .data import (
    CLASSIFICATION,
    CUBE_CLASSES,
    REGRESSION,
    Dataset,
    StandardizationParams,
    _default_cube_means,
)
from .errors import DataError, TrainingError

EPSILON = 1e-6

CROSS_ENTROPY = "cross-entropy"
ZERO_ONE = "zero-one"
SQUARED_ERROR = "squared-error"
LOSS_KINDS = (CROSS_ENTROPY, ZERO_ONE, SQUARED_ERROR)

_IMPOSSIBLE = -1e30  # log-likelihood stand-in for zero density


def clamp_distribution(p: np.ndarray, eps: float = EPSILON) -> np.ndarray:
    """Squeeze probabilities into [eps, 1 - eps] while keeping unit sum.

    Implemented as additive smoothing with lambda = eps / (1 - C*eps): the
    smallest entry lands exactly on eps when some input probability is 0.
    """
    p = np.asarray(p, dtype=np.float64)
    c = p.shape[-1]
    lam = eps / (1.0 - c * eps)
    return (p + lam) / (p.sum(axis=-1, keepdims=True) + c * lam)


def loss(pred, y, kind: str) -> float:
    """Pointwise loss of one prediction against one label."""
    return float(loss_batch(np.asarray(pred)[None, ...], np.asarray([y]), kind)[0])


def loss_batch(preds: np.ndarray, ys: np.ndarray, kind: str) -> np.ndarray:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    preds = np.asarray(preds, dtype=np.float64)
    if kind == SQUARED_ERROR:
        if preds.ndim != 1:
            raise ValueError("squared-error expects scalar predictions (regression)")
        return (preds - np.asarray(ys, dtype=np.float64)) ** 2
    if preds.ndim != 2:
        raise ValueError(f"{kind} expects distribution predictions (classification)")
    ys = as_class_labels(ys, "labels")
    if ys.max(initial=0) >= preds.shape[1]:
        raise ValueError("label out of range for the prediction distribution")
    if kind == CROSS_ENTROPY:
        picked = preds[np.arange(len(ys)), ys]
        return -np.log(np.maximum(picked, EPSILON))
    # zero-one; argmax ties resolve to the lowest index
    return (np.argmax(preds, axis=1) != ys).astype(np.float64)


# ---------------------------------------------------------------------------
# Predictor base
# ---------------------------------------------------------------------------


class SubsetPredictor(BaseEstimator):
    """Base class for estimators that accept any observed feature subset.

    Subclasses set ``n_features_in_`` and ``task_kind`` when fitted and
    implement ``predict_masked(values, mask)`` over full-width batches,
    where mask rows of all zeros mean "nothing observed".
    """

    task_kind: str = CLASSIFICATION
    standardization_: StandardizationParams | None = None

    def predict_masked(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_dist(self, values, observed):
        """Prediction from one observed subset: (C,) distribution or scalar."""
        d = self.n_features_in_
        values, observed = check_observed_values(values, observed, d)
        V = np.zeros((1, d))
        M = np.zeros((1, d))
        if observed:
            V[0, list(observed)] = values
            M[0, list(observed)] = 1.0
        out = self.predict_masked(V, M)
        if self.task_kind == CLASSIFICATION:
            return out[0]
        return float(out[0])

    def _check_masked_args(self, values, mask) -> tuple[np.ndarray, np.ndarray]:
        V = np.asarray(values, dtype=np.float64)
        M = np.asarray(mask, dtype=np.float64)
        if V.shape != M.shape or V.ndim != 2 or V.shape[1] != self.n_features_in_:
            raise ValueError(
                f"values/mask must both be (m, {self.n_features_in_}) arrays"
            )
        return V, M


def predict(predictor: SubsetPredictor, values, observed):
    """Evaluate a predictor on an observed subset (validating the subset)."""
    return predictor.predict_dist(values, observed)


# ---------------------------------------------------------------------------
# Masked linear model
# ---------------------------------------------------------------------------


@dataclass
class MaskedLinearConfig:
    epochs: int = 40
    step_size: float = 0.1
    batch_size: int = 64
    mask_density: str | float = "uniform"
    l2: float = 0.0
    seed: int = 0


def _encode_masked(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """[values * mask, mask, 1]: unobserved entries are imputed to 0."""
    m = values.shape[0]
    return np.hstack([values * mask, mask, np.ones((m, 1))])


def _multinomial_loss_grad(W, Z, y, n_classes, l2=0.0):
    """Mean cross-entropy of softmax(Z @ W) and its gradient in W."""
    m = Z.shape[0]
    logits = Z @ W
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    picked = probs[np.arange(m), y]
    value = float(-np.mean(np.log(np.maximum(picked, 1e-300)))) + 0.5 * l2 * float(
        np.sum(W * W)
    )
    probs[np.arange(m), y] -= 1.0
    grad = Z.T @ probs / m + l2 * W
    return value, grad


def _squared_loss_grad(w, Z, y, l2=0.0):
    """Mean squared error of Z @ w and its gradient in w."""
    m = Z.shape[0]
    resid = Z @ w - y
    value = float(np.mean(resid**2)) + 0.5 * l2 * float(np.sum(w * w))
    grad = 2.0 * (Z.T @ resid) / m + l2 * w
    return value, grad


class MaskedLinearModel(SubsetPredictor):
    """Linear model over the masked encoding [x * m, m].

    Softmax head for classification, plain linear for regression. Trained
    by minibatch SGD where each example gets a fresh random mask, so the
    model learns to predict from arbitrary subsets. With nothing observed
    the input is all zeros and the output is the learned bias head.
    """

    def __init__(self, task_kind=CLASSIFICATION, epochs=40, step_size=0.1,
                 batch_size=64, mask_density="uniform", l2=0.0, seed=0):
        self.task_kind = task_kind
        self.epochs = epochs
        self.step_size = step_size
        self.batch_size = batch_size
        self.mask_density = mask_density
        self.l2 = l2
        self.seed = seed

    def _draw_masks(self, rng, m, d):
        if self.mask_density == "uniform":
            density = rng.random((m, 1))
        else:
            density = float(self.mask_density)
        return (rng.random((m, d)) < density).astype(np.float64)

    def fit(self, X, y):
        X = as_float_matrix(X)
        n, d = X.shape
        rng = np.random.default_rng(self.seed)
        self.n_features_in_ = d
        if self.task_kind == CLASSIFICATION:
            y = as_class_labels(y)
            self.n_classes_ = int(y.max()) + 1
            counts = np.bincount(y, minlength=self.n_classes_).astype(np.float64)
            self.marginal_ = counts / counts.sum()
            W = np.zeros((2 * d + 1, self.n_classes_))
        else:
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            self.n_classes_ = None
            self.marginal_ = float(y.mean())
            W = np.zeros(2 * d + 1)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            masks = self._draw_masks(rng, n, d)
            for start in range(0, n, self.batch_size):
                rows = order[start:start + self.batch_size]
                Z = _encode_masked(X[rows], masks[rows])
                if self.task_kind == CLASSIFICATION:
                    _, grad = _multinomial_loss_grad(W, Z, y[rows], self.n_classes_, self.l2)
                else:
                    _, grad = _squared_loss_grad(W, Z, y[rows], self.l2)
                if not np.all(np.isfinite(grad)):
                    raise TrainingError(f"non-finite gradient at epoch {epoch}")
                W -= self.step_size * grad
        self.coef_ = W
        return self

    def predict_masked(self, values, mask):
        V, M = self._check_masked_args(values, mask)
        Z = _encode_masked(V, M)
        if self.task_kind == REGRESSION:
            return Z @ self.coef_
        logits = Z @ self.coef_
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        return clamp_distribution(expl / expl.sum(axis=1, keepdims=True))


def train_masked_linear(train: Dataset, config: MaskedLinearConfig | None = None) -> MaskedLinearModel:
    config = config or MaskedLinearConfig()
    model = MaskedLinearModel(
        task_kind=train.task_kind, epochs=config.epochs, step_size=config.step_size,
        batch_size=config.batch_size, mask_density=config.mask_density,
        l2=config.l2, seed=config.seed,
    )
    model.fit(train.features, train.labels)
    model.standardization_ = train.standardization
    return model


# ---------------------------------------------------------------------------
# k-nearest-neighbor predictor
# ---------------------------------------------------------------------------


class KnnSubsetPredictor(SubsetPredictor):
    """Label histogram (or mean) of the k nearest references on observed dims.

    Distance is squared Euclidean over the observed features only; ties
    break by ascending reference id, matching a stable brute-force scan.
    Classification histograms get Laplace smoothing (add 1/C per class).
    ``max_reference`` subsamples the reference rows once at fit time, which
    bounds the per-query scan cost on large training sets.
    """

    def __init__(self, k=5, task_kind=CLASSIFICATION, max_reference=None, seed=0,
                 chunk_size=2048):
        self.k = k
        self.task_kind = task_kind
        self.max_reference = max_reference
        self.seed = seed
        self.chunk_size = chunk_size

    def fit(self, X, y):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        X = as_float_matrix(X)
        n, d = X.shape
        self.n_features_in_ = d
        if self.task_kind == CLASSIFICATION:
            y = as_class_labels(y)
            self.n_classes_ = int(y.max()) + 1
            counts = np.bincount(y, minlength=self.n_classes_).astype(np.float64)
            self.marginal_ = counts / counts.sum()
        else:
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            self.n_classes_ = None
            self.marginal_ = float(y.mean())
        if self.max_reference is not None and self.max_reference < n:
            keep = np.sort(
                np.random.default_rng(self.seed).choice(n, self.max_reference, replace=False)
            )
            X, y = X[keep], y[keep]
        self.reference_ = X
        self.reference_labels_ = y
        # one fused gemm gives -2 v.R^T + sum_j m_j R_j^2, the query-variable
        # part of the partial squared distance (the per-query constant term
        # cannot change which references are nearest)
        self._gram_ = np.ascontiguousarray(np.hstack([-2.0 * X, X * X]).T)
        return self

    def predict_masked(self, values, mask):
        V, M = self._check_masked_args(values, mask)
        m = V.shape[0]
        n_ref = self.reference_.shape[0]
        kk = min(self.k, n_ref)
        clf = self.task_kind == CLASSIFICATION
        if clf:
            out = np.zeros((m, self.n_classes_))
            labels = self.reference_labels_.astype(np.int64)
        else:
            out = np.zeros(m)
            values_ref = self.reference_labels_
        nonempty = M.any(axis=1)
        idx = np.flatnonzero(nonempty)
        Z = np.hstack([V[idx] * M[idx], M[idx]])
        for start in range(0, idx.size, self.chunk_size):
            rows = idx[start:start + self.chunk_size]
            D = Z[start:start + self.chunk_size] @ self._gram_
            if clf:
                buf = np.zeros((rows.size, self.n_classes_))
                _kernels.knn_class_counts(D, labels, kk, self.n_classes_, buf)
            else:
                buf = np.zeros(rows.size)
                _kernels.knn_label_sums(D, values_ref, kk, buf)
            out[rows] = buf
        if clf:
            probs = np.empty((m, self.n_classes_))
            if idx.size:
                probs[idx] = (out[idx] + 1.0 / self.n_classes_) / (kk + 1.0)
            probs[~nonempty] = self.marginal_
            return clamp_distribution(probs)
        preds = out
        if idx.size:
            preds[idx] /= kk
        preds[~nonempty] = self.marginal_
        return preds


def knn_predictor(train: Dataset, k: int, max_reference: int | None = None,
                  seed: int = 0) -> KnnSubsetPredictor:
    model = KnnSubsetPredictor(k=k, task_kind=train.task_kind,
                               max_reference=max_reference, seed=seed)
    model.fit(train.features, train.labels)
    model.standardization_ = train.standardization
    return model


class MaskedTreeModel(SubsetPredictor):
    """Decision tree over the masked encoding [x * m, m].

    A nonlinear alternative to the masked linear model: the tree sees value
    and mask indicator columns, trained on ``mask_copies`` replicas of the
    data under fresh random masks (the first replica is fully observed).
    """

    def __init__(self, task_kind=REGRESSION, min_samples_leaf=100,
                 mask_copies=3, max_depth=None, seed=0):
        self.task_kind = task_kind
        self.min_samples_leaf = min_samples_leaf
        self.mask_copies = mask_copies
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y):
        from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

        X = as_float_matrix(X)
        n, d = X.shape
        self.n_features_in_ = d
        rng = np.random.default_rng(self.seed)
        if self.task_kind == CLASSIFICATION:
            y = as_class_labels(y)
            self.n_classes_ = int(y.max()) + 1
            counts = np.bincount(y, minlength=self.n_classes_).astype(np.float64)
            self.marginal_ = counts / counts.sum()
            tree = DecisionTreeClassifier(
                random_state=self.seed, min_samples_leaf=self.min_samples_leaf,
                max_depth=self.max_depth,
            )
        else:
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            self.n_classes_ = None
            self.marginal_ = float(y.mean())
            tree = DecisionTreeRegressor(
                random_state=self.seed, min_samples_leaf=self.min_samples_leaf,
                max_depth=self.max_depth,
            )
        blocks_v, blocks_m = [], []
        for copy in range(max(1, self.mask_copies)):
            if copy == 0:
                mask = np.ones_like(X)
            else:
                density = rng.random((n, 1))
                mask = (rng.random(X.shape) < density).astype(np.float64)
            blocks_v.append(X * mask)
            blocks_m.append(mask)
        Z = np.hstack([np.vstack(blocks_v), np.vstack(blocks_m)])
        tree.fit(Z, np.tile(y, max(1, self.mask_copies)))
        self.tree_ = tree
        return self

    def predict_masked(self, values, mask):
        V, M = self._check_masked_args(values, mask)
        Z = np.hstack([V * M, M])
        if self.task_kind == REGRESSION:
            return self.tree_.predict(Z)
        proba = self.tree_.predict_proba(Z)
        full = np.zeros((V.shape[0], self.n_classes_))
        full[:, self.tree_.classes_] = proba
        return clamp_distribution(full)


# ---------------------------------------------------------------------------
# Per-subset predictor table
# ---------------------------------------------------------------------------


class SubsetTablePredictor(SubsetPredictor):
    """Caches one dedicated predictor per distinct observed subset.

    The first query with subset o trains ``trainer`` on just those columns;
    later queries reuse the cached model (key is the sorted subset).
    Concurrent readers are fine; a duplicate concurrent fit is discarded in
    favor of whichever landed first.
    """

    def __init__(self, trainer, train: Dataset):
        self.trainer = trainer
        self.train = train
        self.n_features_in_ = train.n_features
        self.task_kind = train.task_kind
        self.n_classes_ = train.n_classes
        if train.task_kind == CLASSIFICATION:
            self.marginal_ = train.class_marginal()
        else:
            self.marginal_ = float(train.labels.mean())
        self.standardization_ = train.standardization
        self._cache: dict[tuple[int, ...], SubsetPredictor] = {}
        self._lock = threading.Lock()
        self.train_count = 0

    def _model_for(self, subset: tuple[int, ...]) -> SubsetPredictor:
        model = self._cache.get(subset)
        if model is not None:
            return model
        trained = self.trainer(self.train.restrict(list(subset)))
        with self._lock:
            model = self._cache.get(subset)
            if model is None:
                self._cache[subset] = trained
                self.train_count += 1
                model = trained
        return model

    def predict_masked(self, values, mask):
        V, M = self._check_masked_args(values, mask)
        m = V.shape[0]
        if self.task_kind == CLASSIFICATION:
            out = np.empty((m, self.n_classes_))
        else:
            out = np.empty(m)
        bits = M.astype(bool)
        # group rows sharing a mask so each subset model runs one batch
        _, first, inverse = np.unique(bits, axis=0, return_index=True, return_inverse=True)
        for g, row0 in enumerate(first):
            rows = np.flatnonzero(inverse == g)
            subset = tuple(int(j) for j in np.flatnonzero(bits[row0]))
            if not subset:
                if self.task_kind == CLASSIFICATION:
                    out[rows] = clamp_distribution(self.marginal_[None, :])
                else:
                    out[rows] = self.marginal_
                continue
            model = self._model_for(subset)
            cols = list(subset)
            sub_vals = V[np.ix_(rows, cols)]
            out[rows] = model.predict_masked(sub_vals, np.ones_like(sub_vals))
        return out


def predictor_table(trainer, train: Dataset) -> SubsetTablePredictor:
    return SubsetTablePredictor(trainer, train)


# ---------------------------------------------------------------------------
# Closed-form cube posterior
# ---------------------------------------------------------------------------


class CubePosteriorPredictor(SubsetPredictor):
    """Exact class posterior for the cube generator.

    p(c | x_o) is proportional to the product over observed features of the
    class-c marginal density: N(mean, sigma^2) on class c's three informative
    features and Uniform[0, 1] elsewhere. Inputs arrive standardized and are
    mapped back to raw units first when params are attached. If every class
    has zero likelihood the posterior falls back to uniform and the event is
    counted in ``degenerate_count_``.
    """

    def __init__(self, sigma, means=None, standardization=None):
        self.sigma = sigma
        self.means = means
        self.standardization = standardization

    def _setup(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self._means = np.asarray(
            self.means if self.means is not None else _default_cube_means(),
            dtype=np.float64,
        )
        self.n_features_in_ = 20
        self.n_classes_ = CUBE_CLASSES
        self.task_kind = CLASSIFICATION
        self.marginal_ = np.full(CUBE_CLASSES, 1.0 / CUBE_CLASSES)
        self.standardization_ = self.standardization
        self.degenerate_count_ = 0

    def predict_masked(self, values, mask):
        if not hasattr(self, "_means"):
            self._setup()
        V, M = self._check_masked_args(values, mask)
        raw = self.standardization_.invert(V) if self.standardization_ is not None else V
        inside = (raw >= 0.0) & (raw <= 1.0)
        log_uniform = np.where(inside, 0.0, _IMPOSSIBLE)
        base = (M * log_uniform).sum(axis=1)
        loglik = np.empty((V.shape[0], CUBE_CLASSES))
        norm_const = math.log(self.sigma * math.sqrt(2.0 * math.pi))
        for c in range(CUBE_CLASSES):
            cols = [c, c + 1, c + 2]
            # swap the uniform contribution of informative features for the
            # normal one; the uniform parts are exact multiples of the
            # impossible constant, so the subtraction cancels exactly
            uniform_part = base - (M[:, cols] * log_uniform[:, cols]).sum(axis=1)
            z = (raw[:, cols] - self._means[c][None, :]) / self.sigma
            normal_part = (M[:, cols] * (-0.5 * z * z - norm_const)).sum(axis=1)
            loglik[:, c] = uniform_part + normal_part
        top = loglik.max(axis=1)
        dead = top <= _IMPOSSIBLE / 2
        if np.any(dead):
            self.degenerate_count_ += int(dead.sum())
            warnings.warn(
                "some observations have zero likelihood under every class; "
                "returning a uniform posterior for them",
                RuntimeWarning,
                stacklevel=2,
            )
        weights = np.exp(loglik - top[:, None])
        weights[dead] = 1.0
        return clamp_distribution(weights / weights.sum(axis=1, keepdims=True))


def cube_ground_truth(sigma: float, standardization: StandardizationParams | None = None,
                      means=None) -> CubePosteriorPredictor:
    model = CubePosteriorPredictor(sigma, means=means, standardization=standardization)
    model._setup()
    return model


# ---------------------------------------------------------------------------
# Save / load
# ---------------------------------------------------------------------------


def _std_to_json(std):
    if std is None:
        return None
    return {"means": std.means.tolist(), "scales": std.scales.tolist()}


def _std_from_json(blob):
    if blob is None:
        return None
    return StandardizationParams(np.asarray(blob["means"]), np.asarray(blob["scales"]))


def _dump_masked_linear(model: MaskedLinearModel) -> dict:
    return {
        "config": {k: getattr(model, k) for k in
                   ("task_kind", "epochs", "step_size", "batch_size",
                    "mask_density", "l2", "seed")},
        "coef": model.coef_.tolist(),
        "n_features": model.n_features_in_,
        "n_classes": model.n_classes_,
        "marginal": np.asarray(model.marginal_).tolist(),
    }


def _load_masked_linear(blob: dict) -> MaskedLinearModel:
    model = MaskedLinearModel(**blob["config"])
    model.coef_ = np.asarray(blob["coef"], dtype=np.float64)
    model.n_features_in_ = blob["n_features"]
    model.n_classes_ = blob["n_classes"]
    marg = blob["marginal"]
    model.marginal_ = float(marg) if np.isscalar(marg) else np.asarray(marg)
    return model


def _dump_knn(model: KnnSubsetPredictor) -> dict:
    return {
        "config": {k: getattr(model, k) for k in
                   ("k", "task_kind", "max_reference", "seed", "chunk_size")},
        "reference": model.reference_.tolist(),
        "reference_labels": model.reference_labels_.tolist(),
        "n_classes": model.n_classes_,
        "marginal": np.asarray(model.marginal_).tolist(),
    }


def _load_knn(blob: dict) -> KnnSubsetPredictor:
    model = KnnSubsetPredictor(**blob["config"])
    X = np.asarray(blob["reference"], dtype=np.float64)
    if model.task_kind == CLASSIFICATION:
        y = np.asarray(blob["reference_labels"], dtype=np.int64)
    else:
        y = np.asarray(blob["reference_labels"], dtype=np.float64)
    saved_max = model.max_reference
    model.max_reference = None  # references were already subsampled at fit
    model.fit(X, y)
    model.max_reference = saved_max
    model.n_classes_ = blob["n_classes"]
    marg = blob["marginal"]
    model.marginal_ = float(marg) if np.isscalar(marg) else np.asarray(marg)
    return model


def _dump_cube(model: CubePosteriorPredictor) -> dict:
    return {"sigma": model.sigma, "means": model._means.tolist()}


def _load_cube(blob: dict) -> CubePosteriorPredictor:
    return cube_ground_truth(blob["sigma"], means=np.asarray(blob["means"]))


MODEL_IO = {
    "masked-linear": (MaskedLinearModel, _dump_masked_linear, _load_masked_linear),
    "knn": (KnnSubsetPredictor, _dump_knn, _load_knn),
    "cube-posterior": (CubePosteriorPredictor, _dump_cube, _load_cube),
}


def save_predictor(predictor, path) -> None:
    """Serialize a predictor (kind, weights, config, standardization) as JSON."""
    for kind, (cls, dump, _) in MODEL_IO.items():
        if type(predictor) is cls:
            blob = dump(predictor)
            blob["kind"] = kind
            blob["standardization"] = _std_to_json(
                getattr(predictor, "standardization_", None)
            )
            Path(path).write_text(json.dumps(blob), encoding="utf-8")
            return
    raise ValueError(f"cannot serialize predictor of type {type(predictor).__name__}")


def load_predictor(path):
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = blob.get("kind")
    if kind not in MODEL_IO:
        raise DataError(f"unknown model kind {kind!r} in {path}")
    model = MODEL_IO[kind][2](blob)
    model.standardization_ = _std_from_json(blob.get("standardization"))
    return model
