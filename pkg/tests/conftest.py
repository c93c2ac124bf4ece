"""Shared fixtures and independent oracle helpers.

Brute-force reference implementations live here (not in the package) so
the tests stay an independent check on the optimized paths.
"""

import numpy as np
import pytest

from afa.data import CubeConfig, Dataset, apply_standardization, generate_cube, split, standardize
from afa.predictors import SubsetPredictor, clamp_distribution


def brute_force_neighbors(X, values, observed, k, exclude=None):
    """Stable sort by (partial squared distance, row id)."""
    X = np.asarray(X, dtype=np.float64)
    obs = list(observed)
    if obs:
        d2 = np.sum((X[:, obs] - np.asarray(values)) ** 2, axis=1)
    else:
        d2 = np.zeros(X.shape[0])
    keys = sorted(range(X.shape[0]), key=lambda i: (d2[i], i))
    if exclude is not None:
        keys = [i for i in keys if i != exclude]
    return np.asarray(keys[:k], dtype=np.int64)


def brute_force_expected_loss(predictor, state, subset, neigh_X, neigh_y, loss_fn):
    """Plain per-neighbor loop: compose, predict, score, average."""
    total = 0.0
    for row, label in zip(neigh_X, neigh_y):
        observed = list(state.observed) + list(subset)
        values = list(state.values_std) + [row[j] for j in subset]
        pred = predictor.predict_dist(values, observed)
        total += loss_fn(pred, label)
    return total / len(neigh_y)


class XorBayesPredictor(SubsetPredictor):
    """Exact conditional for the XOR fixture: y = 1{x0 > .5} xor 1{x1 > .5}.

    Any single observed feature leaves the label uniform; both features
    pin it down exactly.
    """

    def __init__(self, d=2):
        self.n_features_in_ = d
        self.task_kind = "classification"
        self.n_classes_ = 2
        self.marginal_ = np.array([0.5, 0.5])

    def predict_masked(self, values, mask):
        values = np.asarray(values, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        out = np.full((values.shape[0], 2), 0.5)
        both = (mask[:, 0] > 0) & (mask[:, 1] > 0)
        bits = (values[:, :2] > 0.5).astype(int)
        y = bits[:, 0] ^ bits[:, 1]
        out[both] = np.eye(2)[y[both]]
        return clamp_distribution(out)


def make_xor_dataset(n, seed=0, noise_features=0):
    rng = np.random.default_rng(seed)
    d = 2 + noise_features
    X = rng.random((n, d))
    y = ((X[:, 0] > 0.5).astype(int) ^ (X[:, 1] > 0.5).astype(int)).astype(np.int64)
    return Dataset(X, y, task_kind="classification", n_classes=2)


@pytest.fixture(scope="session")
def cube_small():
    """Standardized 3k-row cube splits, big enough for sane neighbor stats."""
    dataset = generate_cube(CubeConfig(n=3000, sigma=0.3, seed=11))
    train, val, test = split(dataset, (0.8, 0.1, 0.1), seed=5)
    train_std, params = standardize(train)
    return {
        "train": train_std,
        "val": apply_standardization(val, params),
        "test": apply_standardization(test, params),
        "params": params,
    }
