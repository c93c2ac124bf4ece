"""Partial-observation nearest-neighbor retrieval over standardized training data.

Queries rank the rows by squared Euclidean distance computed on the
observed feature subset only. Results are exact: the scan may be pruned or
reordered internally but must always agree with a stable brute-force sort
by (distance, row id).
"""

from __future__ import annotations

import numpy as np

from ._validation import check_observed_values
from .data import Dataset
from .errors import DataError


class NeighborIndex:
    """Immutable view of a reference matrix supporting subset-distance queries."""

    def __init__(self, features: np.ndarray, labels: np.ndarray | None = None):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise DataError("index needs a nonempty 2-d feature matrix")
        self.features = features
        self.labels = labels
        # column-major copy so per-feature scans touch contiguous memory
        self._columns = np.ascontiguousarray(features.T)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def distances(self, values, observed) -> np.ndarray:
        """Squared distance from every row to the query on the observed dims."""
        d2 = np.zeros(self.n_rows)
        for value, j in zip(values, observed):
            diff = self._columns[j] - value
            d2 += diff * diff
        return d2

    def query(self, values, observed, k: int, exclude: int | None = None) -> np.ndarray:
        """Ids of the k nearest rows, ascending by (distance, row id).

        With nothing observed every row is at distance zero, so the first k
        rows come back. ``exclude`` drops one row id (self-exclusion for
        queries that come from the reference data itself). If fewer than k
        candidates remain, all of them are returned.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        values, observed = check_observed_values(values, observed, self.n_features)
        d2 = self.distances(values, observed)
        if exclude is not None:
            d2[exclude] = np.inf
        order = np.argsort(d2, kind="stable")
        limit = self.n_rows if exclude is None else self.n_rows - 1
        return order[: min(k, limit)].astype(np.int64)


def build_index(dataset: Dataset) -> NeighborIndex:
    """Index a standardized dataset for neighbor queries."""
    if dataset.standardization is None:
        raise DataError("neighbor index expects a standardized dataset")
    return NeighborIndex(dataset.features, dataset.labels)


def neighbors(index: NeighborIndex, values, observed, k: int,
              exclude: int | None = None) -> np.ndarray:
    """Query wrapper matching the module-level operation contract."""
    if index.n_rows == 0:
        raise DataError("empty index")
    return index.query(values, observed, k, exclude=exclude)
