"""Datasets, standardization, splitting, CSV ingestion, and synthetic generators.

Training data is complete-feature: missing values are a prediction-time
concept in this package, never a property of stored datasets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._validation import as_class_labels, as_float_matrix
from .errors import DataError

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASK_KINDS = (CLASSIFICATION, REGRESSION)


@dataclass(frozen=True)
class StandardizationParams:
    """Per-feature affine transform fitted on a reference dataset.

    ``apply`` maps raw values to (x - mean) / scale; ``invert`` undoes it.
    Scales are 1.0 for constant features, so both directions are total.
    """

    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=np.float64))
        if self.means.shape != self.scales.shape or self.means.ndim != 1:
            raise DataError("means and scales must be 1-d arrays of equal length")
        if np.any(self.scales <= 0):
            raise DataError("scales must be strictly positive")

    @property
    def n_features(self) -> int:
        return self.means.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.means) / self.scales

    def invert(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.scales + self.means

    def apply_observed(self, values, observed) -> np.ndarray:
        idx = np.asarray(observed, dtype=np.int64)
        return (np.asarray(values, dtype=np.float64) - self.means[idx]) / self.scales[idx]

    def invert_observed(self, values, observed) -> np.ndarray:
        idx = np.asarray(observed, dtype=np.int64)
        return np.asarray(values, dtype=np.float64) * self.scales[idx] + self.means[idx]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Complete-feature tabular data with labels.

    ``features`` holds raw (unstandardized) values unless ``standardization``
    is set, in which case features are already in standardized units and the
    params record how to get back to raw ones.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    task_kind: str = CLASSIFICATION
    standardization: StandardizationParams | None = None
    n_classes: int | None = None

    def __post_init__(self):
        X = as_float_matrix(self.features, "features")
        object.__setattr__(self, "features", X)
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("dataset needs at least one row and one feature")
        if self.task_kind not in TASK_KINDS:
            raise DataError(f"unknown task_kind {self.task_kind!r}")
        if self.task_kind == CLASSIFICATION:
            y = as_class_labels(self.labels, "labels")
            n_classes = self.n_classes if self.n_classes is not None else int(y.max()) + 1
            if y.max() >= n_classes:
                raise DataError(
                    f"label {int(y.max())} out of range for {n_classes} classes"
                )
            object.__setattr__(self, "n_classes", int(n_classes))
        else:
            y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
            object.__setattr__(self, "n_classes", None)
        if y.shape[0] != X.shape[0]:
            raise DataError("features and labels disagree on the number of rows")
        object.__setattr__(self, "labels", y)
        if not self.feature_names:
            names = tuple(f"x{j}" for j in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)
        elif len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match feature count")
        else:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        X.setflags(write=False)
        y.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_marginal(self) -> np.ndarray:
        """Empirical label distribution (classification only)."""
        if self.task_kind != CLASSIFICATION:
            raise DataError("class_marginal is only defined for classification")
        counts = np.bincount(self.labels, minlength=self.n_classes).astype(np.float64)
        return counts / counts.sum()

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def restrict(self, columns) -> "Dataset":
        """Keep only the given feature columns (order preserved as given)."""
        cols = np.asarray(columns, dtype=np.int64)
        std = self.standardization
        if std is not None:
            std = StandardizationParams(std.means[cols], std.scales[cols])
        return replace(
            self,
            features=self.features[:, cols],
            feature_names=tuple(self.feature_names[int(c)] for c in cols),
            standardization=std,
        )


def standardize(dataset: Dataset) -> tuple[Dataset, StandardizationParams]:
    """Mean-center and scale every feature to unit variance.

    Constant features get scale 1 (their standardized value is exactly 0).
    Returns a standardized copy plus the fitted params; the input is untouched.
    """
    X = dataset.features
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    params = StandardizationParams(means, scales)
    out = replace(dataset, features=params.apply(X), standardization=params)
    return out, params


def apply_standardization(dataset: Dataset, params: StandardizationParams) -> Dataset:
    """Re-express a raw dataset in the units of previously fitted params."""
    if dataset.standardization is not None:
        raise DataError("dataset is already standardized")
    return replace(dataset, features=params.apply(dataset.features), standardization=params)


def split(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Random disjoint train/validation/test split, deterministic given seed."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    n = dataset.n_samples
    counts = [int(math.floor(n * f)) for f in fractions]
    remainders = [n * f - c for f, c in zip(fractions, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    if any(c == 0 for c in counts):
        raise DataError(f"split of {n} rows by {fractions} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(counts)
    parts = np.split(perm, bounds[:-1])
    return tuple(dataset.take(np.sort(p)) for p in parts)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_csv(path, label_column: str, task_kind: str = CLASSIFICATION) -> Dataset:
    """Load a complete-feature CSV with a header row.

    Every cell must parse as a number (labels as integers for
    classification). Missing or malformed cells are hard errors that name
    the offending row (1-based, counting data rows) and column.
    """
    path = Path(path)
    if task_kind not in TASK_KINDS:
        raise DataError(f"unknown task_kind {task_kind!r}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: unknown label column {label_column!r}")
        label_idx = header.index(label_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)

        rows: list[list[float]] = []
        labels: list[float] = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for col_idx, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    raise DataError(
                        f"{path}: missing value row {row_no} column {header[col_idx]!r}"
                    )
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {row_no} "
                        f"column {header[col_idx]!r}"
                    ) from None
                parsed.append(value)
            label = parsed.pop(label_idx)
            if task_kind == CLASSIFICATION and label != int(label):
                raise DataError(
                    f"{path}: non-integer label {label!r} at row {row_no}"
                )
            rows.append(parsed)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    if task_kind == CLASSIFICATION:
        y = np.asarray(labels, dtype=np.int64)
    else:
        y = np.asarray(labels, dtype=np.float64)
    return Dataset(features, y, feature_names=feature_names, task_kind=task_kind)


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset as CSV; float cells use repr so a reload is bitwise equal."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + [label_column])
        clf = dataset.task_kind == CLASSIFICATION
        for i in range(dataset.n_samples):
            cells = [repr(float(v)) for v in dataset.features[i]]
            cells.append(str(int(dataset.labels[i])) if clf else repr(float(dataset.labels[i])))
            writer.writerow(cells)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

CUBE_DIMENSION = 20
CUBE_CLASSES = 8


def _default_cube_means() -> np.ndarray:
    # Class k's three informative features take the bits of k as means,
    # i.e. the classes sit on corners of the unit cube.
    table = np.zeros((CUBE_CLASSES, 3))
    for k in range(CUBE_CLASSES):
        table[k] = [(k >> 2) & 1, (k >> 1) & 1, k & 1]
    return table


@dataclass(frozen=True, eq=False)
class CubeConfig:
    """Config for the cube classification generator (d=20, 8 classes).

    A row of class k has features {k, k+1, k+2} drawn normal around the
    class's corner means with standard deviation ``sigma``; the other 17
    features are Uniform[0, 1] noise. Features 10..19 are never informative.
    """

    n: int
    sigma: float = 0.3
    seed: int = 0
    means: np.ndarray = field(default_factory=_default_cube_means)

    def __post_init__(self):
        if self.n < 1:
            raise DataError("n must be positive")
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")
        means = np.asarray(self.means, dtype=np.float64)
        if means.shape != (CUBE_CLASSES, 3):
            raise DataError(f"means table must have shape ({CUBE_CLASSES}, 3)")
        object.__setattr__(self, "means", means)


def generate_cube(config: CubeConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    n = config.n
    labels = rng.integers(0, CUBE_CLASSES, size=n)
    features = rng.random(size=(n, CUBE_DIMENSION))
    noise = rng.standard_normal(size=(n, 3))
    cols = labels[:, None] + np.arange(3)[None, :]
    features[np.arange(n)[:, None], cols] = config.means[labels] + config.sigma * noise
    return Dataset(features, labels, task_kind=CLASSIFICATION, n_classes=CUBE_CLASSES)


def generate_guide(n: int, d: int, seed: int = 0) -> Dataset:
    """Binary labels driven by one 'guide' feature plus the feature it points at.

    Features 0..d-2 are independent Uniform[0, 1]. The last feature (the
    guide) is Uniform[0, 1] partitioned into d-1 equal ranges; when it falls
    in range r the label is 1{x_r > 0.5}. Two observed features always
    suffice, but no fixed subset smaller than the full set does.
    """
    if d < 3:
        raise DataError("guide dataset needs d >= 3")
    if n < 1:
        raise DataError("n must be positive")
    rng = np.random.default_rng(seed)
    X = rng.random(size=(n, d))
    guide = X[:, d - 1]
    region = np.minimum((guide * (d - 1)).astype(np.int64), d - 2)
    y = (X[np.arange(n), region] > 0.5).astype(np.int64)
    return Dataset(X, y, task_kind=CLASSIFICATION, n_classes=2)


@dataclass(frozen=True)
class DecisionEnvConfig:
    """Config for the synthetic treatment/outcome environment (d=4)."""

    n: int
    seed: int = 0
    probit_coeffs: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    probit_intercept: float = 0.0
    outcome_noise_sd: float = 1.0
    randomized_treatment: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise DataError("n must be positive")
        if self.outcome_noise_sd <= 0:
            raise DataError("outcome_noise_sd must be positive")
        if len(self.probit_coeffs) != 4:
            raise DataError("probit_coeffs must have 4 entries")


@dataclass(frozen=True, eq=False)
class DecisionGroundTruth:
    """Per-row oracle quantities, available only for synthetic generation."""

    mean_outcomes: np.ndarray  # (n, 2): E[Y | x, a] for a = 0, 1
    optimal_action: np.ndarray  # (n,)
    sufficient_mask: np.ndarray  # (n, d) bool: minimal sufficient feature set


@dataclass(frozen=True, eq=False)
class DecisionDataset:
    """Logged (context, action, outcome) triples, optionally with ground truth."""

    features: np.ndarray
    action: np.ndarray
    outcome: np.ndarray
    feature_names: tuple[str, ...] = ()
    ground_truth: DecisionGroundTruth | None = None

    def __post_init__(self):
        X = as_float_matrix(self.features, "features")
        object.__setattr__(self, "features", X)
        a = np.asarray(self.action, dtype=np.int64).reshape(-1)
        y = np.asarray(self.outcome, dtype=np.float64).reshape(-1)
        if a.shape[0] != X.shape[0] or y.shape[0] != X.shape[0]:
            raise DataError("features, action, and outcome disagree on row count")
        if a.size and not np.all((a == 0) | (a == 1)):
            raise DataError("actions must be binary (0/1)")
        object.__setattr__(self, "action", a)
        object.__setattr__(self, "outcome", y)
        if not self.feature_names:
            names = tuple(f"x{j}" for j in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "DecisionDataset":
        idx = np.asarray(indices, dtype=np.int64)
        gt = self.ground_truth
        if gt is not None:
            gt = DecisionGroundTruth(
                gt.mean_outcomes[idx], gt.optimal_action[idx], gt.sufficient_mask[idx]
            )
        return DecisionDataset(
            self.features[idx], self.action[idx], self.outcome[idx],
            feature_names=self.feature_names, ground_truth=gt,
        )


def decision_outcome_mean(features: np.ndarray, action: np.ndarray) -> np.ndarray:
    """E[Y | x, a] for the synthetic decision environment.

    The bracketed term switches, by which quarter of (0, 1) x0 falls in,
    between a constant, x1, x1*x2, and x1*(x3^2 - 1); action 0 has mean 0.
    """
    X = np.asarray(features, dtype=np.float64)
    x0, x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    bracket = (
        ((x0 > 0) & (x0 <= 0.25)) * 1.0
        + ((x0 > 0.25) & (x0 <= 0.5)) * x1
        + ((x0 > 0.5) & (x0 < 0.75)) * x1 * x2
        + ((x0 > 0.75) & (x0 < 1.0)) * x1 * (x3**2 - 1.0)
    )
    return np.asarray(action, dtype=np.float64) * bracket


def _decision_bracket(features: np.ndarray) -> np.ndarray:
    return decision_outcome_mean(features, np.ones(len(features)))


def _standard_normal_cdf(z: np.ndarray) -> np.ndarray:
    return np.array([0.5 * (1.0 + math.erf(v / math.sqrt(2.0))) for v in z])


def _sufficient_mask(features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    mask = np.zeros((n, X.shape[1]), dtype=bool)
    x0 = X[:, 0]
    mask[:, 0] = True
    r2 = (x0 > 0.25) & (x0 <= 0.5)
    r3 = (x0 > 0.5) & (x0 < 0.75)
    r4 = (x0 > 0.75) & (x0 < 1.0)
    mask[r2, 1] = True
    mask[r3, 1] = True
    mask[r3, 2] = True
    mask[r4, 1] = True
    mask[r4, 3] = True
    return mask


def generate_decision_env(config: DecisionEnvConfig) -> DecisionDataset:
    rng = np.random.default_rng(config.seed)
    n = config.n
    x0 = rng.random(n)
    x1 = 2.0 * rng.integers(0, 2, size=n) - 1.0
    corr = 0.3
    z = rng.standard_normal(size=(n, 2))
    x2 = z[:, 0]
    x3 = corr * z[:, 0] + math.sqrt(1.0 - corr**2) * z[:, 1]
    X = np.column_stack([x0, x1, x2, x3])
    if config.randomized_treatment:
        a = rng.integers(0, 2, size=n)
    else:
        beta = np.asarray(config.probit_coeffs, dtype=np.float64)
        p = _standard_normal_cdf(X @ beta + config.probit_intercept)
        a = (rng.random(n) < p).astype(np.int64)
    bracket = _decision_bracket(X)
    y = a * bracket + config.outcome_noise_sd * rng.standard_normal(n)
    gt = DecisionGroundTruth(
        mean_outcomes=np.column_stack([np.zeros(n), bracket]),
        optimal_action=(bracket > 0).astype(np.int64),
        sufficient_mask=_sufficient_mask(X),
    )
    return DecisionDataset(X, a, y, ground_truth=gt)
