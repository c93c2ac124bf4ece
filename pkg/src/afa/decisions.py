"""Acquisition for decision-making: outcome models, policies, and value estimation.

The outcome model Q(x_o, a) is one arbitrary-subset regressor per action.
Decision policies map a (possibly partial) context to a binary action;
acquisition is driven by the regret of deciding with partial context
instead of a prediction loss.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from ._validation import check_observed
from .data import (
    DecisionDataset,
    StandardizationParams,
    standardize,
    Dataset,
    REGRESSION,
)
from .errors import DataError
from .neighbors import NeighborIndex
from .policies import (
    AcquisitionAction,
    CostModel,
    ObservationState,
    PolicyDecision,
    SubsetSearchConfig,
    TERMINATE,
    _argmin_candidate,
    sample_candidates,
)
from .predictors import (
    KnnSubsetPredictor,
    MaskedLinearModel,
    MaskedTreeModel,
    SubsetPredictor,
)

PLUG_IN = "plug-in"
WEIGHTED_CLASSIFICATION = "weighted-classification"

REGRET = "regret"
NEG_VALUE = "neg-value"


@dataclass
class QConfig:
    learner: str = "knn"  # "knn" | "masked-linear" | "masked-tree"
    k: int = 64
    max_reference: int | None = None
    seed: int = 0
    epochs: int = 60
    step_size: float = 0.05
    batch_size: int = 128
    min_samples_leaf: int = 100
    mask_copies: int = 3


class QModel:
    """Outcome regressor Q(x_o, a) over any observed context subset."""

    def __init__(self, models: dict[int, SubsetPredictor], n_features: int):
        self.models = models
        self.n_features = n_features

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(sorted(self.models))

    def value(self, values, observed, action: int) -> float:
        return float(self.models[action].predict_dist(values, observed))

    def value_masked(self, values: np.ndarray, mask: np.ndarray, action: int) -> np.ndarray:
        return self.models[action].predict_masked(values, mask)

    def value_full(self, X: np.ndarray, action: int) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.models[action].predict_masked(X, np.ones_like(X))

    def best_full(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Argmax action and max value at full context; ties go to action 0."""
        q0 = self.value_full(X, 0)
        q1 = self.value_full(X, 1)
        actions = (q1 > q0).astype(np.int64)
        return actions, np.maximum(q0, q1)


def fit_q(features: np.ndarray, action: np.ndarray, outcome: np.ndarray,
          config: QConfig | None = None) -> QModel:
    """Fit one arbitrary-subset outcome regressor per action.

    ``features`` should be in the units the downstream policies will query
    with (standardized, when neighbors are involved).
    """
    config = config or QConfig()
    X = np.asarray(features, dtype=np.float64)
    a = np.asarray(action, dtype=np.int64)
    y = np.asarray(outcome, dtype=np.float64)
    present = set(np.unique(a).tolist())
    if present != {0, 1}:
        raise DataError(f"both actions must be present in the data, got {sorted(present)}")
    models: dict[int, SubsetPredictor] = {}
    for act in (0, 1):
        rows = np.flatnonzero(a == act)
        if config.learner == "knn":
            model = KnnSubsetPredictor(
                k=config.k, task_kind=REGRESSION,
                max_reference=config.max_reference, seed=config.seed,
            )
            model.fit(X[rows], y[rows])
        elif config.learner == "masked-linear":
            model = MaskedLinearModel(
                task_kind=REGRESSION, epochs=config.epochs,
                step_size=config.step_size, batch_size=config.batch_size,
                seed=config.seed,
            )
            model.fit(X[rows], y[rows])
        elif config.learner == "masked-tree":
            model = MaskedTreeModel(
                task_kind=REGRESSION, min_samples_leaf=config.min_samples_leaf,
                mask_copies=config.mask_copies, seed=config.seed,
            )
            model.fit(X[rows], y[rows])
        else:
            raise DataError(f"unknown Q learner {config.learner!r}")
        models[act] = model
    return QModel(models, X.shape[1])


def fit_q_dataset(data: DecisionDataset, config: QConfig | None = None,
                  standardization: StandardizationParams | None = None) -> QModel:
    X = standardization.apply(data.features) if standardization is not None else data.features
    return fit_q(X, data.action, data.outcome, config)


# ---------------------------------------------------------------------------
# Decision policies
# ---------------------------------------------------------------------------


class DecisionPolicy:
    """Maps a context (full or a fixed observed subset) to a binary action."""

    observed: tuple[int, ...] | None = None  # None means full context

    def decide_masked(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decide_rows(self, X: np.ndarray) -> np.ndarray:
        """Decisions for full-context rows, restricted to this policy's subset."""
        X = np.asarray(X, dtype=np.float64)
        mask = np.zeros_like(X)
        if self.observed is None:
            mask[:] = 1.0
        else:
            mask[:, list(self.observed)] = 1.0
        return self.decide_masked(X * mask, mask)

    def decide(self, values, observed) -> int:
        d = self._n_features()
        values = np.asarray(values, dtype=np.float64)
        observed = check_observed(observed, d)
        V = np.zeros((1, d))
        M = np.zeros((1, d))
        if observed:
            V[0, list(observed)] = values
            M[0, list(observed)] = 1.0
        return int(self.decide_masked(V, M)[0])

    def _n_features(self) -> int:
        raise NotImplementedError


class FullContextPolicy(DecisionPolicy):
    """argmax over actions of Q at the given context; ties pick action 0."""

    def __init__(self, q: QModel):
        self.q = q
        self.observed = None

    def _n_features(self) -> int:
        return self.q.n_features

    def decide_masked(self, values, mask):
        q0 = self.q.value_masked(values, mask, 0)
        q1 = self.q.value_masked(values, mask, 1)
        return (q1 > q0).astype(np.int64)


class PlugInPartialPolicy(DecisionPolicy):
    """Partial-context plug-in: argmax of the masked Q directly."""

    def __init__(self, q: QModel, observed):
        self.q = q
        self.observed = tuple(sorted(int(j) for j in observed))

    def _n_features(self) -> int:
        return self.q.n_features

    def decide_masked(self, values, mask):
        q0 = self.q.value_masked(values, mask, 0)
        q1 = self.q.value_masked(values, mask, 1)
        return (q1 > q0).astype(np.int64)


class RegretWeightedPolicy(DecisionPolicy):
    """Weighted classifier over a fixed subset, trained to minimize regret.

    Each training row's cost for an action is the full-context Q gap, so
    fitting a sample-weighted classifier on (x_o -> best action) minimizes
    the empirical regret of deciding from x_o alone.
    """

    def __init__(self, observed, classifier, n_features: int, constant: int | None = None):
        self.observed = tuple(sorted(int(j) for j in observed))
        self.classifier = classifier
        self.n_features_ = n_features
        self.constant = constant

    def _n_features(self) -> int:
        return self.n_features_

    def decide_masked(self, values, mask):
        m = values.shape[0]
        if self.constant is not None:
            return np.full(m, self.constant, dtype=np.int64)
        cols = list(self.observed)
        return self.classifier.predict(values[:, cols]).astype(np.int64)


def full_policy(q: QModel) -> FullContextPolicy:
    return FullContextPolicy(q)


def fit_partial_policy(q: QModel, X_train: np.ndarray, observed,
                       engine: str = WEIGHTED_CLASSIFICATION,
                       seed: int = 0, min_samples_leaf: int = 1) -> DecisionPolicy:
    """Decision policy for one fixed observed subset.

    The weighted-classification engine fits a tree on x_o with per-row
    weights |Q(x,1) - Q(x,0)|; the plug-in engine just argmaxes the masked Q.
    """
    observed = tuple(sorted(int(j) for j in observed))
    if engine == PLUG_IN:
        return PlugInPartialPolicy(q, observed)
    if engine != WEIGHTED_CLASSIFICATION:
        raise DataError(f"unknown partial-policy engine {engine!r}")
    X = np.asarray(X_train, dtype=np.float64)
    q0 = q.value_full(X, 0)
    q1 = q.value_full(X, 1)
    targets = (q1 > q0).astype(np.int64)
    weights = np.abs(q1 - q0)
    if not observed:
        # nothing observed: the zero-regret constant is the better-on-average arm
        return RegretWeightedPolicy(observed, None, X.shape[1],
                                    constant=int(q1.sum() > q0.sum()))
    if len(np.unique(targets)) < 2:
        return RegretWeightedPolicy(observed, None, X.shape[1], constant=int(targets[0]))
    tree = DecisionTreeClassifier(random_state=seed,
                                  min_samples_leaf=min_samples_leaf)
    tree.fit(X[:, list(observed)], targets, sample_weight=weights + 1e-12)
    return RegretWeightedPolicy(observed, tree, X.shape[1])


class PartialPolicyTable:
    """Per-subset decision policies, trained on demand and cached."""

    def __init__(self, q: QModel, X_train: np.ndarray,
                 engine: str = WEIGHTED_CLASSIFICATION, seed: int = 0,
                 min_samples_leaf: int = 1):
        self.q = q
        self.X_train = np.asarray(X_train, dtype=np.float64)
        self.engine = engine
        self.seed = seed
        self.min_samples_leaf = min_samples_leaf
        self._cache: dict[tuple[int, ...], DecisionPolicy] = {}
        self._lock = threading.Lock()
        self.train_count = 0

    def get(self, observed) -> DecisionPolicy:
        key = tuple(sorted(int(j) for j in observed))
        policy = self._cache.get(key)
        if policy is not None:
            return policy
        fitted = fit_partial_policy(self.q, self.X_train, key, self.engine,
                                    self.seed, self.min_samples_leaf)
        with self._lock:
            policy = self._cache.get(key)
            if policy is None:
                self._cache[key] = fitted
                self.train_count += 1
                policy = fitted
        return policy


# ---------------------------------------------------------------------------
# Regret-driven acquisition
# ---------------------------------------------------------------------------


def _composite_contexts(state: ObservationState, subset, scenario_X: np.ndarray,
                        d: int) -> tuple[np.ndarray, np.ndarray]:
    n = scenario_X.shape[0]
    base_v, base_m = state.masked_vectors(d)
    V = np.tile(base_v, (n, 1))
    M = np.tile(base_m, (n, 1))
    if subset:
        cols = list(subset)
        V[:, cols] = scenario_X[:, cols]
        M[:, cols] = 1.0
    return V, M


def decision_objective_knn(index: NeighborIndex, q: QModel,
                           policy_table: PartialPolicyTable,
                           state: ObservationState, subset, k: int,
                           alpha: float, cost_model: CostModel,
                           exclude: int | None = None,
                           variant: str = REGRET) -> float:
    """Neighbor-averaged decision regret of acquiring subset v, plus cost.

    For each neighbor, the partial policy for o u v decides on the composite
    context; the regret term compares the full-context value of that action
    against the best full-context action. The neg-value variant drops the
    (candidate-independent) max term and scores -Q of the chosen action.
    """
    subset = tuple(sorted(int(j) for j in subset))
    ids = index.query(state.values_std, state.observed, k, exclude=exclude)
    Xn = index.features[ids]
    observed_after = tuple(sorted(state.observed + subset))
    policy = policy_table.get(observed_after)
    V, M = _composite_contexts(state, subset, Xn, index.n_features)
    chosen = policy.decide_masked(V, M)
    q_chosen = np.where(
        chosen == 1, q.value_full(Xn, 1), q.value_full(Xn, 0)
    )
    if variant == REGRET:
        _, q_best = q.best_full(Xn)
        term = float(np.mean(q_best - q_chosen))
    elif variant == NEG_VALUE:
        term = float(np.mean(-q_chosen))
    else:
        raise DataError(f"unknown objective variant {variant!r}")
    return term + alpha * cost_model.cost(state.observed + subset)


class DecisionLookaheadPolicy:
    """Acquisition policy whose objective is decision regret, not prediction loss."""

    def __init__(self, index: NeighborIndex, q: QModel,
                 policy_table: PartialPolicyTable, cost_model: CostModel,
                 config: SubsetSearchConfig, variant: str = REGRET):
        self.index = index
        self.q = q
        self.policy_table = policy_table
        self.cost_model = cost_model
        self.config = config
        self.variant = variant
        self._lock = threading.Lock()
        self._prepared = False
        self._q_full: np.ndarray | None = None  # (n, 2)
        self._initial: tuple | None = None

    def prepare(self):
        with self._lock:
            if self._prepared:
                return
            X = self.index.features
            self._q_full = np.column_stack(
                [self.q.value_full(X, 0), self.q.value_full(X, 1)]
            )
            self._initial = self._empty_state_rule()
            self._prepared = True

    def _objective_rows(self, state, subset, rows_X, alpha):
        """Mean regret over given scenario rows for one candidate subset."""
        observed_after = tuple(sorted(state.observed + subset))
        policy = self.policy_table.get(observed_after)
        V, M = _composite_contexts(state, subset, rows_X, self.index.n_features)
        chosen = policy.decide_masked(V, M)
        q0 = self.q.value_full(rows_X, 0)
        q1 = self.q.value_full(rows_X, 1)
        q_chosen = np.where(chosen == 1, q1, q0)
        if self.variant == REGRET:
            term = float(np.mean(np.maximum(q0, q1) - q_chosen))
        else:
            term = float(np.mean(-q_chosen))
        return term + alpha * self.cost_model.cost(state.observed + subset)

    def _empty_state_rule(self):
        cfg = self.config
        d = self.index.n_features
        rng = np.random.default_rng((cfg.seed, 0x1418))
        n = self.index.n_rows
        rows = (
            np.sort(rng.choice(n, cfg.initial_rows, replace=False))
            if cfg.initial_rows < n else np.arange(n)
        )
        rows_X = self.index.features[rows]
        state = ObservationState()
        budget = max(min(cfg.initial_candidates, cfg.candidate_budget), d + 1)
        candidates = sample_candidates(d, (), budget, rng)
        objectives = [
            self._objective_rows(state, v, rows_X, cfg.alpha) for v in candidates
        ]
        best = _argmin_candidate(objectives, candidates)
        subset = candidates[best]
        best_single = None
        if subset:
            single_objs = [
                self._objective_rows(state, (w,), rows_X, 0.0) for w in subset
            ]
            best_single = subset[int(np.argmin(single_objs))]
        return subset, best_single, float(objectives[best])

    def decide(self, state: ObservationState, rng, exclude=None) -> PolicyDecision:
        self.prepare()
        d = self.index.n_features
        if len(state.observed) >= d:
            return PolicyDecision(TERMINATE)
        cfg = self.config
        if not state.observed and isinstance(cfg.initial_feature, int) \
                and not isinstance(cfg.initial_feature, bool):
            j0 = int(cfg.initial_feature)
            return PolicyDecision(AcquisitionAction.acquire(j0), (j0,), None)
        if not state.observed and cfg.initial_feature == "global-argmin":
            subset, best_single, objective = self._initial
            if not subset:
                return PolicyDecision(TERMINATE, (), objective)
            if cfg.tie_break == "uniform":
                j = int(subset[rng.integers(len(subset))])
            else:
                j = best_single
            return PolicyDecision(AcquisitionAction.acquire(j), subset, objective)
        ids = self.index.query(state.values_std, state.observed, cfg.k, exclude=exclude)
        Xn = self.index.features[ids]
        qn = self._q_full[ids]
        candidates = sample_candidates(d, state.observed, cfg.candidate_budget, rng)
        objectives = []
        for v in candidates:
            observed_after = tuple(sorted(state.observed + v))
            policy = self.policy_table.get(observed_after)
            V, M = _composite_contexts(state, v, Xn, d)
            chosen = policy.decide_masked(V, M)
            q_chosen = np.where(chosen == 1, qn[:, 1], qn[:, 0])
            if self.variant == REGRET:
                term = float(np.mean(qn.max(axis=1) - q_chosen))
            else:
                term = float(np.mean(-q_chosen))
            objectives.append(term + cfg.alpha * self.cost_model.cost(state.observed + v))
        best = _argmin_candidate(objectives, candidates)
        subset = candidates[best]
        objective = float(objectives[best])
        if not subset:
            return PolicyDecision(TERMINATE, (), objective)
        if len(subset) == 1:
            return PolicyDecision(AcquisitionAction.acquire(subset[0]), subset, objective)
        if cfg.tie_break == "uniform":
            j = int(subset[rng.integers(len(subset))])
        else:
            singles = []
            for w in subset:
                policy = self.policy_table.get(tuple(sorted(state.observed + (w,))))
                V, M = _composite_contexts(state, (w,), Xn, d)
                chosen = policy.decide_masked(V, M)
                q_chosen = np.where(chosen == 1, qn[:, 1], qn[:, 0])
                if self.variant == REGRET:
                    singles.append(float(np.mean(qn.max(axis=1) - q_chosen)))
                else:
                    singles.append(float(np.mean(-q_chosen)))
            j = subset[int(np.argmin(singles))]
        return PolicyDecision(AcquisitionAction.acquire(j), subset, objective)


def acquire_contexts(policy, X_std: np.ndarray, seed: int = 0,
                     exclude_rows: bool = False) -> list[tuple[int, ...]]:
    """Roll the acquisition policy on each row; returns the acquired subsets."""
    X = np.asarray(X_std, dtype=np.float64)
    d = X.shape[1]
    out = []
    for i in range(X.shape[0]):
        rng = np.random.default_rng((seed, i))
        state = ObservationState()
        exclude = i if exclude_rows else None
        for _ in range(d):
            decision = policy.decide(state, rng, exclude=exclude)
            if decision.action.is_terminate:
                break
            j = decision.action.feature
            if j in state.observed:
                raise RuntimeError(f"policy re-acquired feature {j}")
            state = state.with_feature(j, float(X[i, j]), float(X[i, j]))
        out.append(state.observed)
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def decisions_for_subsets(policy_table: PartialPolicyTable, X_std: np.ndarray,
                          subsets) -> np.ndarray:
    """Decision per row when row i sees only its acquired subset."""
    X = np.asarray(X_std, dtype=np.float64)
    n, d = X.shape
    decisions = np.empty(n, dtype=np.int64)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, o in enumerate(subsets):
        groups.setdefault(tuple(sorted(o)), []).append(i)
    for o, rows in groups.items():
        policy = policy_table.get(o)
        mask = np.zeros((len(rows), d))
        if o:
            mask[:, list(o)] = 1.0
        V = X[rows] * mask
        decisions[rows] = policy.decide_masked(V, mask)
    return decisions


def estimate_value(decisions: np.ndarray, X_std: np.ndarray, q: QModel) -> float:
    """Mean estimated outcome of the given decisions: n^-1 sum Q(x_i, a_i)."""
    decisions = np.asarray(decisions, dtype=np.int64)
    q0 = q.value_full(X_std, 0)
    q1 = q.value_full(X_std, 1)
    return float(np.mean(np.where(decisions == 1, q1, q0)))


def estimate_policy_value(policy: DecisionPolicy, X_std: np.ndarray, q: QModel,
                          acquisition=None, policy_table=None, seed: int = 0) -> float:
    """Estimated value of a decision policy, optionally under an AFA policy.

    Without acquisition, the policy decides from its own fixed subset (or
    the full context). With acquisition, each row's subset comes from a
    roll-out and the per-subset table supplies the matching policy.
    """
    X = np.asarray(X_std, dtype=np.float64)
    if acquisition is None:
        decisions = policy.decide_rows(X)
    else:
        if policy_table is None:
            raise DataError("acquisition-driven evaluation needs a policy table")
        subsets = acquire_contexts(acquisition, X, seed=seed)
        decisions = decisions_for_subsets(policy_table, X, subsets)
    return estimate_value(decisions, X, q)


def agreement(policy_a: DecisionPolicy, policy_b: DecisionPolicy,
              X_std: np.ndarray) -> float:
    """Fraction of rows where the two policies pick the same action."""
    a = policy_a.decide_rows(X_std)
    b = policy_b.decide_rows(X_std)
    return float(np.mean(a == b))


def optimal_rate(decisions: np.ndarray, optimal_actions: np.ndarray) -> float:
    """Fraction of decisions matching the ground-truth optimal action."""
    return float(np.mean(np.asarray(decisions) == np.asarray(optimal_actions)))


def feature_selection_baseline(q: QModel, X_std: np.ndarray, budget: int,
                               policy_table: PartialPolicyTable) -> tuple[int, ...]:
    """Greedy forward selection of a fixed subset maximizing estimated value."""
    X = np.asarray(X_std, dtype=np.float64)
    d = X.shape[1]
    if not 0 <= budget <= d:
        raise DataError("budget must be in [0, d]")
    selected: tuple[int, ...] = ()
    for _ in range(budget):
        best_j = None
        best_value = -np.inf
        for j in range(d):
            if j in selected:
                continue
            candidate = tuple(sorted(selected + (j,)))
            policy = policy_table.get(candidate)
            value = estimate_policy_value(policy, X, q)
            if value > best_value:
                best_value = value
                best_j = j
        selected = tuple(sorted(selected + (best_j,)))
    return selected


# ---------------------------------------------------------------------------
# Logged-bandit ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BanditSchema:
    context_columns: tuple[str, ...]
    action_column: str
    reward_column: str


def load_bandit_csv(path, schema: BanditSchema) -> DecisionDataset:
    """Load logged (context, action, reward) rows; actions must be 0/1."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (*schema.context_columns, schema.action_column, schema.reward_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        ctx_idx = [header.index(c) for c in schema.context_columns]
        act_idx = header.index(schema.action_column)
        rew_idx = header.index(schema.reward_column)
        contexts, actions, rewards = [], [], []
        for row_no, row in enumerate(reader, start=1):
            try:
                contexts.append([float(row[i]) for i in ctx_idx])
                action = float(row[act_idx])
                rewards.append(float(row[rew_idx]))
            except (ValueError, IndexError):
                raise DataError(f"{path}: malformed row {row_no}") from None
            if action not in (0.0, 1.0):
                raise DataError(f"{path}: non-binary action at row {row_no}")
            actions.append(int(action))
    if not contexts:
        raise DataError(f"{path}: no data rows")
    return DecisionDataset(
        np.asarray(contexts, dtype=np.float64),
        np.asarray(actions, dtype=np.int64),
        np.asarray(rewards, dtype=np.float64),
        feature_names=tuple(schema.context_columns),
    )


def standardize_contexts(data: DecisionDataset) -> tuple[np.ndarray, StandardizationParams]:
    """Standardize decision contexts; reuses the dataset standardizer."""
    ds = Dataset(data.features, np.zeros(data.n_samples), task_kind=REGRESSION)
    std_ds, params = standardize(ds)
    return std_ds.features, params
