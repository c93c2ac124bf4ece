"""Acquisition policies: subset search, cheating baselines, and roll-outs.

The deployable policy scores candidate feature subsets by the average loss
over scenarios completed from nearest neighbors of the current observation,
plus a weighted acquisition cost, and acquires one feature of the winning
subset per step. Retrospective (cheating) selectors that peek at the full
instance and label are provided as imitation teachers only.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_observed
from .data import StandardizationParams, _default_cube_means
from .neighbors import NeighborIndex
from .predictors import (
    CROSS_ENTROPY,
    LOSS_KINDS,
    SubsetPredictor,
    loss,
    loss_batch,
)

TIE_BREAK_MODES = ("best-single", "uniform")
GLOBAL_ARGMIN = "global-argmin"
NEIGHBOR_FALLBACK = "neighbor-fallback"


# ---------------------------------------------------------------------------
# Core value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationState:
    """Acquired feature indices plus their values (raw and standardized)."""

    observed: tuple[int, ...] = ()
    values_raw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        observed = tuple(int(j) for j in self.observed)
        if len(set(observed)) != len(observed):
            raise ValueError("observed indices must be unique")
        if sorted(observed) != list(observed):
            raise ValueError("observed indices must be sorted")
        raw = np.asarray(self.values_raw, dtype=np.float64).reshape(-1)
        std = np.asarray(self.values_std, dtype=np.float64).reshape(-1)
        if raw.size != len(observed) or std.size != len(observed):
            raise ValueError("value count must match the observed index count")
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "values_raw", raw)
        object.__setattr__(self, "values_std", std)

    def with_feature(self, j: int, raw: float, std: float) -> "ObservationState":
        if j in self.observed:
            raise ValueError(f"feature {j} already acquired")
        order = np.argsort(np.asarray(self.observed + (j,)))
        observed = tuple((self.observed + (j,))[i] for i in order)
        return ObservationState(
            observed,
            np.append(self.values_raw, raw)[order],
            np.append(self.values_std, std)[order],
        )

    def masked_vectors(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """(values, mask) rows of width d with unobserved entries zeroed."""
        values = np.zeros(d)
        mask = np.zeros(d)
        if self.observed:
            values[list(self.observed)] = self.values_std
            mask[list(self.observed)] = 1.0
        return values, mask


@dataclass(frozen=True)
class AcquisitionAction:
    """Acquire one feature, or terminate and commit to a prediction."""

    feature: int | None

    @property
    def is_terminate(self) -> bool:
        return self.feature is None

    @classmethod
    def acquire(cls, j: int) -> "AcquisitionAction":
        return cls(int(j))


TERMINATE = AcquisitionAction(None)


@dataclass(frozen=True, eq=False)
class CostModel:
    """Additive per-feature acquisition costs."""

    per_feature: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.per_feature, dtype=np.float64).reshape(-1)
        if np.any(c <= 0):
            raise ValueError("per-feature costs must be positive")
        object.__setattr__(self, "per_feature", c)

    @classmethod
    def uniform(cls, d: int) -> "CostModel":
        return cls(np.ones(d))

    def cost(self, subset) -> float:
        subset = list(subset)
        if not subset:
            return 0.0
        return float(self.per_feature[subset].sum())


@dataclass
class SubsetSearchConfig:
    """Knobs for the neighbor-scenario subset-search policy.

    ``alpha`` scales acquisition cost against expected loss;
    ``k`` is the scenario-neighbor count; ``candidate_budget`` caps the
    sampled search set (the empty set and all remaining singletons are
    always included). ``initial_feature`` handles the empty state: a fixed
    feature index, "global-argmin" (a one-time search scored on a training
    sample rather than neighbors), or "neighbor-fallback" (run the normal
    search against the first-k-rows neighbor fallback).
    """

    alpha: float = 0.0
    k: int = 5
    candidate_budget: int = 1000
    tie_break: str = "best-single"
    initial_feature: int | str = GLOBAL_ARGMIN
    seed: int = 0
    initial_rows: int = 256
    initial_candidates: int = 512

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.tie_break not in TIE_BREAK_MODES:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if isinstance(self.initial_feature, str) and self.initial_feature not in (
            GLOBAL_ARGMIN,
            NEIGHBOR_FALLBACK,
        ):
            raise ValueError(f"unknown initial_feature rule {self.initial_feature!r}")


@dataclass(frozen=True)
class PolicyDecision:
    """A policy's action plus search diagnostics for the trace."""

    action: AcquisitionAction
    chosen_subset: tuple[int, ...] | None = None
    objective: float | None = None


# ---------------------------------------------------------------------------
# Candidate sampling
# ---------------------------------------------------------------------------


def sample_candidates(d: int, observed, budget: int, rng) -> list[tuple[int, ...]]:
    """Sample candidate subsets of the unacquired features.

    Always contains the empty set and every remaining singleton. The rest
    are drawn as (size uniform on {2..r}, then a uniform combination of
    that size), de-duplicated until ``budget`` distinct subsets exist.
    When the whole power set fits in the budget it is returned instead.
    """
    observed = set(check_observed(observed, d))
    remaining = [j for j in range(d) if j not in observed]
    r = len(remaining)
    if budget < r + 1:
        raise ValueError(f"budget {budget} below the {r + 1} mandatory candidates")
    if 2**r <= budget:
        out = []
        for size in range(r + 1):
            out.extend(itertools.combinations(remaining, size))
        return out
    result: dict[tuple[int, ...], None] = {(): None}
    for j in remaining:
        result[(j,)] = None
    attempts = 0
    cap = 50 * budget
    while len(result) < budget and attempts < cap:
        attempts += 1
        size = int(rng.integers(2, r + 1))
        pick = rng.choice(r, size=size, replace=False)
        result[tuple(sorted(remaining[i] for i in pick))] = None
    if len(result) < budget:
        # rare near-exhaustive regime: finish deterministically in lex order
        for size in range(2, r + 1):
            for combo in itertools.combinations(remaining, size):
                result.setdefault(combo, None)
                if len(result) >= budget:
                    break
            if len(result) >= budget:
                break
    return list(result)


def _check_candidates(candidates, observed, d) -> list[tuple[int, ...]]:
    observed = set(observed)
    out = []
    for v in candidates:
        v = tuple(sorted(int(j) for j in v))
        if observed & set(v):
            raise ValueError(f"candidate {v} overlaps the acquired set")
        if v and (v[0] < 0 or v[-1] >= d):
            raise ValueError(f"candidate {v} out of range")
        out.append(v)
    return out


# ---------------------------------------------------------------------------
# Scenario-averaged loss
# ---------------------------------------------------------------------------


def _scenario_losses(predictor, state, candidates, scenario_X, scenario_y,
                     loss_kind) -> np.ndarray:
    """Mean loss per candidate over scenario completions.

    Each scenario contributes one composite input per candidate v: the
    instance's own values on the acquired features and the scenario row's
    values on v. Losses are scored against the scenario labels and averaged.
    """
    d = predictor.n_features_in_
    n_scen = scenario_X.shape[0]
    base_v, base_m = state.masked_vectors(d)
    m = len(candidates) * n_scen
    V = np.tile(base_v, (m, 1))
    M = np.tile(base_m, (m, 1))
    for i, v in enumerate(candidates):
        if not v:
            continue
        block = slice(i * n_scen, (i + 1) * n_scen)
        cols = list(v)
        V[block, cols] = scenario_X[:, cols]
        M[block, cols] = 1.0
    preds = predictor.predict_masked(V, M)
    labels = np.tile(scenario_y, len(candidates))
    losses = loss_batch(preds, labels, loss_kind)
    return losses.reshape(len(candidates), n_scen).mean(axis=1)


def _neighbor_scenarios(index: NeighborIndex, state: ObservationState, k: int,
                        exclude: int | None) -> tuple[np.ndarray, np.ndarray]:
    ids = index.query(state.values_std, state.observed, k, exclude=exclude)
    return index.features[ids], index.labels[ids]


def expected_subset_loss(index: NeighborIndex, predictor: SubsetPredictor,
                         state: ObservationState, subset, k: int,
                         loss_kind: str = CROSS_ENTROPY,
                         exclude: int | None = None) -> float:
    """Average loss over the k nearest neighbors when subset v is imagined acquired.

    Composite inputs use the instance's own values on the acquired features
    and each neighbor's values on v; predictions are scored against the
    neighbor's label. The empty subset scores the current prediction.
    """
    subset = _check_candidates([subset], state.observed, index.n_features)[0]
    scen_X, scen_y = _neighbor_scenarios(index, state, k, exclude)
    return float(_scenario_losses(predictor, state, [subset], scen_X, scen_y, loss_kind)[0])


def _argmin_candidate(objectives, candidates) -> int:
    """Deterministic argmin: objective, then subset size, then lex order."""
    best_i = -1
    best_key = None
    for i, (obj, v) in enumerate(zip(objectives, candidates)):
        key = (obj, len(v), v)
        if best_key is None or key < best_key:
            best_key = key
            best_i = i
    return best_i


def _search_candidates(state, candidates, scenario_X, scenario_y, predictor,
                       cost_model, alpha, loss_kind) -> tuple[int, float, np.ndarray]:
    """Argmin of scenario loss + alpha * cost over candidates, with pruning.

    The empty set and singletons are scored first; any remaining candidate
    whose cost term alone strictly exceeds the incumbent objective cannot
    win (losses are nonnegative) and is skipped.
    """
    costs = np.array([alpha * cost_model.cost(state.observed + v) for v in candidates])
    objectives = np.full(len(candidates), np.inf)
    cheap = [i for i, v in enumerate(candidates) if len(v) <= 1]
    rest = [i for i, v in enumerate(candidates) if len(v) > 1]
    if cheap:
        sub = [candidates[i] for i in cheap]
        means = _scenario_losses(predictor, state, sub, scenario_X, scenario_y, loss_kind)
        objectives[cheap] = means + costs[cheap]
    incumbent = objectives.min() if cheap else np.inf
    survivors = [i for i in rest if costs[i] <= incumbent]
    if survivors:
        sub = [candidates[i] for i in survivors]
        means = _scenario_losses(predictor, state, sub, scenario_X, scenario_y, loss_kind)
        objectives[survivors] = means + costs[survivors]
    evaluated = cheap + survivors
    local = _argmin_candidate(objectives[evaluated], [candidates[i] for i in evaluated])
    best = evaluated[local]
    return best, float(objectives[best]), objectives


def select_subset(state: ObservationState, index: NeighborIndex,
                  predictor: SubsetPredictor, cost_model: CostModel,
                  config: SubsetSearchConfig, rng,
                  candidates=None, loss_kind: str = CROSS_ENTROPY,
                  exclude: int | None = None) -> tuple[int, ...]:
    """Best candidate subset at the current state (the search step only)."""
    subset, _ = _select_with_objective(
        state, index, predictor, cost_model, config, rng,
        candidates=candidates, loss_kind=loss_kind, exclude=exclude,
    )
    return subset


def _select_with_objective(state, index, predictor, cost_model, config, rng,
                           candidates=None, loss_kind=CROSS_ENTROPY, exclude=None):
    d = index.n_features
    if len(state.observed) >= d:
        raise ValueError("no features left to search over")
    if candidates is None:
        candidates = sample_candidates(d, state.observed, config.candidate_budget, rng)
    else:
        candidates = _check_candidates(candidates, state.observed, d)
    scen_X, scen_y = _neighbor_scenarios(index, state, config.k, exclude)
    best, objective, _ = _search_candidates(
        state, candidates, scen_X, scen_y, predictor, cost_model,
        config.alpha, loss_kind,
    )
    return candidates[best], objective


def tie_break_feature(state: ObservationState, subset, scenario_X, scenario_y,
                      predictor, loss_kind: str) -> int:
    """The single feature of the subset whose sole addition minimizes scenario loss."""
    singles = [(w,) for w in subset]
    means = _scenario_losses(predictor, state, singles, scenario_X, scenario_y, loss_kind)
    return subset[int(np.argmin(means))]


def lookahead_step(state: ObservationState, index: NeighborIndex,
                   predictor: SubsetPredictor, cost_model: CostModel,
                   config: SubsetSearchConfig, rng,
                   candidates=None, loss_kind: str = CROSS_ENTROPY,
                   exclude: int | None = None) -> PolicyDecision:
    """One decision of the subset-search policy: terminate, or acquire one feature.

    An empty winning subset means no acquisition is worth its cost. A
    non-empty one yields one feature, either the scenario-loss tie-break
    winner or a uniform draw, depending on the configured mode.
    """
    d = index.n_features
    if len(state.observed) >= d:
        return PolicyDecision(TERMINATE)
    if candidates is None:
        candidates = sample_candidates(d, state.observed, config.candidate_budget, rng)
    else:
        candidates = _check_candidates(candidates, state.observed, d)
    scen_X, scen_y = _neighbor_scenarios(index, state, config.k, exclude)
    best, objective, _ = _search_candidates(
        state, candidates, scen_X, scen_y, predictor, cost_model,
        config.alpha, loss_kind,
    )
    subset = candidates[best]
    if not subset:
        return PolicyDecision(TERMINATE, (), objective)
    if len(subset) == 1:
        return PolicyDecision(AcquisitionAction.acquire(subset[0]), subset, objective)
    if config.tie_break == "uniform":
        j = int(subset[rng.integers(len(subset))])
    else:
        j = tie_break_feature(state, subset, scen_X, scen_y, predictor, loss_kind)
    return PolicyDecision(AcquisitionAction.acquire(j), subset, objective)


# ---------------------------------------------------------------------------
# Whole-population search for the empty state
# ---------------------------------------------------------------------------


def _population_objectives(predictor, X_rows, y_rows, candidates, cost_model,
                           alpha, loss_kind) -> np.ndarray:
    """Mean loss over sample rows (their own values on v) plus cost, per candidate."""
    d = predictor.n_features_in_
    n_rows = X_rows.shape[0]
    m = len(candidates) * n_rows
    V = np.zeros((m, d))
    M = np.zeros((m, d))
    for i, v in enumerate(candidates):
        if not v:
            continue
        block = slice(i * n_rows, (i + 1) * n_rows)
        cols = list(v)
        V[block, cols] = X_rows[:, cols]
        M[block, cols] = 1.0
    preds = predictor.predict_masked(V, M)
    labels = np.tile(y_rows, len(candidates))
    means = loss_batch(preds, labels, loss_kind).reshape(len(candidates), n_rows).mean(axis=1)
    return means + np.array([alpha * cost_model.cost(v) for v in candidates])


@dataclass(frozen=True)
class InitialRule:
    """Resolved empty-state behavior, computed once per policy instance."""

    kind: str  # "fixed" | "global-argmin" | "neighbor-fallback"
    subset: tuple[int, ...] = ()
    best_single: int | None = None
    objective: float | None = None


def initial_feature(train_features: np.ndarray, train_labels: np.ndarray,
                    predictor: SubsetPredictor, cost_model: CostModel,
                    config: SubsetSearchConfig,
                    loss_kind: str = CROSS_ENTROPY) -> InitialRule:
    """Resolve the first-action rule for the empty observation state."""
    if isinstance(config.initial_feature, int) and not isinstance(config.initial_feature, bool):
        j0 = int(config.initial_feature)
        return InitialRule("fixed", subset=(j0,), best_single=j0)
    if config.initial_feature == NEIGHBOR_FALLBACK:
        return InitialRule(NEIGHBOR_FALLBACK)
    d = train_features.shape[1]
    rng = np.random.default_rng((config.seed, 0x1417))
    n = train_features.shape[0]
    if config.initial_rows < n:
        rows = np.sort(rng.choice(n, config.initial_rows, replace=False))
    else:
        rows = np.arange(n)
    budget = max(min(config.initial_candidates, config.candidate_budget), d + 1)
    candidates = sample_candidates(d, (), budget, rng)
    objectives = _population_objectives(
        predictor, train_features[rows], train_labels[rows], candidates,
        cost_model, config.alpha, loss_kind,
    )
    best = _argmin_candidate(objectives, candidates)
    subset = candidates[best]
    best_single = None
    if subset:
        singles = [(w,) for w in subset]
        single_losses = _population_objectives(
            predictor, train_features[rows], train_labels[rows], singles,
            cost_model, 0.0, loss_kind,
        )
        best_single = subset[int(np.argmin(single_losses))]
    return InitialRule(GLOBAL_ARGMIN, subset, best_single, float(objectives[best]))


# ---------------------------------------------------------------------------
# Deployable policy
# ---------------------------------------------------------------------------


class NeighborLookaheadPolicy:
    """Deployable acquisition policy driven by neighbor-completed scenarios.

    Reads only the acquired values, the training data behind the index, and
    the predictor; it never touches the instance's unacquired features or
    label.
    """

    def __init__(self, index: NeighborIndex, predictor: SubsetPredictor,
                 cost_model: CostModel, config: SubsetSearchConfig,
                 loss_kind: str = CROSS_ENTROPY):
        if loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        self.index = index
        self.predictor = predictor
        self.cost_model = cost_model
        self.config = config
        self.loss_kind = loss_kind
        self._initial: InitialRule | None = None
        self._lock = threading.Lock()

    @property
    def alpha(self) -> float:
        return self.config.alpha

    def prepare(self) -> InitialRule:
        """Resolve (and cache) the empty-state rule; call before parallel roll-outs."""
        with self._lock:
            if self._initial is None:
                self._initial = initial_feature(
                    self.index.features, self.index.labels, self.predictor,
                    self.cost_model, self.config, self.loss_kind,
                )
            return self._initial

    def decide(self, state: ObservationState, rng, exclude: int | None = None) -> PolicyDecision:
        if not state.observed:
            rule = self.prepare()
            if rule.kind == "fixed":
                return PolicyDecision(
                    AcquisitionAction.acquire(rule.best_single), rule.subset, None
                )
            if rule.kind == GLOBAL_ARGMIN:
                if not rule.subset:
                    return PolicyDecision(TERMINATE, (), rule.objective)
                if self.config.tie_break == "uniform":
                    j = int(rule.subset[rng.integers(len(rule.subset))])
                else:
                    j = rule.best_single
                return PolicyDecision(
                    AcquisitionAction.acquire(j), rule.subset, rule.objective
                )
            # neighbor fallback: run the regular search from the empty state
        return lookahead_step(
            state, self.index, self.predictor, self.cost_model, self.config,
            rng, loss_kind=self.loss_kind, exclude=exclude,
        )


# ---------------------------------------------------------------------------
# Retrospective (cheating) selectors: imitation teachers only
# ---------------------------------------------------------------------------


def greedy_hindsight_choice(values_std: np.ndarray, label, observed,
                            predictor: SubsetPredictor,
                            loss_kind: str = CROSS_ENTROPY) -> int:
    """Next single feature minimizing the loss against the true label.

    Uses the instance's real values for not-yet-acquired features, so it is
    usable only where the full instance is known (teacher roll-outs).
    """
    d = predictor.n_features_in_
    observed = check_observed(observed, d)
    remaining = [j for j in range(d) if j not in observed]
    if not remaining:
        raise ValueError("no features left to acquire")
    V = np.zeros((len(remaining), d))
    M = np.zeros((len(remaining), d))
    obs = list(observed)
    for row, j in enumerate(remaining):
        cols = obs + [j]
        V[row, cols] = values_std[cols]
        M[row, cols] = 1.0
    preds = predictor.predict_masked(V, M)
    losses = loss_batch(preds, np.full(len(remaining), label), loss_kind)
    return remaining[int(np.argmin(losses))]


def subset_hindsight_choice(values_std: np.ndarray, label, observed,
                            predictor: SubsetPredictor, loss_kind: str,
                            alpha: float, cost_model: CostModel,
                            candidates) -> tuple[int, ...]:
    """Best subset by true-label loss plus weighted cost (still cheating)."""
    d = predictor.n_features_in_
    observed = check_observed(observed, d)
    candidates = _check_candidates(candidates, observed, d)
    V = np.zeros((len(candidates), d))
    M = np.zeros((len(candidates), d))
    obs = list(observed)
    for row, v in enumerate(candidates):
        cols = obs + list(v)
        V[row, cols] = values_std[cols]
        M[row, cols] = 1.0
    preds = predictor.predict_masked(V, M)
    losses = loss_batch(preds, np.full(len(candidates), label), loss_kind)
    objectives = losses + np.array(
        [alpha * cost_model.cost(tuple(observed) + v) for v in candidates]
    )
    return candidates[_argmin_candidate(objectives, candidates)]


class GreedyHindsightPolicy:
    """Greedy cheating teacher: acquires the best next feature up to a budget."""

    def __init__(self, predictor: SubsetPredictor, loss_kind: str = CROSS_ENTROPY,
                 budget: int = 1):
        self.predictor = predictor
        self.loss_kind = loss_kind
        self.budget = budget

    def bind_instance(self, values_std: np.ndarray, label) -> "_BoundGreedyHindsight":
        if label is None:
            raise ValueError("cheating teacher needs the instance label")
        return _BoundGreedyHindsight(self, np.asarray(values_std, dtype=np.float64), label)


class _BoundGreedyHindsight:
    def __init__(self, parent: GreedyHindsightPolicy, values_std, label):
        self.parent = parent
        self.values_std = values_std
        self.label = label

    def decide(self, state, rng, exclude=None) -> PolicyDecision:
        if len(state.observed) >= min(self.parent.budget, self.values_std.size):
            return PolicyDecision(TERMINATE)
        j = greedy_hindsight_choice(
            self.values_std, self.label, state.observed,
            self.parent.predictor, self.parent.loss_kind,
        )
        return PolicyDecision(AcquisitionAction.acquire(j))


class SubsetHindsightPolicy:
    """Non-greedy cheating teacher: subset search scored on the true label."""

    def __init__(self, predictor: SubsetPredictor, cost_model: CostModel,
                 alpha: float, loss_kind: str = CROSS_ENTROPY,
                 candidate_budget: int = 1000):
        self.predictor = predictor
        self.cost_model = cost_model
        self.alpha = alpha
        self.loss_kind = loss_kind
        self.candidate_budget = candidate_budget

    def bind_instance(self, values_std, label) -> "_BoundSubsetHindsight":
        if label is None:
            raise ValueError("cheating teacher needs the instance label")
        return _BoundSubsetHindsight(self, np.asarray(values_std, dtype=np.float64), label)


class _BoundSubsetHindsight:
    def __init__(self, parent: SubsetHindsightPolicy, values_std, label):
        self.parent = parent
        self.values_std = values_std
        self.label = label

    def decide(self, state, rng, exclude=None) -> PolicyDecision:
        d = self.values_std.size
        if len(state.observed) >= d:
            return PolicyDecision(TERMINATE)
        candidates = sample_candidates(
            d, state.observed, self.parent.candidate_budget, rng
        )
        subset = subset_hindsight_choice(
            self.values_std, self.label, state.observed, self.parent.predictor,
            self.parent.loss_kind, self.parent.alpha, self.parent.cost_model,
            candidates,
        )
        if not subset:
            return PolicyDecision(TERMINATE, (), None)
        best = min(
            subset,
            key=lambda w: loss(
                self.parent.predictor.predict_dist(
                    np.append(self.values_std[list(state.observed)],
                              self.values_std[w]),
                    state.observed + (w,),
                ),
                self.label,
                self.parent.loss_kind,
            ),
        )
        return PolicyDecision(AcquisitionAction.acquire(best), subset, None)


# ---------------------------------------------------------------------------
# Exact conditional-scenario search (generative synthetic models)
# ---------------------------------------------------------------------------


def exact_conditional_select(sampler, state: ObservationState,
                             predictor: SubsetPredictor, cost_model: CostModel,
                             alpha: float, n_scenarios: int, candidates, rng,
                             loss_kind: str = CROSS_ENTROPY) -> tuple[int, ...]:
    """Subset search where scenarios come from an exact conditional sampler.

    ``sampler.sample(state, m, rng)`` must return m full scenario rows
    (standardized units, observed entries equal to the instance's values)
    with matching labels; the same scenario draw is shared across candidates.
    """
    d = predictor.n_features_in_
    candidates = _check_candidates(candidates, state.observed, d)
    scen_X, scen_y = sampler.sample(state, n_scenarios, rng)
    best, _, _ = _search_candidates(
        state, candidates, scen_X, scen_y, predictor, cost_model, alpha, loss_kind
    )
    return candidates[best]


class CubeScenarioSampler:
    """Samples (label, unacquired values | acquired values) for cube data.

    Draws the class from its exact posterior given the observed values,
    then feature values from that class's generative marginals.
    """

    def __init__(self, sigma: float, standardization: StandardizationParams | None = None,
                 means=None):
        from .predictors import cube_ground_truth

        self.sigma = sigma
        self.standardization = standardization
        self.means = np.asarray(means if means is not None else _default_cube_means())
        self._posterior = cube_ground_truth(sigma, standardization, self.means)

    def sample(self, state: ObservationState, m: int, rng):
        d = 20
        posterior = self._posterior.predict_dist(state.values_std, state.observed)
        cats = rng.choice(len(posterior), size=m, p=posterior / posterior.sum())
        raw = rng.random((m, d))
        noise = rng.standard_normal((m, 3))
        cols = cats[:, None] + np.arange(3)[None, :]
        raw[np.arange(m)[:, None], cols] = self.means[cats] + self.sigma * noise
        if self.standardization is not None:
            X = self.standardization.apply(raw)
        else:
            X = raw
        if state.observed:
            X[:, list(state.observed)] = state.values_std
        return X, cats.astype(np.int64)


class DecisionEnvScenarioSampler:
    """Exact conditional sampler for the synthetic decision environment.

    Unobserved features are drawn from their conditionals given the observed
    ones (x0, x1 independent; the last two jointly normal with correlation
    0.3); the outcome label follows the generative treatment and noise model.
    """

    def __init__(self, config, standardization: StandardizationParams | None = None):
        self.config = config
        self.standardization = standardization

    def sample(self, state: ObservationState, m: int, rng):
        from .data import _decision_bracket, _standard_normal_cdf

        cfg = self.config
        corr = 0.3
        observed = set(state.observed)
        raw_obs = (
            self.standardization.invert_observed(state.values_std, state.observed)
            if self.standardization is not None
            else np.asarray(state.values_std)
        )
        own = dict(zip(state.observed, raw_obs))
        x0 = np.full(m, own[0]) if 0 in observed else rng.random(m)
        x1 = np.full(m, own[1]) if 1 in observed else 2.0 * rng.integers(0, 2, m) - 1.0
        if 2 in observed and 3 in observed:
            x2 = np.full(m, own[2])
            x3 = np.full(m, own[3])
        elif 2 in observed:
            x2 = np.full(m, own[2])
            x3 = corr * x2 + math.sqrt(1 - corr**2) * rng.standard_normal(m)
        elif 3 in observed:
            x3 = np.full(m, own[3])
            x2 = corr * x3 + math.sqrt(1 - corr**2) * rng.standard_normal(m)
        else:
            z = rng.standard_normal((m, 2))
            x2 = z[:, 0]
            x3 = corr * z[:, 0] + math.sqrt(1 - corr**2) * z[:, 1]
        X = np.column_stack([x0, x1, x2, x3])
        if cfg.randomized_treatment:
            a = rng.integers(0, 2, m)
        else:
            beta = np.asarray(cfg.probit_coeffs)
            p = _standard_normal_cdf(X @ beta + cfg.probit_intercept)
            a = (rng.random(m) < p).astype(np.int64)
        y = a * _decision_bracket(X) + cfg.outcome_noise_sd * rng.standard_normal(m)
        X_std = self.standardization.apply(X) if self.standardization is not None else X
        if state.observed:
            X_std[:, list(state.observed)] = state.values_std
        return X_std, y


# ---------------------------------------------------------------------------
# Baseline policies
# ---------------------------------------------------------------------------


class RandomPolicy:
    """Acquires a fixed number of uniformly random features, then stops."""

    def __init__(self, budget: int, d: int):
        if budget < 0 or budget > d:
            raise ValueError("budget must be in [0, d]")
        self.budget = budget
        self.d = d

    def decide(self, state, rng, exclude=None) -> PolicyDecision:
        if len(state.observed) >= self.budget:
            return PolicyDecision(TERMINATE)
        remaining = [j for j in range(self.d) if j not in state.observed]
        return PolicyDecision(AcquisitionAction.acquire(int(remaining[rng.integers(len(remaining))])))


class FixedOrderPolicy:
    """Acquires a static feature list in order, then stops."""

    def __init__(self, order):
        self.order = tuple(int(j) for j in order)
        if len(set(self.order)) != len(self.order):
            raise ValueError("order must not repeat features")

    def decide(self, state, rng, exclude=None) -> PolicyDecision:
        for j in self.order:
            if j not in state.observed:
                return PolicyDecision(AcquisitionAction.acquire(j))
        return PolicyDecision(TERMINATE)


# ---------------------------------------------------------------------------
# Environment and roll-out
# ---------------------------------------------------------------------------


class AcquisitionEnvironment:
    """Serves one instance's feature values on request.

    The label is carried for trace scoring only; honest policies never see
    it. Cheating teachers are bound to the full instance by the roll-out
    via their ``bind_instance`` hook.
    """

    def __init__(self, values_raw, label=None,
                 standardization: StandardizationParams | None = None,
                 instance_id: int = 0, exclude_row: int | None = None):
        self.values_raw = np.asarray(values_raw, dtype=np.float64).reshape(-1)
        self.label = label
        self.standardization = standardization
        self.instance_id = int(instance_id)
        self.exclude_row = exclude_row

    @property
    def n_features(self) -> int:
        return self.values_raw.size

    def reveal(self, j: int) -> float:
        return float(self.values_raw[j])

    def reveal_std(self, j: int) -> float:
        if self.standardization is None:
            return float(self.values_raw[j])
        return float(self.standardization.apply_observed([self.values_raw[j]], [j])[0])

    def oracle_view(self) -> tuple[np.ndarray, object]:
        """Full standardized values and label, for cheating teachers only."""
        if self.standardization is None:
            return self.values_raw.copy(), self.label
        return self.standardization.apply(self.values_raw), self.label


@dataclass(frozen=True)
class TraceStep:
    observed_before: tuple[int, ...]
    chosen_subset: tuple[int, ...] | None
    objective: float | None
    action: int | None  # None encodes terminate-and-predict


@dataclass(frozen=True, eq=False)
class RollOutTrace:
    """Full record of one episode."""

    instance_id: int
    steps: tuple[TraceStep, ...]
    acquired: tuple[int, ...]
    final_prediction: np.ndarray | float
    label: object
    total_cost: float
    step_count: int
    final_loss: float | None
    mdp_return: float | None


def rollout(policy, env: AcquisitionEnvironment, predictor: SubsetPredictor,
            cost_model: CostModel, loss_kind: str = CROSS_ENTROPY,
            alpha: float = 0.0, max_steps: int | None = None,
            rng=None) -> RollOutTrace:
    """Run one acquisition episode and score the final prediction.

    Halts after at most d acquisitions (termination is forced once every
    feature is acquired or ``max_steps`` is hit). A policy that re-requests
    an acquired feature is a contract violation and raises.
    """
    d = env.n_features
    if rng is None:
        rng = np.random.default_rng((0, env.instance_id))
    bound = policy
    if hasattr(policy, "bind_instance"):
        values_std, label = env.oracle_view()
        bound = policy.bind_instance(values_std, label)
    limit = d if max_steps is None else min(max_steps, d)
    state = ObservationState()
    steps: list[TraceStep] = []
    while True:
        if len(state.observed) >= limit:
            steps.append(TraceStep(state.observed, None, None, None))
            break
        decision = bound.decide(state, rng, exclude=env.exclude_row)
        action = decision.action
        steps.append(TraceStep(
            state.observed, decision.chosen_subset, decision.objective,
            None if action.is_terminate else action.feature,
        ))
        if action.is_terminate:
            break
        j = action.feature
        if j in state.observed:
            raise RuntimeError(f"policy re-acquired feature {j}")
        if not 0 <= j < d:
            raise RuntimeError(f"policy acquired out-of-range feature {j}")
        state = state.with_feature(j, env.reveal(j), env.reveal_std(j))
    final_prediction = predictor.predict_dist(state.values_std, state.observed)
    total_cost = cost_model.cost(state.observed)
    final_loss = mdp_return = None
    if env.label is not None:
        final_loss = loss(final_prediction, env.label, loss_kind)
        mdp_return = -final_loss - alpha * total_cost
    return RollOutTrace(
        instance_id=env.instance_id,
        steps=tuple(steps),
        acquired=state.observed,
        final_prediction=final_prediction,
        label=env.label,
        total_cost=total_cost,
        step_count=len(state.observed),
        final_loss=final_loss,
        mdp_return=mdp_return,
    )


# ---------------------------------------------------------------------------
# Trace serialization (JSONL, one episode per line)
# ---------------------------------------------------------------------------


def trace_to_dict(trace: RollOutTrace) -> dict:
    pred = trace.final_prediction
    return {
        "instance_id": trace.instance_id,
        "steps": [
            {
                "observed": list(s.observed_before),
                "chosen_subset": None if s.chosen_subset is None else list(s.chosen_subset),
                "objective": s.objective,
                "action": s.action,
            }
            for s in trace.steps
        ],
        "acquired": list(trace.acquired),
        "final_prediction": pred.tolist() if isinstance(pred, np.ndarray) else pred,
        "label": None if trace.label is None else (
            int(trace.label) if isinstance(trace.label, (int, np.integer)) else float(trace.label)
        ),
        "total_cost": trace.total_cost,
        "step_count": trace.step_count,
        "final_loss": trace.final_loss,
        "mdp_return": trace.mdp_return,
    }


def trace_from_dict(blob: dict) -> RollOutTrace:
    steps = tuple(
        TraceStep(
            tuple(s["observed"]),
            None if s["chosen_subset"] is None else tuple(s["chosen_subset"]),
            s["objective"],
            s["action"],
        )
        for s in blob["steps"]
    )
    pred = blob["final_prediction"]
    if isinstance(pred, list):
        pred = np.asarray(pred, dtype=np.float64)
    return RollOutTrace(
        instance_id=blob["instance_id"],
        steps=steps,
        acquired=tuple(blob["acquired"]),
        final_prediction=pred,
        label=blob["label"],
        total_cost=blob["total_cost"],
        step_count=blob["step_count"],
        final_loss=blob["final_loss"],
        mdp_return=blob["mdp_return"],
    )


def save_traces(traces, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_dict(trace)) + "\n")


def load_traces(path) -> list[RollOutTrace]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(trace_from_dict(json.loads(line)))
    return out
