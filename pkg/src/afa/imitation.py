"""Behavioral cloning of acquisition policies.

Teacher roll-outs become (masked state, action) pairs; a multinomial linear
classifier over the masked encoding learns to reproduce the teacher's next
action, with terminate-and-predict as an extra learnable category. At
inference the student is restricted to legal actions, so it never
re-acquires a feature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import as_float_matrix
from .data import Dataset
from .errors import TrainingError
from .policies import (
    AcquisitionAction,
    AcquisitionEnvironment,
    CostModel,
    ObservationState,
    PolicyDecision,
    TERMINATE,
    rollout,
)
from .predictors import CROSS_ENTROPY, _encode_masked, _multinomial_loss_grad


@dataclass(frozen=True, eq=False)
class BcExample:
    """One teacher step: masked state and the action taken from it.

    ``action`` is a feature index, or d (one past the last feature) for the
    terminal predict action.
    """

    values: np.ndarray
    mask: np.ndarray
    action: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        mask = np.asarray(self.mask, dtype=np.float64).reshape(-1)
        if values.shape != mask.shape:
            raise ValueError("values and mask must have equal length")
        d = values.size
        if not 0 <= self.action <= d:
            raise ValueError(f"action {self.action} out of range for d={d}")
        if self.action < d and mask[self.action] != 0:
            raise ValueError("action must not be an already-observed feature")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)


def collect_bc_examples(teacher, dataset: Dataset, predictor, cost_model: CostModel,
                        loss_kind: str = CROSS_ENTROPY, alpha: float = 0.0,
                        seed: int = 0, exclude_rows: bool = False,
                        max_steps: int | None = None) -> list[BcExample]:
    """Roll the teacher on every dataset row and record one example per step.

    The terminal predict step is included, so a student can learn to stop.
    ``exclude_rows`` marks each row as its own neighbor-exclusion id (use
    when the dataset is the same one behind the teacher's index).
    """
    d = dataset.n_features
    examples: list[BcExample] = []
    for i in range(dataset.n_samples):
        env = AcquisitionEnvironment(
            dataset.features[i] if dataset.standardization is None
            else dataset.standardization.invert(dataset.features[i]),
            label=dataset.labels[i],
            standardization=dataset.standardization,
            instance_id=i,
            exclude_row=i if exclude_rows else None,
        )
        trace = rollout(
            teacher, env, predictor, cost_model, loss_kind=loss_kind,
            alpha=alpha, max_steps=max_steps,
            rng=np.random.default_rng((seed, i)),
        )
        values = np.zeros(d)
        mask = np.zeros(d)
        for step in trace.steps:
            action = d if step.action is None else step.action
            examples.append(BcExample(values.copy(), mask.copy(), action))
            if step.action is None:
                break
            j = step.action
            values[j] = env.reveal_std(j)
            mask[j] = 1.0
    return examples


@dataclass
class BcConfig:
    learner: str = "linear"  # "linear" | "tree"
    epochs: int = 300
    step_size: float | str = "auto"
    seed: int = 0
    l2: float = 1e-6
    min_samples_leaf: int = 5


class StudentPolicy:
    """Parametric clone of a teacher: (d+1)-way classifier over masked states.

    Scores all d features plus the terminal action; at decision time the
    argmax runs over legal actions only (unacquired features and terminate),
    with ties resolved features-first by lowest index, terminate last.
    The reference scorer is the masked multinomial linear head; a tree
    scorer plugs in behind the same interface for teachers whose behavior
    is not linearly decodable from the masked state.
    """

    def __init__(self, d: int, coef: np.ndarray | None = None, tree=None):
        self.d = d
        self.tree_ = tree
        if tree is None:
            self.coef_ = np.asarray(coef, dtype=np.float64)
            if self.coef_.shape != (2 * d + 1, d + 1):
                raise ValueError("coefficient matrix has the wrong shape")
        else:
            self.coef_ = None

    @classmethod
    def constant(cls, d: int, action: int) -> "StudentPolicy":
        coef = np.zeros((2 * d + 1, d + 1))
        coef[-1, action] = 1.0
        return cls(d, coef)

    def action_scores(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        Z = _encode_masked(values[None, :], mask[None, :])
        if self.tree_ is not None:
            scores = np.zeros(self.d + 1)
            proba = self.tree_.predict_proba(Z[:, :-1])[0]
            scores[self.tree_.classes_] = proba
            return scores
        return (Z @ self.coef_)[0]

    def decide(self, state: ObservationState, rng=None, exclude=None) -> PolicyDecision:
        values, mask = state.masked_vectors(self.d)
        scores = self.action_scores(values, mask)
        legal = [j for j in range(self.d) if j not in state.observed]
        best_action = self.d  # terminate; any legal feature with >= score wins
        best_score = scores[self.d]
        for j in legal:
            if scores[j] >= best_score and (best_action == self.d or scores[j] > best_score):
                best_score = scores[j]
                best_action = j
        if best_action == self.d:
            return PolicyDecision(TERMINATE)
        return PolicyDecision(AcquisitionAction.acquire(best_action))


def _auto_step_size(Z: np.ndarray, l2: float) -> float:
    """1 / L for the multinomial loss: guarantees full-batch descent."""
    m = Z.shape[0]
    v = np.ones(Z.shape[1]) / np.sqrt(Z.shape[1])
    for _ in range(60):
        w = Z.T @ (Z @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 1.0
        v = w / norm
    lam_max = float(v @ (Z.T @ (Z @ v)))
    lipschitz = 0.5 * lam_max / m + l2
    return 1.0 / max(lipschitz, 1e-12)


def train_bc(examples, config: BcConfig | None = None,
             return_loss_trace: bool = False):
    """Fit the student on teacher examples by full-batch gradient descent.

    With the auto step size the training cross-entropy is non-increasing.
    Fewer than two distinct actions shortcut to a constant policy.
    """
    config = config or BcConfig()
    if not examples:
        raise ValueError("no examples to train on")
    d = examples[0].values.size
    actions = np.asarray([e.action for e in examples], dtype=np.int64)
    if len(set(actions.tolist())) < 2:
        student = StudentPolicy.constant(d, int(actions[0]))
        return (student, [0.0]) if return_loss_trace else student
    V = as_float_matrix(np.stack([e.values for e in examples]))
    M = np.stack([e.mask for e in examples])
    Z = _encode_masked(V, M)
    if config.learner == "tree":
        from sklearn.tree import DecisionTreeClassifier

        tree = DecisionTreeClassifier(random_state=config.seed,
                                      min_samples_leaf=config.min_samples_leaf)
        tree.fit(Z[:, :-1], actions)
        student = StudentPolicy(d, tree=tree)
        return (student, []) if return_loss_trace else student
    if config.learner != "linear":
        raise ValueError(f"unknown student learner {config.learner!r}")
    n_actions = d + 1
    W = np.zeros((2 * d + 1, n_actions))
    step = config.step_size
    if step == "auto":
        step = _auto_step_size(Z, config.l2)
    losses = []
    for epoch in range(config.epochs):
        value, grad = _multinomial_loss_grad(W, Z, actions, n_actions, config.l2)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        losses.append(value)
        W -= step * grad
    student = StudentPolicy(d, W)
    return (student, losses) if return_loss_trace else student


def agreement_rate(student: StudentPolicy, traces, dataset: Dataset) -> float:
    """Fraction of teacher steps where the student picks the same action.

    Teacher traces are replayed state by state; instance ids index into the
    (standardized) dataset the traces were produced on.
    """
    total = 0
    agree = 0
    d = dataset.n_features
    for trace in traces:
        row = dataset.features[trace.instance_id]
        state = ObservationState()
        for step in trace.steps:
            decision = student.decide(state)
            predicted = d if decision.action.is_terminate else decision.action.feature
            actual = d if step.action is None else step.action
            total += 1
            agree += int(predicted == actual)
            if step.action is None:
                break
            j = step.action
            state = state.with_feature(j, float(row[j]), float(row[j]))
    return agree / total if total else 0.0


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_bc_examples(examples, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(json.dumps({
                "values": e.values.tolist(),
                "mask": e.mask.tolist(),
                "action": int(e.action),
            }) + "\n")


def load_bc_examples(path) -> list[BcExample]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                blob = json.loads(line)
                out.append(BcExample(
                    np.asarray(blob["values"]), np.asarray(blob["mask"]),
                    int(blob["action"]),
                ))
    return out


def save_student(student: StudentPolicy, path) -> None:
    if student.coef_ is None:
        raise ValueError("only the linear student serializes to JSON")
    blob = {"kind": "bc-student", "d": student.d, "coef": student.coef_.tolist()}
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_student(path) -> StudentPolicy:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("kind") != "bc-student":
        raise ValueError(f"{path} does not hold a student policy")
    return StudentPolicy(blob["d"], np.asarray(blob["coef"]))
