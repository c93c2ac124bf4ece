"""Interactive terminal acquisition session.

The policy names the feature to buy next; the operator types its value (or
``predict`` to stop early, or ``name=value`` to acquire a different feature).
Every event is appended to a JSONL transcript, and a transcript replays to
the same final prediction.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .policies import ObservationState


def _format_prediction(pred) -> str:
    if isinstance(pred, np.ndarray):
        return "[" + ", ".join(f"{p:.4f}" for p in pred) + "]"
    return f"{float(pred):.4f}"


def run_session(predictor, policy, seed: int = 0, instance_id: int = 0,
                transcript_path=None, input_stream=None, output_stream=None):
    """One interactive episode; returns the final (state, prediction).

    Decisions follow exactly the same per-instance RNG stream as a batch
    roll-out with the same seed and instance id, so typing a test row's
    values verbatim reproduces its batch trace.
    """
    stdin = input_stream if input_stream is not None else sys.stdin
    stdout = output_stream if output_stream is not None else sys.stdout
    d = predictor.n_features_in_
    names = [f"x{j}" for j in range(d)]
    std = getattr(predictor, "standardization_", None)
    rng = np.random.default_rng((seed, instance_id))
    if hasattr(policy, "prepare"):
        policy.prepare()
    events = []

    def emit(line: str):
        stdout.write(line + "\n")

    def read_line():
        line = stdin.readline()
        if line == "":
            return None
        return line.strip()

    def acquire(state: ObservationState, j: int, raw_value: float) -> ObservationState:
        std_value = raw_value if std is None else float(std.apply_observed([raw_value], [j])[0])
        events.append({"type": "value", "feature": j, "value": raw_value})
        return state.with_feature(j, raw_value, std_value)

    state = ObservationState()
    emit(f"interactive acquisition session ({d} features); "
         "type a value, name=value, or 'predict'")
    while True:
        current = predictor.predict_dist(state.values_std, state.observed)
        if len(state.observed) >= d:
            emit("all features acquired")
            break
        decision = policy.decide(state, rng)
        if decision.action.is_terminate:
            obj = "" if decision.objective is None else f" (objective {decision.objective:.5f})"
            emit(f"policy stops here{obj}")
            break
        j = decision.action.feature
        diag = f"current prediction {_format_prediction(current)}"
        if decision.objective is not None:
            diag += f"; objective {decision.objective:.5f}"
        if decision.chosen_subset:
            diag += f"; target subset {list(decision.chosen_subset)}"
        emit(diag)
        acquired = None
        while acquired is None:
            emit(f"value for {names[j]} (feature {j})?")
            line = read_line()
            if line is None or line == "predict":
                events.append({"type": "predict"})
                acquired = "stop"
                break
            if "=" in line:
                name, _, text = line.partition("=")
                name = name.strip()
                if name not in names:
                    emit(f"unknown feature name {name!r}; try again")
                    continue
                target = names.index(name)
                if target in state.observed:
                    emit(f"{name} is already acquired; try again")
                    continue
                try:
                    value = float(text.strip())
                except ValueError:
                    emit(f"cannot parse value {text.strip()!r}; try again")
                    continue
                state = acquire(state, target, value)
                acquired = "ok"
                break
            try:
                value = float(line)
            except ValueError:
                emit(f"cannot parse value {line!r}; try again")
                continue
            state = acquire(state, j, value)
            acquired = "ok"
        if acquired == "stop":
            break
    final = predictor.predict_dist(state.values_std, state.observed)
    emit(f"final prediction {_format_prediction(final)} "
         f"from features {list(state.observed)}")
    events.append({
        "type": "final",
        "observed": list(state.observed),
        "prediction": final.tolist() if isinstance(final, np.ndarray) else float(final),
    })
    if transcript_path is not None:
        with Path(transcript_path).open("a", encoding="utf-8") as fh:
            for event in events:
                fh.write(json.dumps(event) + "\n")
    return state, final


def replay_transcript(transcript_path, predictor, policy, seed: int = 0,
                      instance_id: int = 0):
    """Re-run a logged session by feeding its values back; returns the prediction."""
    lines = Path(transcript_path).read_text(encoding="utf-8").strip().splitlines()
    feed = []
    for line in lines:
        event = json.loads(line)
        if event["type"] == "value":
            # name=value form pins the feature even if the policy's proposal
            # order were to differ
            feed.append(f"x{event['feature']}={event['value']!r}")
        elif event["type"] == "predict":
            feed.append("predict")
    import io

    stdin = io.StringIO("\n".join(feed) + "\n")
    stdout = io.StringIO()
    _, final = run_session(
        predictor, policy, seed=seed, instance_id=instance_id,
        input_stream=stdin, output_stream=stdout,
    )
    return final
