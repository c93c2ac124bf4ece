"""Command-line interface.

Subcommands: gen-data, train-predictor, run-afa, bc-collect, bc-train,
bc-eval, decide, interactive, report. Exit codes: 0 ok, 2 bad config or
arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    CLASSIFICATION,
    CubeConfig,
    DecisionEnvConfig,
    generate_cube,
    generate_decision_env,
    generate_guide,
    load_csv,
    save_csv,
    split,
    standardize,
)
from .errors import ConfigError, DataError
from .harness import (
    DecisionExperimentConfig,
    ExperimentConfig,
    Report,
    ReportRow,
    build_predictor,
    format_report,
    load_report,
    prepare_splits,
    rollout_dataset,
    run_decision_experiment,
    run_experiment,
    score_traces,
    write_report,
)
from .imitation import (
    BcConfig,
    collect_bc_examples,
    load_bc_examples,
    load_student,
    save_bc_examples,
    save_student,
    train_bc,
)
from .interactive import run_session
from .neighbors import build_index
from .policies import (
    CostModel,
    GreedyHindsightPolicy,
    NeighborLookaheadPolicy,
    SubsetHindsightPolicy,
    SubsetSearchConfig,
)
from .predictors import (
    MaskedLinearConfig,
    knn_predictor,
    load_predictor,
    save_predictor,
    train_masked_linear,
)


def _cmd_gen_data(args) -> int:
    if args.dataset == "cube":
        dataset = generate_cube(CubeConfig(n=args.n, sigma=args.sigma, seed=args.seed))
        save_csv(dataset, args.out)
    elif args.dataset == "guide":
        dataset = generate_guide(args.n, args.d, args.seed)
        save_csv(dataset, args.out)
    elif args.dataset == "decision":
        data = generate_decision_env(DecisionEnvConfig(
            n=args.n, seed=args.seed, randomized_treatment=args.randomized,
        ))
        with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(data.feature_names) + ["action", "outcome"])
            for i in range(data.n_samples):
                row = [repr(float(v)) for v in data.features[i]]
                row.append(str(int(data.action[i])))
                row.append(repr(float(data.outcome[i])))
                writer.writerow(row)
    print(f"wrote {args.out}")
    return 0


def _cmd_train_predictor(args) -> int:
    dataset = load_csv(args.data, args.label_column, args.task)
    train, _ = standardize(dataset)
    if args.kind == "knn":
        model = knn_predictor(train, args.k, max_reference=args.max_reference,
                              seed=args.seed)
    else:
        model = train_masked_linear(train, MaskedLinearConfig(
            epochs=args.epochs, step_size=args.step_size, seed=args.seed,
        ))
    save_predictor(model, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_run_afa(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    report = run_experiment(config)
    print(format_report(report))
    if config.out_dir:
        print(f"report written to {config.out_dir}")
    return 0


def _teacher_from_args(args, index, predictor, cost_model, loss_kind):
    if args.teacher == "lookahead":
        spec = dict(args.config_obj.policy)
        spec.pop("kind", None)
        return NeighborLookaheadPolicy(
            index, predictor, cost_model,
            SubsetSearchConfig(alpha=args.alpha, **spec), loss_kind,
        )
    if args.teacher == "greedy":
        return GreedyHindsightPolicy(predictor, loss_kind, budget=args.greedy_budget)
    if args.teacher == "nongreedy":
        return SubsetHindsightPolicy(predictor, cost_model, args.alpha, loss_kind,
                                     candidate_budget=args.config_obj.policy.get(
                                         "candidate_budget", 1000))
    raise ConfigError(f"unknown teacher {args.teacher!r}")


def _cmd_bc_collect(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    args.config_obj = config
    train, val, test = prepare_splits(config.dataset, config.seed)
    predictor = build_predictor(config.predictor, train, config.dataset)
    index = build_index(train)
    cost_model = CostModel.uniform(train.n_features)
    teacher = _teacher_from_args(args, index, predictor, cost_model, config.loss)
    source = {"validation": val, "train": train, "test": test}[args.split]
    limit = args.limit if args.limit is not None else source.n_samples
    examples = collect_bc_examples(
        teacher, source.take(np.arange(min(limit, source.n_samples))), predictor,
        cost_model, loss_kind=config.loss, alpha=args.alpha, seed=config.seed,
        exclude_rows=(args.split == "train"),
    )
    save_bc_examples(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def _cmd_bc_train(args) -> int:
    examples = load_bc_examples(args.examples)
    student = train_bc(examples, BcConfig(epochs=args.epochs, seed=args.seed))
    save_student(student, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_bc_eval(args) -> int:
    config = ExperimentConfig.from_json(args.config)
    train, val, test = prepare_splits(config.dataset, config.seed)
    predictor = build_predictor(config.predictor, train, config.dataset)
    student = load_student(args.student)
    cost_model = CostModel.uniform(train.n_features)
    rows = []
    for alpha in config.alphas:
        traces = rollout_dataset(
            student, test, predictor, cost_model, config.loss, alpha,
            seed=config.seed, limit=config.test_limit,
        )
        rows.append(ReportRow("student", alpha,
                              score_traces(traces, test.task_kind, alpha)))
    report = Report(rows, metadata={"student": str(args.student)})
    print(format_report(report))
    if config.out_dir:
        write_report(report, config.out_dir)
    return 0


def _cmd_decide(args) -> int:
    config = DecisionExperimentConfig.from_json(args.config)
    report = run_decision_experiment(config)
    print(format_report(report))
    if config.out_dir:
        print(f"report written to {config.out_dir}")
    return 0


def _cmd_interactive(args) -> int:
    predictor = load_predictor(args.model)
    if args.train_data is not None:
        dataset = load_csv(args.train_data, args.label_column, args.task)
        train, _ = standardize(dataset)
        index = build_index(train)
    else:
        raise ConfigError("interactive mode needs --train-data for the neighbor index")
    cost_model = CostModel.uniform(train.n_features)
    policy = NeighborLookaheadPolicy(
        index, predictor, cost_model,
        SubsetSearchConfig(
            alpha=args.alpha, k=args.k, candidate_budget=args.candidate_budget,
            initial_feature=args.initial_feature
            if args.initial_feature is not None else "global-argmin",
            seed=args.seed,
        ),
    )
    run_session(predictor, policy, seed=args.seed, instance_id=args.instance_id,
                transcript_path=args.transcript)
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.report)
    print(format_report(report))
    if args.out_dir:
        write_report(report, args.out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afa",
        description="Active feature acquisition experiments and tooling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset as CSV")
    p.add_argument("--dataset", choices=["cube", "guide", "decision"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--d", type=int, default=11, help="dimension (guide only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--randomized", action="store_true",
                   help="randomize treatment (decision only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-predictor", help="train and save a subset predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--task", choices=["classification", "regression"],
                   default=CLASSIFICATION)
    p.add_argument("--kind", choices=["knn", "masked-linear"], required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--max-reference", type=int, default=None)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_predictor)

    p = sub.add_parser("run-afa", help="run an acquisition experiment sweep")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run_afa)

    p = sub.add_parser("bc-collect", help="collect teacher roll-out examples")
    p.add_argument("--config", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--teacher", choices=["lookahead", "greedy", "nongreedy"],
                   default="lookahead")
    p.add_argument("--greedy-budget", type=int, default=4)
    p.add_argument("--split", choices=["train", "validation", "test"],
                   default="validation")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bc_collect)

    p = sub.add_parser("bc-train", help="train a student policy on examples")
    p.add_argument("--examples", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bc_train)

    p = sub.add_parser("bc-eval", help="roll a trained student on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--student", required=True)
    p.set_defaults(func=_cmd_bc_eval)

    p = sub.add_parser("decide", help="run a decision-making acquisition experiment")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_decide)

    p = sub.add_parser("interactive", help="interactive acquisition session")
    p.add_argument("--model", required=True, help="saved predictor JSON")
    p.add_argument("--train-data", required=True, help="training CSV for neighbors")
    p.add_argument("--label-column", default="label")
    p.add_argument("--task", choices=["classification", "regression"],
                   default=CLASSIFICATION)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--candidate-budget", type=int, default=1000)
    p.add_argument("--initial-feature", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instance-id", type=int, default=0)
    p.add_argument("--transcript", default=None)
    p.set_defaults(func=_cmd_interactive)

    p = sub.add_parser("report", help="pretty-print a stored report")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
