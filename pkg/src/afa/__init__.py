"""Active feature acquisition: cost-aware sequential feature buying.

Build a predictor that handles arbitrary observed subsets, then let a
subset-search policy decide, per instance, which feature to buy next or
when to stop and predict. Includes imitation (behavioral cloning) of the
policy and a decision-making variant driven by outcome regret.
"""

from .data import (
    CubeConfig,
    Dataset,
    DecisionDataset,
    DecisionEnvConfig,
    StandardizationParams,
    generate_cube,
    generate_decision_env,
    generate_guide,
    load_csv,
    save_csv,
    split,
    standardize,
)
from .decisions import (
    BanditSchema,
    DecisionLookaheadPolicy,
    PartialPolicyTable,
    QConfig,
    QModel,
    decision_objective_knn,
    estimate_policy_value,
    feature_selection_baseline,
    fit_partial_policy,
    fit_q,
    full_policy,
    load_bandit_csv,
)
from .errors import ConfigError, DataError, TrainingError
from .harness import (
    DecisionExperimentConfig,
    ExperimentConfig,
    Report,
    acquisition_histogram,
    run_decision_experiment,
    run_experiment,
    write_report,
)
from .imitation import BcConfig, BcExample, StudentPolicy, collect_bc_examples, train_bc
from .neighbors import NeighborIndex, build_index, neighbors
from .policies import (
    AcquisitionAction,
    AcquisitionEnvironment,
    CostModel,
    FixedOrderPolicy,
    GreedyHindsightPolicy,
    NeighborLookaheadPolicy,
    ObservationState,
    RandomPolicy,
    RollOutTrace,
    SubsetHindsightPolicy,
    SubsetSearchConfig,
    expected_subset_loss,
    exact_conditional_select,
    greedy_hindsight_choice,
    lookahead_step,
    rollout,
    sample_candidates,
    select_subset,
    subset_hindsight_choice,
)
from .predictors import (
    KnnSubsetPredictor,
    MaskedLinearConfig,
    MaskedLinearModel,
    SubsetPredictor,
    SubsetTablePredictor,
    clamp_distribution,
    cube_ground_truth,
    knn_predictor,
    load_predictor,
    loss,
    predict,
    predictor_table,
    save_predictor,
    train_masked_linear,
)

__version__ = "0.1.0"
