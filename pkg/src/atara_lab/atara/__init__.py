"""Task-agnostic random action generation: reach policy, sampling, datasets."""

from .ppo import (
    PpoConfig,
    PpoDivergenceError,
    ReachPolicy,
    RolloutBuffer,
    adapt_learning_rate,
    clipped_surrogate,
    gae_advantages,
    ppo_update,
)
from .reach import (
    ReachEnv,
    ReachEnvConfig,
    TrainingDiverged,
    TrainingReport,
    child_rng,
    load_policy,
    reward,
    rollout_policy,
    save_policy,
    solve_ik_rl,
    train_reach_policy,
)
from .sampling import (
    INTERVAL_THRESHOLD,
    PLANE_RANGE,
    BoundaryPlane,
    SamplingStarvationError,
    Trajectory,
    TrajectoryConfig,
    augment_orientation,
    generate_trajectory,
    sample_bimanual_pair,
    sample_bimanual_pairs,
)
from .dataset import AtaraDataset, DatasetWriteError, GenerationSpec, generate_dataset, read_actions

__all__ = [
    "AtaraDataset",
    "BoundaryPlane",
    "DatasetWriteError",
    "GenerationSpec",
    "INTERVAL_THRESHOLD",
    "PLANE_RANGE",
    "PpoConfig",
    "PpoDivergenceError",
    "ReachEnv",
    "ReachEnvConfig",
    "ReachPolicy",
    "RolloutBuffer",
    "SamplingStarvationError",
    "TrainingDiverged",
    "TrainingReport",
    "Trajectory",
    "TrajectoryConfig",
    "adapt_learning_rate",
    "augment_orientation",
    "child_rng",
    "clipped_surrogate",
    "gae_advantages",
    "generate_dataset",
    "generate_trajectory",
    "load_policy",
    "ppo_update",
    "read_actions",
    "reward",
    "rollout_policy",
    "sample_bimanual_pair",
    "sample_bimanual_pairs",
    "save_policy",
    "solve_ik_rl",
    "train_reach_policy",
]
