"""Preference-aligned 2D robot navigation laboratory.

Train a base navigation policy and a behavior-diverse policy ensemble in a
raycast-lidar world, turn ensemble rollouts into pairwise preference queries,
fit a logistic preference reward model, align the base policy offline by
reward relabeling, and explain the result with flow-field stream plots.
"""

from .align import EvalReport, align_policy, blended_reward, evaluate_policy, welch_t_test
from .config import ExperimentConfig
from .ensemble import (
    Ensemble,
    EnsembleConfig,
    action_diversity,
    ensemble_actor_loss,
    gmdr_loss,
    train_ensemble,
    warm_start,
)
from .nn import Mlp, PolicyNet, QNet, TwoStreamEncoder, adam_step
from .querygen import (
    PreferencePair,
    Segment,
    generate_ensemble_queries,
    generate_segment_queries,
    oracle_label,
    oracle_label_all,
)
from .rewardmodel import (
    RewardModel,
    evaluate_accuracy,
    preference_probability,
    train_reward_model,
)
from .sim2d import (
    Action,
    Observation,
    Scene,
    Simulator,
    Trajectory,
    compute_reward,
    detect_self_intersection,
    lidar_scan,
    min_pool,
    rollout,
    sample_scene,
)
from .td3 import ReplayBuffer, Td3Agent, Td3Config, train_raw
from .viz import FlowField, compute_flow_field, render, settle_heading

__version__ = "0.1.0"
