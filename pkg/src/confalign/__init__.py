"""Verbalized-confidence alignment with an order-preserving reward, on a toy QA task."""

from .core import PreferencePair, ScoredSample, format_prompt, parse_confidence
from .env import EnvConfig, ToyQAEnv
from .metrics import CalibrationReport, ece, pearson, report, spearman
from .ppo import PPOConfig, WarmStartConfig, train
from .reward import ConqordReward, QualityRewardModel, RewardConfig, RMTrainConfig, alignment_reward, train_quality_rm

__all__ = [
    "CalibrationReport",
    "ConqordReward",
    "EnvConfig",
    "PPOConfig",
    "PreferencePair",
    "QualityRewardModel",
    "RMTrainConfig",
    "RewardConfig",
    "ScoredSample",
    "ToyQAEnv",
    "WarmStartConfig",
    "alignment_reward",
    "ece",
    "format_prompt",
    "parse_confidence",
    "pearson",
    "report",
    "spearman",
    "train",
    "train_quality_rm",
]
