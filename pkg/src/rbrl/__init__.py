"""Rating-based reward learning and PPO at desk scale."""

from ._kernels import backend
from .envs import make_env
from .nn import Activation, MlpParams, MlpSpec, Squash
from .optim import OptimizerConfig, OptimizerKind
from .policy import PpoConfig, RunRecord, run_rbrl
from .rater import RaterConfig
from .reward import ClassBounds, QConfig, QVariant, RatingDataset, RewardModel, RewardTrainerConfig

__version__ = "0.1.0"

__all__ = [
    "Activation", "ClassBounds", "MlpParams", "MlpSpec", "OptimizerConfig", "OptimizerKind",
    "PpoConfig", "QConfig", "QVariant", "RaterConfig", "RatingDataset", "RewardModel",
    "RewardTrainerConfig", "RunRecord", "Squash", "backend", "make_env", "run_rbrl",
]
