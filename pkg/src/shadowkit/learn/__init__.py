"""Training stack: the pose-conditioned low-level control transformer and its
PPO trainer, the chunked imitation transformer with a forward-prediction
feature loss, gradient checking, checkpoints, and the 25Hz/50Hz deploy loop.
"""

from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .features import FeatureOracle
from .gradcheck import grad_check, grad_check_params
from .imitation import (
    ImitationPolicy,
    ImitationPolicyConfig,
    hit_forward,
    hit_loss,
    make_latent_task_demos,
    train_imitation,
)
from .nets import ShadowPolicy, ShadowPolicyConfig, shadow_forward
from .ppo import (
    PPOConfig,
    RolloutBuffer,
    TrainingDiverged,
    clipped_surrogate,
    gae_advantages,
    ppo_update,
    train_shadow,
)
from .deploy import deploy_loop

__all__ = [
    "CheckpointFormatError",
    "FeatureOracle",
    "ImitationPolicy",
    "ImitationPolicyConfig",
    "PPOConfig",
    "RolloutBuffer",
    "ShadowPolicy",
    "ShadowPolicyConfig",
    "TrainingDiverged",
    "clipped_surrogate",
    "deploy_loop",
    "gae_advantages",
    "grad_check",
    "grad_check_params",
    "hit_forward",
    "hit_loss",
    "load_checkpoint",
    "make_latent_task_demos",
    "ppo_update",
    "save_checkpoint",
    "shadow_forward",
    "train_imitation",
    "train_shadow",
]
