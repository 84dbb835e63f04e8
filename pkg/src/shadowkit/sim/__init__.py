"""Reduced-order humanoid simulator.

A deliberately simple physics stand-in, not an articulated-body engine:
decoupled joint dynamics with per-joint effective inertias, a floating base
driven by gravity, contact forces and pushes, and spring-damper point contacts
under each foot with a Coulomb friction cap. It exists to exercise the full
control stack (1000Hz PD inner loop, control delay, rewards, randomization,
episode logic) with exact, testable timing semantics.
"""

from .env import (
    HumanoidEnv,
    SimConfig,
    SimState,
    FootContact,
    check_termination,
    sit_mode_passthrough,
    target_contact,
)
from .params import EnvParams, PDConfig, RandomizationRanges, pd_torque, sample_env_params
from .rewards import RewardBreakdown, RewardWeights, compute_rewards
from .toy import ToyTrackingEnv

__all__ = [
    "EnvParams",
    "FootContact",
    "HumanoidEnv",
    "PDConfig",
    "RandomizationRanges",
    "RewardBreakdown",
    "RewardWeights",
    "SimConfig",
    "SimState",
    "ToyTrackingEnv",
    "check_termination",
    "compute_rewards",
    "pd_torque",
    "sample_env_params",
    "sit_mode_passthrough",
    "target_contact",
]
