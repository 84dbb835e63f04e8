"""Tracking rewards.

Norm conventions (fixed here, used everywhere): the planar-velocity and
yaw-rate terms exponentiate an L2 norm / absolute value; pose, orientation and
energy terms are negated squared L2 norms; slip is the L2 norm of per-foot
planar speeds masked by normal force > 1 N. Velocities are compared in the
heading frame, matching how target streams store them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass(frozen=True)
class RewardWeights:
    """Defaults were tuned for training stability on the desk-scale tasks in
    this repo; they are ordinary config, not measured constants."""

    xy_vel: float = 1.0
    yaw_vel: float = 0.5
    joint_pos: float = 0.5
    roll_pitch: float = 0.5
    energy: float = 1e-5
    feet_contact: float = 0.5
    feet_slip: float = 0.5
    alive: float = 0.2

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


TERM_NAMES = tuple(f.name for f in fields(RewardWeights))


@dataclass(frozen=True)
class RewardBreakdown:
    xy_vel: float
    yaw_vel: float
    joint_pos: float
    roll_pitch: float
    energy: float
    feet_contact: float
    feet_slip: float
    alive: float
    total: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def reward_terms_batch(vx, vy, vyaw, roll, pitch, q, qd, tau, contact, foot_speed,
                       foot_force, target_vec, target_contacts, force_threshold=1.0):
    """Vectorized reward terms for N states against N 24-dim target rows.

    Returns (N, 8) in TERM_NAMES order. `contact` and `target_contacts` are
    (N, 2) bools, `foot_speed` (N, 2) planar speeds, `foot_force` (N, 2)
    normal forces.
    """
    target_vec = np.asarray(target_vec, dtype=np.float64)
    dvx = vx - target_vec[..., 0]
    dvy = vy - target_vec[..., 1]
    xy_vel = np.exp(-np.sqrt(dvx * dvx + dvy * dvy))
    yaw_vel = np.exp(-np.abs(vyaw - target_vec[..., 4]))
    dq = q - target_vec[..., 5:24]
    joint_pos = -np.sum(dq * dq, axis=-1)
    dr = roll - target_vec[..., 2]
    dp = pitch - target_vec[..., 3]
    roll_pitch = -(dr * dr + dp * dp)
    e = tau * qd
    energy = -np.sum(e * e, axis=-1)
    feet_contact = np.mean(contact == target_contacts, axis=-1)
    slip = foot_speed * (foot_force > force_threshold)
    feet_slip = -np.sqrt(np.sum(slip * slip, axis=-1))
    alive = np.ones_like(xy_vel)
    return np.stack(
        [xy_vel, yaw_vel, joint_pos, roll_pitch, energy, feet_contact, feet_slip, alive],
        axis=-1,
    )


def breakdown_from_terms(terms, weights: RewardWeights) -> RewardBreakdown:
    w = np.array([getattr(weights, n) for n in TERM_NAMES])
    terms = np.asarray(terms, dtype=np.float64)
    return RewardBreakdown(
        **{n: float(terms[i]) for i, n in enumerate(TERM_NAMES)},
        total=float(terms @ w),
    )


def compute_rewards(state, target, weights: RewardWeights = None,
                    target_contacts=(True, True)) -> RewardBreakdown:
    """Reward terms for one state against one target pose.

    total is exactly the weighted sum of the terms. The alive term is always
    1; episode termination simply stops further reward from accruing.
    target_contacts is the per-foot desired contact flag (from the target
    stream's annotations; TargetPose itself does not carry it).
    """
    if weights is None:
        weights = RewardWeights()
    roll, pitch, yaw = state.base_rotation.as_euler()
    vwx, vwy = state.base_lin_vel[0], state.base_lin_vel[1]
    c, s = np.cos(yaw), np.sin(yaw)
    tv = target.as_vector()
    terms = reward_terms_batch(
        vx=c * vwx + s * vwy,
        vy=-s * vwx + c * vwy,
        vyaw=state.base_ang_vel[2],
        roll=roll,
        pitch=pitch,
        q=state.q,
        qd=state.qd,
        tau=state.tau,
        contact=np.array([f.in_contact for f in state.feet]),
        foot_speed=np.array([f.planar_velocity for f in state.feet]),
        foot_force=np.array([f.normal_force for f in state.feet]),
        target_vec=tv,
        target_contacts=np.asarray(target_contacts, dtype=bool),
    )
    return breakdown_from_terms(terms, weights)
