"""Synthetic human motion generators.

Produces simple parameterized motions (standing, swaying, squatting, walking,
waving, jumping) in the human pose format. These stand in for recorded mocap
at desk scale: root heights and limb travel are sized to the default humanoid
so retargeted streams have sensible foot contacts. The skeleton follows the
package's axis conventions (x forward, y left, z up; zero pose standing with
arms down).
"""

from __future__ import annotations

import numpy as np

from .motion import (
    BODY_JOINT_NAMES,
    HAND_JOINT_NAMES,
    HumanPoseFrame,
    MotionSequence,
)
from .rotation import Rotation

# rest height of the default humanoid's base above the ground plane
REST_HEIGHT = 1.0342
_LEG = 0.8  # thigh + shin length of the default model


def _identity_rotations(n):
    return tuple(Rotation.identity() for _ in range(n))


def _frame(t, body=None, hands=None, root_pos=(0.0, 0.0, REST_HEIGHT), root_rot=None):
    """Build a frame from {joint_name: Rotation} overrides."""
    body_rots = list(_identity_rotations(len(BODY_JOINT_NAMES)))
    for name, rot in (body or {}).items():
        body_rots[BODY_JOINT_NAMES.index(name)] = rot
    hand_rots = list(_identity_rotations(2 * len(HAND_JOINT_NAMES)))
    for name, rot in (hands or {}).items():
        side, _, joint = name.partition("_")
        idx = (0 if side == "left" else len(HAND_JOINT_NAMES)) + HAND_JOINT_NAMES.index(joint)
        hand_rots[idx] = rot
    return HumanPoseFrame(
        body_joints=tuple(body_rots),
        hand_joints=tuple(hand_rots),
        root_translation=np.asarray(root_pos, dtype=np.float64),
        root_rotation=root_rot or Rotation.identity(),
        timestamp=t,
    )


def _sequence(builder, duration, fps, name):
    n = max(int(round(duration * fps)) + 1, 3)
    frames = [builder(i / fps) for i in range(n)]
    return MotionSequence(frames=frames, fps=float(fps), name=name)


def make_standing(duration=2.0, fps=50.0, name="standing"):
    """Perfectly still standing pose (all joint rotations identity)."""
    return _sequence(lambda t: _frame(t), duration, fps, name)


def make_sway(duration=4.0, fps=50.0, amplitude=0.08, period=2.0, name="sway"):
    """Lateral weight shift: small hip/ankle roll with matching root motion."""

    def builder(t):
        a = amplitude * np.sin(2 * np.pi * t / period)
        roll = Rotation.from_euler(a, 0.0, 0.0)
        anti = Rotation.from_euler(-a, 0.0, 0.0)
        return _frame(
            t,
            body={"left_hip": roll, "right_hip": roll,
                  "left_ankle": anti, "right_ankle": anti},
            root_pos=(0.0, -_LEG * np.sin(a), REST_HEIGHT * np.cos(a)),
        )

    return _sequence(builder, duration, fps, name)


def make_squat(duration=4.0, fps=50.0, depth=0.6, period=4.0, name="squat"):
    """Symmetric squat: hip/knee/ankle flexion with the root dropping so the
    feet stay on the ground (flat-foot two-link geometry)."""

    def builder(t):
        a = depth * 0.5 * (1 - np.cos(2 * np.pi * t / period))
        hip = Rotation.from_euler(0.0, -a, 0.0)
        knee = Rotation.from_euler(0.0, 2 * a, 0.0)
        ankle = Rotation.from_euler(0.0, -a, 0.0)
        z = REST_HEIGHT - _LEG * (1 - np.cos(a))
        return _frame(
            t,
            body={"left_hip": hip, "right_hip": hip,
                  "left_knee": knee, "right_knee": knee,
                  "left_ankle": ankle, "right_ankle": ankle},
            root_pos=(0.0, 0.0, z),
        )

    return _sequence(builder, duration, fps, name)


def make_walk(duration=4.0, fps=50.0, speed=0.5, stride_period=1.0,
              knee_lift=0.8, name="walk"):
    """Forward walking with stance anchoring: the root advances at `speed`
    while the stance hip counter-rotates so the support foot stays planted;
    the swing leg flexes its knee to clear the ground. Produces an
    alternating single-support contact pattern."""
    beta0 = np.arcsin(speed * stride_period / (4 * _LEG))

    def leg(phase):
        # stance on [0, 0.5): hip solves -L sin(beta) = root-to-foot offset
        p = phase % 1.0
        if p < 0.5:
            u = p / 0.5
            beta = -np.arcsin(speed * stride_period * (1 - 2 * u) / (4 * _LEG))
            knee = 0.0
        else:
            u = (p - 0.5) / 0.5
            smooth = 3 * u * u - 2 * u**3
            beta = beta0 * (1 - 2 * smooth)
            # sin^2 keeps the foot slow at lift-off/touch-down so the contact
            # annotation shows double-support transitions
            knee = knee_lift * np.sin(np.pi * u) ** 2
        return (
            Rotation.from_euler(0.0, beta, 0.0),
            Rotation.from_euler(0.0, knee, 0.0),
        )

    def builder(t):
        phase = t / stride_period
        l_hip, l_knee = leg(phase)
        r_hip, r_knee = leg(phase + 0.5)
        return _frame(
            t,
            body={"left_hip": l_hip, "left_knee": l_knee,
                  "right_hip": r_hip, "right_knee": r_knee},
            root_pos=(speed * t, 0.0, REST_HEIGHT),
        )

    return _sequence(builder, duration, fps, name)


def make_wave(duration=3.0, fps=50.0, name="wave"):
    """Right-arm wave: shoulder raised sideways, elbow oscillating, fingers
    curling slightly."""

    def builder(t):
        shoulder = Rotation.from_euler(-2.2, 0.0, 0.0)  # arm up sideways
        elbow = Rotation.from_euler(0.0, 0.8 + 0.4 * np.sin(4 * np.pi * t), 0.0)
        curl = Rotation.from_euler(0.0, 0.3 + 0.2 * np.sin(2 * np.pi * t), 0.0)
        return _frame(
            t,
            body={"right_shoulder": shoulder, "right_elbow": elbow},
            hands={f"right_{f}2": curl for f in ("index", "middle", "ring", "pinky")},
        )

    return _sequence(builder, duration, fps, name)


def make_jump(duration=2.0, fps=50.0, height=0.3, name="jump"):
    """Counter-movement jump: crouch, extend, airborne parabola, land."""
    t_crouch, t_push, t_air = 0.6, 0.2, 0.5

    def builder(t):
        if t < t_crouch:
            a = 0.5 * (1 - np.cos(np.pi * t / t_crouch)) * 0.5
            z = REST_HEIGHT - _LEG * (1 - np.cos(a))
        elif t < t_crouch + t_push:
            u = (t - t_crouch) / t_push
            a = 0.5 * (1 - u)
            z = REST_HEIGHT - _LEG * (1 - np.cos(a))
        elif t < t_crouch + t_push + t_air:
            u = (t - t_crouch - t_push) / t_air
            a = 0.0
            z = REST_HEIGHT + height * 4 * u * (1 - u)
        else:
            a = 0.0
            z = REST_HEIGHT
        hip = Rotation.from_euler(0.0, -a, 0.0)
        knee = Rotation.from_euler(0.0, 2 * a, 0.0)
        ankle = Rotation.from_euler(0.0, -a, 0.0)
        return _frame(
            t,
            body={"left_hip": hip, "right_hip": hip,
                  "left_knee": knee, "right_knee": knee,
                  "left_ankle": ankle, "right_ankle": ankle},
            root_pos=(0.0, 0.0, z),
        )

    return _sequence(builder, duration, fps, name)


GENERATORS = {
    "standing": make_standing,
    "sway": make_sway,
    "squat": make_squat,
    "walk": make_walk,
    "wave": make_wave,
    "jump": make_jump,
}
