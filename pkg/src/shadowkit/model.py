"""Humanoid model description, loading/validation, and forward kinematics.

The model file (YAML) is the single source of truth for the robot: joints in
actuation order with parent link, axis, fixed offset, limits, gains and
armature, plus per-link inertials and foot contact points. The humanoid has
33 revolute joints grouped as body (19), wrists (2) and hands (12); the body
decomposes into two 5-DoF legs, two 4-DoF arms and a 1-DoF waist, and each
hand has one joint per finger plus two for the thumb.

``q`` vectors everywhere follow the joint order of the model file.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .rotation import Rotation, quat_from_axis_angle, quat_mul, quat_rotate

NUM_JOINTS = 33
GROUP_SIZES = {"body": 19, "wrist": 2, "hand": 12}
_BODY_LIMB_SIZES = {"left_leg": 5, "right_leg": 5, "left_arm": 4, "right_arm": 4, "waist": 1}
_FINGER_COUNTS = {"index": 1, "middle": 1, "ring": 1, "little": 1, "thumb": 2}


class ModelSchemaError(ValueError):
    """Model file violates the schema; message includes the offending field path."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    axis: np.ndarray        # unit 3-vector in parent frame
    offset: np.ndarray      # joint origin in parent frame, meters
    limits: tuple           # (lo, hi) rad
    velocity_limit: float   # rad/s
    torque_limit: float     # N*m
    kp: float
    kd: float
    group: str              # body | wrist | hand
    limb: str
    armature: float         # reflected rotor inertia, kg*m^2
    damping: float          # viscous joint damping, N*m*s/rad
    finger: str = ""


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    com: np.ndarray         # (3,) in link frame
    inertia: np.ndarray     # (3, 3) about the COM


def _field(entry, key, where):
    if key not in entry:
        raise ModelSchemaError(f"{where}.{key}: missing")
    return entry[key]


def _vec3(entry, key, where):
    v = np.asarray(_field(entry, key, where), dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ModelSchemaError(f"{where}.{key}: expected a finite 3-vector")
    return v


class HumanoidModel:
    """Immutable humanoid description with derived index tables."""

    def __init__(self, name, joints, links, root_link, contacts, end_effectors):
        self.name = name
        self.joints = tuple(joints)
        self.links = {l.name: l for l in links}
        self.root_link = root_link
        self.contacts = {k: np.asarray(v, dtype=np.float64) for k, v in contacts.items()}
        self.end_effectors = tuple(end_effectors)
        self._validate()

        self.joint_index = {j.name: i for i, j in enumerate(self.joints)}
        self.joint_names = tuple(j.name for j in self.joints)
        self.groups = {
            g: tuple(i for i, j in enumerate(self.joints) if j.group == g)
            for g in GROUP_SIZES
        }
        self.limits_lo = np.array([j.limits[0] for j in self.joints])
        self.limits_hi = np.array([j.limits[1] for j in self.joints])
        self.velocity_limits = np.array([j.velocity_limit for j in self.joints])
        self.torque_limits = np.array([j.torque_limit for j in self.joints])
        self.default_kp = np.array([j.kp for j in self.joints])
        self.default_kd = np.array([j.kd for j in self.joints])
        self.armature = np.array([j.armature for j in self.joints])
        self.joint_damping = np.array([j.damping for j in self.joints])
        self.total_mass = float(sum(l.mass for l in self.links.values()))
        # parent joint of each link (None for root), for chain walking
        self._link_parent_joint = {j.child: i for i, j in enumerate(self.joints)}

    def _validate(self):
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ModelSchemaError("joints: duplicate joint names")
        if len(self.joints) != NUM_JOINTS:
            raise ModelSchemaError(f"joints: expected {NUM_JOINTS} joints, got {len(self.joints)}")
        counts = {g: sum(j.group == g for j in self.joints) for g in GROUP_SIZES}
        if counts != GROUP_SIZES:
            raise ModelSchemaError(f"joints: group sizes {counts} != {GROUP_SIZES}")
        # actuation order is body, wrists, hands
        order = [j.group for j in self.joints]
        if order != ["body"] * 19 + ["wrist"] * 2 + ["hand"] * 12:
            raise ModelSchemaError("joints: must be listed body(19), wrist(2), hand(12)")
        limb_counts = {}
        for j in self.joints:
            if j.group == "body":
                limb_counts[j.limb] = limb_counts.get(j.limb, 0) + 1
        if limb_counts != _BODY_LIMB_SIZES:
            raise ModelSchemaError(f"joints: body limbs {limb_counts} != {_BODY_LIMB_SIZES}")
        for side in ("left_hand", "right_hand"):
            fingers = {}
            for j in self.joints:
                if j.group == "hand" and j.limb == side:
                    fingers[j.finger] = fingers.get(j.finger, 0) + 1
            if fingers != _FINGER_COUNTS:
                raise ModelSchemaError(f"joints: {side} fingers {fingers} != {_FINGER_COUNTS}")

        for i, j in enumerate(self.joints):
            if not j.limits[0] < j.limits[1]:
                raise ModelSchemaError(
                    f"joints[{i}].limits: lo >= hi on joint '{j.name}'"
                )
            if j.parent not in self.links:
                raise ModelSchemaError(f"joints[{i}].parent: unknown link '{j.parent}'")
            if j.child not in self.links:
                raise ModelSchemaError(f"joints[{i}].child: unknown link '{j.child}'")

        children = [j.child for j in self.joints]
        if len(set(children)) != len(children):
            dup = next(c for c in children if children.count(c) > 1)
            raise ModelSchemaError(f"joints: link '{dup}' has two parent joints")
        if self.root_link not in self.links:
            raise ModelSchemaError(f"root_link: unknown link '{self.root_link}'")
        roots = set(self.links) - set(children)
        if roots != {self.root_link}:
            raise ModelSchemaError(
                f"links: expected single root '{self.root_link}', found roots {sorted(roots)}"
            )
        # acyclicity: every link must reach the root by parent-walking
        parent_of = {j.child: j.parent for j in self.joints}
        for l in self.links:
            seen, cur = set(), l
            while cur != self.root_link:
                if cur in seen:
                    raise ModelSchemaError(f"links: cycle through link '{cur}'")
                seen.add(cur)
                cur = parent_of[cur]
        for l in self.links.values():
            if not l.mass > 0:
                raise ModelSchemaError(f"links: link '{l.name}' mass must be > 0")
        for link in self.contacts:
            if link not in self.links:
                raise ModelSchemaError(f"contacts: unknown link '{link}'")
        for link in self.end_effectors:
            if link not in self.links:
                raise ModelSchemaError(f"end_effectors: unknown link '{link}'")

    def chain(self, link_name):
        """Joint indices from the root to link_name, in application order."""
        if link_name not in self.links:
            raise KeyError(f"unknown link '{link_name}'")
        out = []
        cur = link_name
        while cur != self.root_link:
            ji = self._link_parent_joint[cur]
            out.append(ji)
            cur = self.joints[ji].parent
        return out[::-1]


@dataclass(frozen=True)
class HumanoidPose:
    """Floating-base pose: world base transform plus all 33 joint angles."""

    base_position: np.ndarray
    base_rotation: Rotation
    q: np.ndarray  # (33,)

    def __post_init__(self):
        pos = np.asarray(self.base_position, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValueError("base_position must be a finite 3-vector")
        if q.shape != (NUM_JOINTS,) or not np.all(np.isfinite(q)):
            raise ValueError(f"q must be a finite {NUM_JOINTS}-vector, got shape {q.shape}")
        pos, q = pos.copy(), q.copy()
        pos.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "base_position", pos)
        object.__setattr__(self, "q", q)


class LinkTransforms:
    """World transform per link; the root entry equals the base pose exactly."""

    def __init__(self, positions, rotations):
        self._pos = positions
        self._rot = rotations

    def position(self, link_name):
        return self._pos[link_name]

    def rotation(self, link_name):
        return self._rot[link_name]

    def __contains__(self, link_name):
        return link_name in self._pos

    def links(self):
        return tuple(self._pos)


def load_model(source) -> HumanoidModel:
    """Load and validate a model file. `source` is a path or a parsed dict."""
    if isinstance(source, dict):
        doc = source
    else:
        with open(source) as f:
            doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ModelSchemaError("root: expected a mapping")

    links = []
    for i, entry in enumerate(doc.get("links", [])):
        where = f"links[{i}]"
        diag = np.asarray(_field(entry, "inertia", where), dtype=np.float64)
        if diag.shape != (3,) or np.any(diag <= 0):
            raise ModelSchemaError(f"{where}.inertia: expected 3 positive diagonal entries")
        links.append(
            Link(
                name=str(_field(entry, "name", where)),
                mass=float(_field(entry, "mass", where)),
                com=_vec3(entry, "com", where),
                inertia=np.diag(diag),
            )
        )

    joints = []
    for i, entry in enumerate(doc.get("joints", [])):
        where = f"joints[{i}]"
        axis = _vec3(entry, "axis", where)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-6:
            raise ModelSchemaError(f"{where}.axis: not a unit vector (norm {n:.4g})")
        limits = _field(entry, "limits", where)
        if len(limits) != 2:
            raise ModelSchemaError(f"{where}.limits: expected [lo, hi]")
        kp = float(_field(entry, "kp", where))
        kd = float(_field(entry, "kd", where))
        if kp < 0 or kd < 0:
            raise ModelSchemaError(f"{where}: kp and kd must be >= 0")
        group = str(_field(entry, "group", where))
        if group not in GROUP_SIZES:
            raise ModelSchemaError(f"{where}.group: unknown group '{group}'")
        joints.append(
            Joint(
                name=str(_field(entry, "name", where)),
                parent=str(_field(entry, "parent", where)),
                child=str(_field(entry, "child", where)),
                axis=axis / n,
                offset=_vec3(entry, "offset", where),
                limits=(float(limits[0]), float(limits[1])),
                velocity_limit=float(_field(entry, "velocity_limit", where)),
                torque_limit=float(_field(entry, "torque_limit", where)),
                kp=kp,
                kd=kd,
                group=group,
                limb=str(_field(entry, "limb", where)),
                armature=float(entry.get("armature", 0.01)),
                damping=float(entry.get("damping", 0.1)),
                finger=str(entry.get("finger", "")),
            )
        )

    return HumanoidModel(
        name=str(doc.get("name", "unnamed")),
        joints=joints,
        links=links,
        root_link=str(_field(doc, "root_link", "root")),
        contacts=doc.get("contacts", {}),
        end_effectors=doc.get("end_effectors", ()),
    )


def default_model_path():
    return str(resources.files("shadowkit").joinpath("data/default_model.yaml"))


def load_default_model() -> HumanoidModel:
    return load_model(default_model_path())


def forward_kinematics(model: HumanoidModel, pose: HumanoidPose) -> LinkTransforms:
    """World transforms of every link.

    child = parent transform, then the fixed offset, then the rotation about
    the joint axis by q. Joints are evaluated in file order, which the loader
    guarantees is topological.
    """
    positions = {model.root_link: pose.base_position.copy()}
    rotations = {model.root_link: pose.base_rotation}
    for i, j in enumerate(model.joints):
        p_pos = positions[j.parent]
        p_rot = rotations[j.parent]
        pos = p_pos + p_rot.apply(j.offset)
        rot = p_rot * Rotation(quat_from_axis_angle(j.axis, pose.q[i]), normalize=False)
        positions[j.child] = pos
        rotations[j.child] = rot
    return LinkTransforms(positions, rotations)


def clamp_to_limits(model: HumanoidModel, q):
    """Clip each joint angle to its [lo, hi] range. Idempotent."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != NUM_JOINTS:
        raise ValueError(f"expected {NUM_JOINTS} joint angles, got {q.shape[-1]}")
    if not np.all(np.isfinite(q)):
        raise ValueError("q must be finite")
    return np.clip(q, model.limits_lo, model.limits_hi)


class KinematicChain:
    """Batched point kinematics for one root-to-link chain.

    Precomputes the chain's offsets and axes so world positions of fixed
    points on the end link can be evaluated for N poses at once. Used by the
    simulator for foot contact points at the substep rate.
    """

    def __init__(self, model: HumanoidModel, link_name, points=None):
        idx = model.chain(link_name)
        self.joint_indices = np.array(idx, dtype=np.intp)
        self.offsets = np.stack([model.joints[i].offset for i in idx])
        self.axes = np.stack([model.joints[i].axis for i in idx])
        if points is None:
            points = np.zeros((1, 3))
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)

    def point_positions(self, base_pos, base_quat, q):
        """World positions of the chain's points.

        base_pos (N,3), base_quat (N,4), q (N,33) -> (N, P, 3)
        """
        pos = np.asarray(base_pos, dtype=np.float64)
        rot = np.asarray(base_quat, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        for k, ji in enumerate(self.joint_indices):
            pos = pos + quat_rotate(rot, self.offsets[k])
            rot = quat_mul(rot, quat_from_axis_angle(self.axes[k], q[..., ji]))
        return pos[..., None, :] + quat_rotate(rot[..., None, :], self.points)
