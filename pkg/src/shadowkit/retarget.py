"""Human-to-humanoid retargeting and 50Hz target-stream construction.

Body and hand joints are retargeted by copying Euler components of the
corresponding human joint rotations (spherical humanoid joints take all
three, 1-DoF joints take one mapped component), wrists by the twist of the
forearm-to-hand relative rotation, and base commands (planar velocities in
the heading frame, roll/pitch targets, yaw rate) by finite differences of
the human global root transform. All joint outputs are clamped to the model
limits. The mapping itself lives in a data file, not code.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .model import HumanoidModel, HumanoidPose, KinematicChain, clamp_to_limits
from .motion import (
    BODY_JOINT_NAMES,
    BODY_JOINT_PARENTS,
    HAND_JOINT_NAMES,
    MotionSequence,
    resample,
)
from .rotation import (
    Rotation,
    quat_to_euler,
    quat_twist_angle,
    relative_rotation,
    unwrap_angles,
)

_COMPONENTS = ("roll", "pitch", "yaw")
TARGET_RATE = 50.0


class RetargetMapError(ValueError):
    """Retarget map file is malformed or inconsistent with the model."""


@dataclass(frozen=True)
class MapEntry:
    source: str          # human joint name
    components: tuple    # subset of roll/pitch/yaw
    dest: tuple          # humanoid joint names, parallel to components
    sign: tuple
    offset: tuple


class RetargetMap:
    """Parsed mapping; `resolve(model)` checks coverage and builds index tables."""

    def __init__(self, body_entries, hand_entries):
        self.body_entries = tuple(body_entries)
        self.hand_entries = tuple(hand_entries)

    def resolve(self, model: HumanoidModel):
        body_dests = [d for e in self.body_entries for d in e.dest]
        hand_dests = [d for e in self.hand_entries for d in e.dest]
        for name, entries in (("body_map", self.body_entries), ("hand_map", self.hand_entries)):
            for e in entries:
                if len(e.components) != len(e.dest):
                    raise RetargetMapError(
                        f"{name} entry '{e.source}': components and dest differ in length"
                    )
                for c in e.components:
                    if c not in _COMPONENTS:
                        raise RetargetMapError(f"{name} entry '{e.source}': unknown component '{c}'")
        expected_body = [model.joint_names[i] for i in model.groups["body"]]
        expected_hand = [model.joint_names[i] for i in model.groups["hand"]]
        missing = sorted(set(expected_body) - set(body_dests))
        if missing:
            raise RetargetMapError(f"body_map does not cover joints: {missing}")
        missing = sorted(set(expected_hand) - set(hand_dests))
        if missing:
            raise RetargetMapError(f"hand_map does not cover joints: {missing}")
        dup = [d for d in set(body_dests + hand_dests)
               if (body_dests + hand_dests).count(d) > 1]
        if dup:
            raise RetargetMapError(f"joints mapped more than once: {sorted(dup)}")
        extra = sorted(set(body_dests) - set(expected_body)) + sorted(
            set(hand_dests) - set(expected_hand)
        )
        if extra:
            raise RetargetMapError(f"unknown destination joints: {extra}")
        return _ResolvedMap(self, model)


class _ResolvedMap:
    """Flat index tables for vectorized copying."""

    def __init__(self, rmap: RetargetMap, model: HumanoidModel):
        self.model = model
        src, comp, dest, sign, offset = [], [], [], [], []
        for e in rmap.body_entries:
            if e.source not in BODY_JOINT_NAMES:
                raise RetargetMapError(f"body_map: unknown human joint '{e.source}'")
            for c, d, s, o in zip(e.components, e.dest, e.sign, e.offset):
                src.append(BODY_JOINT_NAMES.index(e.source))
                comp.append(_COMPONENTS.index(c))
                dest.append(model.joint_index[d])
                sign.append(s)
                offset.append(o)
        self.body_src = np.array(src, dtype=np.intp)
        self.body_comp = np.array(comp, dtype=np.intp)
        self.body_dest = np.array(dest, dtype=np.intp)
        self.body_sign = np.array(sign)
        self.body_offset = np.array(offset)

        self.hand_tables = {}
        for side in ("left", "right"):
            src, comp, local, sign, offset = [], [], [], [], []
            base = model.groups["hand"][0 if side == "left" else 6]
            for e in rmap.hand_entries:
                if model.joints[model.joint_index[e.dest[0]]].limb != f"{side}_hand":
                    continue
                hside, _, hname = e.source.partition("_")
                if hside not in ("left", "right") or hname not in HAND_JOINT_NAMES:
                    raise RetargetMapError(f"hand_map: unknown human joint '{e.source}'")
                hand_idx = (0 if hside == "left" else len(HAND_JOINT_NAMES)) + \
                    HAND_JOINT_NAMES.index(hname)
                for c, d, s, o in zip(e.components, e.dest, e.sign, e.offset):
                    src.append(hand_idx)
                    comp.append(_COMPONENTS.index(c))
                    local.append(model.joint_index[d] - base)
                    sign.append(s)
                    offset.append(o)
            self.hand_tables[side] = (
                np.array(src, dtype=np.intp),
                np.array(comp, dtype=np.intp),
                np.array(local, dtype=np.intp),
                np.array(sign),
                np.array(offset),
            )


def _parse_entries(raw, where):
    entries = []
    for i, item in enumerate(raw):
        try:
            comps = tuple(item["components"])
            dest = tuple(item["dest"])
            n = len(comps)
            entries.append(
                MapEntry(
                    source=str(item["source"]),
                    components=comps,
                    dest=dest,
                    sign=tuple(item.get("sign", [1.0] * n)),
                    offset=tuple(item.get("offset", [0.0] * n)),
                )
            )
        except (KeyError, TypeError) as e:
            raise RetargetMapError(f"{where}[{i}]: {e}") from None
    return entries


def load_retarget_map(source) -> RetargetMap:
    if isinstance(source, dict):
        doc = source
    else:
        with open(source) as f:
            try:
                doc = yaml.safe_load(f)
            except yaml.YAMLError as exc:
                raise RetargetMapError(f"map file is not valid YAML: {exc}") from None
    if not isinstance(doc, dict) or "body_map" not in doc or "hand_map" not in doc:
        raise RetargetMapError("map file must contain body_map and hand_map sections")
    return RetargetMap(
        _parse_entries(doc["body_map"], "body_map"),
        _parse_entries(doc["hand_map"], "hand_map"),
    )


def default_retarget_map_path():
    return str(resources.files("shadowkit").joinpath("data/default_retarget_map.yaml"))


# ---------------------------------------------------------------------------
# target pose types
# ---------------------------------------------------------------------------

def _frozen_array(obj, name, value, shape):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite array of shape {shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class TargetPose:
    """Conditioning signal for the low-level policy.

    Vector layout (24): [vx, vy, roll, pitch, vyaw, q(19)]; planar velocities
    are in the heading (yaw-only) frame.
    """

    vx: float
    vy: float
    roll: float
    pitch: float
    vyaw: float
    q: np.ndarray  # (19,)

    def __post_init__(self):
        for f in ("vx", "vy", "roll", "pitch", "vyaw"):
            v = float(getattr(self, f))
            if not np.isfinite(v):
                raise ValueError(f"{f} must be finite")
            object.__setattr__(self, f, v)
        _frozen_array(self, "q", self.q, (19,))

    def as_vector(self):
        return np.concatenate(
            [[self.vx, self.vy, self.roll, self.pitch, self.vyaw], self.q]
        )


@dataclass(frozen=True)
class WholeBodyTarget(TargetPose):
    """TargetPose plus the directly PD-tracked wrist and hand setpoints."""

    wrist: np.ndarray = None  # (2,)
    hand: np.ndarray = None   # (12,)

    def __post_init__(self):
        super().__post_init__()
        _frozen_array(self, "wrist", self.wrist, (2,))
        _frozen_array(self, "hand", self.hand, (12,))

    def full_q(self):
        """All 33 joint targets in model order."""
        return np.concatenate([self.q, self.wrist, self.hand])


# ---------------------------------------------------------------------------
# retarget operations
# ---------------------------------------------------------------------------

def human_global_rotation(frame, joint_name) -> Rotation:
    """World orientation of the segment a human body joint orients."""
    chain = []
    j = joint_name
    while j is not None:
        chain.append(j)
        j = BODY_JOINT_PARENTS[j]
    rot = frame.root_rotation
    for name in reversed(chain):
        rot = rot * frame.body_joints[BODY_JOINT_NAMES.index(name)]
    return rot


def _as_resolved(rmap, model):
    return rmap if isinstance(rmap, _ResolvedMap) else rmap.resolve(model)


def retarget_body(frame, rmap, model: HumanoidModel, clamp=True):
    """19 body joint angles, clamped to model limits unless clamp=False."""
    resolved = _as_resolved(rmap, model)
    quats = np.stack([r.quat for r in frame.body_joints])
    eul = np.stack(quat_to_euler(quats))  # (3, 22) rows roll, pitch, yaw
    q = np.zeros(len(model.joints))
    q[resolved.body_dest] = (
        resolved.body_sign * eul[resolved.body_comp, resolved.body_src]
        + resolved.body_offset
    )
    if clamp:
        q = clamp_to_limits(model, q)
    return q[:19]


def retarget_hand(frame, side, rmap, model: HumanoidModel, clamp=True):
    """6 hand joint angles for one side, clamped to model limits unless clamp=False."""
    resolved = _as_resolved(rmap, model)
    src, comp, local, sign, offset = resolved.hand_tables[side]
    quats = np.stack([r.quat for r in frame.hand_joints])
    eul = np.stack(quat_to_euler(quats))  # (3, 30)
    out = np.zeros(6)
    out[local] = sign * eul[comp, src] + offset
    if not clamp:
        return out
    base = model.groups["hand"][0 if side == "left" else 6]
    lo = model.limits_lo[base : base + 6]
    hi = model.limits_hi[base : base + 6]
    return np.clip(out, lo, hi)


def compute_wrist_angle(forearm_rot: Rotation, hand_rot: Rotation, axis=(0.0, 0.0, 1.0)):
    """Signed wrist angle: twist of the forearm-to-hand relative rotation
    about the wrist joint axis (swing component discarded)."""
    rel = relative_rotation(forearm_rot, hand_rot)
    return rel.twist_angle(np.asarray(axis, dtype=np.float64))


# ---------------------------------------------------------------------------
# target stream
# ---------------------------------------------------------------------------

class TargetStream:
    """A 50Hz sequence of whole-body targets with foot-contact annotations.

    Backed by flat arrays for fast slicing in the simulator; indexing returns
    WholeBodyTarget objects. `pose` rows are TargetPose vectors (n, 24);
    `wrist` (n, 2); `hand` (n, 12); `contacts` (n, 2) bool, left then right.
    """

    def __init__(self, pose, wrist, hand, contacts, rate=TARGET_RATE, name="", meta=None):
        self.pose = np.asarray(pose, dtype=np.float64)
        self.wrist = np.asarray(wrist, dtype=np.float64)
        self.hand = np.asarray(hand, dtype=np.float64)
        self.contacts = np.asarray(contacts, dtype=bool)
        self.rate = float(rate)
        self.name = name
        self.meta = dict(meta or {})
        n = len(self.pose)
        if self.pose.shape != (n, 24) or self.wrist.shape != (n, 2) or \
                self.hand.shape != (n, 12) or self.contacts.shape != (n, 2):
            raise ValueError("inconsistent target stream array shapes")
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def __len__(self):
        return len(self.pose)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return TargetStream(self.pose[k], self.wrist[k], self.hand[k],
                                self.contacts[k], self.rate, self.name, self.meta)
        row = self.pose[k]
        return WholeBodyTarget(
            vx=row[0], vy=row[1], roll=row[2], pitch=row[3], vyaw=row[4],
            q=row[5:], wrist=self.wrist[k], hand=self.hand[k],
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))


_TGT_MAGIC = b"HPTGT1"
_TGT_HEADER = struct.Struct("<fIHH")
_TGT_RECORD = struct.Struct("<38fB")


class TargetFormatError(ValueError):
    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


def save_target_stream(stream: TargetStream, path):
    name_b = stream.name.encode("utf-8")
    meta_b = json.dumps(stream.meta, sort_keys=True).encode("utf-8")
    if len(name_b) > 0xFFFF or len(meta_b) > 0xFFFF:
        raise ValueError("name or metadata too large")
    with open(path, "wb") as f:
        f.write(_TGT_MAGIC)
        f.write(_TGT_HEADER.pack(stream.rate, len(stream), len(name_b), len(meta_b)))
        f.write(name_b)
        f.write(meta_b)
        for k in range(len(stream)):
            vals = np.concatenate([stream.pose[k], stream.wrist[k], stream.hand[k]])
            bits = int(stream.contacts[k, 0]) | (int(stream.contacts[k, 1]) << 1)
            f.write(_TGT_RECORD.pack(*vals.astype(np.float32), bits))


def load_target_stream(path) -> TargetStream:
    data = Path(path).read_bytes()
    if data[: len(_TGT_MAGIC)] != _TGT_MAGIC:
        raise TargetFormatError("bad magic, not a target stream file", byte_offset=0)
    off = len(_TGT_MAGIC)
    if len(data) < off + _TGT_HEADER.size:
        raise TargetFormatError("truncated header", byte_offset=len(data))
    rate, n, name_len, meta_len = _TGT_HEADER.unpack_from(data, off)
    off += _TGT_HEADER.size
    if len(data) < off + name_len + meta_len:
        raise TargetFormatError("truncated name/meta", byte_offset=len(data))
    name = data[off : off + name_len].decode("utf-8")
    off += name_len
    meta = json.loads(data[off : off + meta_len].decode("utf-8")) if meta_len else {}
    off += meta_len
    need = off + n * _TGT_RECORD.size
    if len(data) != need:
        raise TargetFormatError(
            f"expected {need} bytes for {n} records, file has {len(data)}",
            byte_offset=min(need, len(data)),
        )
    pose = np.empty((n, 24))
    wrist = np.empty((n, 2))
    hand = np.empty((n, 12))
    contacts = np.empty((n, 2), dtype=bool)
    for k in range(n):
        vals = _TGT_RECORD.unpack_from(data, off + k * _TGT_RECORD.size)
        row = np.array(vals[:38], dtype=np.float64)
        pose[k] = row[:24]
        wrist[k] = row[24:26]
        hand[k] = row[26:]
        contacts[k, 0] = bool(vals[38] & 1)
        contacts[k, 1] = bool(vals[38] & 2)
    return TargetStream(pose, wrist, hand, contacts, rate=rate, name=name, meta=meta)


def _full_joint_targets(seq, resolved, model, clamp=True):
    """(n, 33) retargeted joint angles for every frame of a sequence."""
    n = len(seq)
    wrist_axes = {
        side: model.joints[model.joint_index[f"{side}_wrist"]].axis
        for side in ("left", "right")
    }
    q_full = np.zeros((n, len(model.joints)))
    for i, frame in enumerate(seq.frames):
        q_full[i, :19] = retarget_body(frame, resolved, model, clamp=clamp)
        for s_i, side in enumerate(("left", "right")):
            q_full[i, 19 + s_i] = compute_wrist_angle(
                human_global_rotation(frame, f"{side}_elbow"),
                human_global_rotation(frame, f"{side}_wrist"),
                wrist_axes[side],
            )
            lo = 21 + 6 * s_i
            q_full[i, lo : lo + 6] = retarget_hand(frame, side, resolved, model,
                                                   clamp=clamp)
    if clamp:
        q_full = clamp_to_limits(model, q_full)
    return q_full


def retarget_unclamped(seq: MotionSequence, rmap, model: HumanoidModel):
    """(n, 33) joint targets at 50Hz with limit clamping skipped.

    Comparing this against the clamped stream shows which entries the joint
    limits actually bit; the stream writer always clamps.
    """
    if seq.fps != TARGET_RATE:
        seq = resample(seq, TARGET_RATE)
    return _full_joint_targets(seq, _as_resolved(rmap, model), model, clamp=False)


def build_target_stream(
    seq: MotionSequence,
    rmap: RetargetMap,
    model: HumanoidModel,
    contact_height=0.05,
    contact_speed=0.2,
) -> TargetStream:
    """Retarget a motion sequence into a 50Hz whole-body target stream.

    Planar velocity targets are central finite differences of the root
    translation rotated into the heading (yaw-only) frame; the yaw-rate
    target differences the unwrapped root yaw. Foot contact annotations come
    from forward kinematics of the retargeted pose: a foot is in contact when
    its lowest contact point is below `contact_height` and its speed is below
    `contact_speed`.
    """
    if len(seq) < 3:
        raise ValueError("target stream needs at least 3 frames")
    if seq.fps != TARGET_RATE:
        seq = resample(seq, TARGET_RATE)
    if len(seq) < 3:
        raise ValueError("sequence too short after resampling to 50Hz")
    resolved = _as_resolved(rmap, model)
    n = len(seq)
    dt = 1.0 / TARGET_RATE

    q_full = _full_joint_targets(seq, resolved, model, clamp=True)

    root_q = np.stack([f.root_rotation.quat for f in seq.frames])
    roll, pitch, yaw = quat_to_euler(root_q)
    yaw_u = unwrap_angles(yaw)
    trans = np.stack([f.root_translation for f in seq.frames])

    v_world = np.empty((n, 3))
    v_world[1:-1] = (trans[2:] - trans[:-2]) / (2 * dt)
    v_world[0] = (trans[1] - trans[0]) / dt
    v_world[-1] = (trans[-1] - trans[-2]) / dt
    vyaw = np.empty(n)
    vyaw[1:-1] = (yaw_u[2:] - yaw_u[:-2]) / (2 * dt)
    vyaw[0] = (yaw_u[1] - yaw_u[0]) / dt
    vyaw[-1] = (yaw_u[-1] - yaw_u[-2]) / dt

    cy, sy = np.cos(yaw), np.sin(yaw)
    vx = cy * v_world[:, 0] + sy * v_world[:, 1]
    vy = -sy * v_world[:, 0] + cy * v_world[:, 1]

    # contact annotation from FK of the retargeted humanoid pose
    chains = {
        side: KinematicChain(model, f"{side}_foot", model.contacts[f"{side}_foot"])
        for side in ("left", "right")
    }
    contacts = np.zeros((n, 2), dtype=bool)
    for s_i, side in enumerate(("left", "right")):
        pts = chains[side].point_positions(trans, root_q, q_full)  # (n, P, 3)
        height = pts[..., 2].min(axis=1)
        centroid = pts.mean(axis=1)
        speed = np.zeros(n)
        speed[1:-1] = np.linalg.norm(centroid[2:] - centroid[:-2], axis=1) / (2 * dt)
        speed[0] = np.linalg.norm(centroid[1] - centroid[0]) / dt
        speed[-1] = np.linalg.norm(centroid[-1] - centroid[-2]) / dt
        contacts[:, s_i] = (height < contact_height) & (speed < contact_speed)

    pose = np.column_stack([vx, vy, roll, pitch, vyaw, q_full[:, :19]])
    return TargetStream(
        pose=pose,
        wrist=q_full[:, 19:21],
        hand=q_full[:, 21:],
        contacts=contacts,
        rate=TARGET_RATE,
        name=seq.name,
    )
