"""Human pose data model and the canonical binary motion format.

A pose frame stores the 22 body and 30 hand spherical joints of an
SMPL-X-style skeleton as local rotations, plus a global root transform.
Sequences are serialized to a little-endian binary format:

    magic   "HPMOT1"
    header  fps f32, n_frames u32, name_len u16, name utf-8
    frame   53 quaternions (w,x,y,z as f32): root, 22 body, 30 hand,
            root translation 3 f32 (meters), timestamp f64 (seconds)

Frame records are 868 bytes. Quaternions are stored exactly as float32;
the loader validates unit norm but never renormalizes, so save -> load is
bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rotation import Rotation, quat_slerp

# SMPL-X style joint order. Hand joints are left hand then right hand,
# three segments per finger from knuckle to tip.
BODY_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)
HAND_JOINT_NAMES = (
    "index1", "index2", "index3", "middle1", "middle2", "middle3",
    "pinky1", "pinky2", "pinky3", "ring1", "ring2", "ring3",
    "thumb1", "thumb2", "thumb3",
)
# parent of each body joint; the pelvis hangs off the global root transform
BODY_JOINT_PARENTS = {
    "pelvis": None, "left_hip": "pelvis", "right_hip": "pelvis",
    "spine1": "pelvis", "left_knee": "left_hip", "right_knee": "right_hip",
    "spine2": "spine1", "left_ankle": "left_knee", "right_ankle": "right_knee",
    "spine3": "spine2", "left_foot": "left_ankle", "right_foot": "right_ankle",
    "neck": "spine3", "left_collar": "spine3", "right_collar": "spine3",
    "head": "neck", "left_shoulder": "left_collar", "right_shoulder": "right_collar",
    "left_elbow": "left_shoulder", "right_elbow": "right_shoulder",
    "left_wrist": "left_elbow", "right_wrist": "right_elbow",
}
NUM_BODY_JOINTS = len(BODY_JOINT_NAMES)   # 22
NUM_HAND_JOINTS = 2 * len(HAND_JOINT_NAMES)  # 30

MAGIC = b"HPMOT1"
_HEADER = struct.Struct("<fIH")
_QUATS_PER_FRAME = 1 + NUM_BODY_JOINTS + NUM_HAND_JOINTS  # 53
_FRAME_DTYPE = np.dtype(
    [("quats", "<f4", (_QUATS_PER_FRAME, 4)), ("trans", "<f4", (3,)), ("ts", "<f8")]
)
FRAME_RECORD_SIZE = _FRAME_DTYPE.itemsize  # 868
_QUAT_NORM_TOL = 1e-5  # float32 rounding of a unit quaternion stays ~1e-7 off


class MotionFormatError(ValueError):
    """Malformed motion file. Carries the byte offset and, when the problem
    is inside a frame record, the offending frame index."""

    def __init__(self, message, byte_offset=None, frame_index=None):
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset
        self.frame_index = frame_index


@dataclass(frozen=True)
class HumanPoseFrame:
    """One human pose: local joint rotations plus the global root transform."""

    body_joints: tuple       # 22 Rotations in BODY_JOINT_NAMES order
    hand_joints: tuple       # 30 Rotations, left hand then right hand
    root_translation: np.ndarray  # (3,) meters
    root_rotation: Rotation
    timestamp: float         # seconds

    def __post_init__(self):
        body = tuple(self.body_joints)
        hands = tuple(self.hand_joints)
        if len(body) != NUM_BODY_JOINTS:
            raise ValueError(f"expected {NUM_BODY_JOINTS} body joints, got {len(body)}")
        if len(hands) != NUM_HAND_JOINTS:
            raise ValueError(f"expected {NUM_HAND_JOINTS} hand joints, got {len(hands)}")
        trans = np.asarray(self.root_translation, dtype=np.float64)
        if trans.shape != (3,) or not np.all(np.isfinite(trans)):
            raise ValueError("root_translation must be a finite 3-vector")
        trans = trans.copy()
        trans.flags.writeable = False
        object.__setattr__(self, "body_joints", body)
        object.__setattr__(self, "hand_joints", hands)
        object.__setattr__(self, "root_translation", trans)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    def all_quats(self):
        """(53, 4) array: root, body, hand quaternions in file order."""
        rots = (self.root_rotation,) + self.body_joints + self.hand_joints
        return np.stack([r.quat for r in rots])


@dataclass(frozen=True)
class MotionSequence:
    """An ordered run of pose frames at a nominal frame rate."""

    frames: tuple
    fps: float
    name: str = ""
    source: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise ValueError(f"sequence needs at least 2 frames, got {len(frames)}")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        ts = np.array([f.timestamp for f in frames])
        if np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise ValueError(f"timestamps not strictly increasing at frame {bad}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def duration(self):
        return self.frames[-1].timestamp - self.frames[0].timestamp

    def timestamps(self):
        return np.array([f.timestamp for f in self.frames])


def _frame_from_record(quats, trans, ts):
    rots = [Rotation(q, normalize=False) for q in quats.astype(np.float64)]
    return HumanPoseFrame(
        body_joints=tuple(rots[1 : 1 + NUM_BODY_JOINTS]),
        hand_joints=tuple(rots[1 + NUM_BODY_JOINTS :]),
        root_translation=trans.astype(np.float64),
        root_rotation=rots[0],
        timestamp=float(ts),
    )


def load_motion(path):
    """Read a motion file. Raises MotionFormatError with a byte offset on any
    structural problem; frame-level problems also name the frame index."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise MotionFormatError("bad magic, not a motion file", byte_offset=0)
    off = len(MAGIC)
    if len(data) < off + _HEADER.size:
        raise MotionFormatError("truncated header", byte_offset=len(data))
    fps, n_frames, name_len = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    if len(data) < off + name_len:
        raise MotionFormatError("truncated name field", byte_offset=len(data))
    try:
        name = data[off : off + name_len].decode("utf-8")
    except UnicodeDecodeError as e:
        raise MotionFormatError("name is not valid utf-8", byte_offset=off) from None
    off += name_len
    if not fps > 0 or not np.isfinite(fps):
        raise MotionFormatError(f"invalid fps {fps}", byte_offset=len(MAGIC))

    body_start = off
    expected_end = body_start + n_frames * FRAME_RECORD_SIZE
    if len(data) < expected_end:
        bad = (len(data) - body_start) // FRAME_RECORD_SIZE
        raise MotionFormatError(
            f"truncated record, file ends {expected_end - len(data)} bytes early",
            byte_offset=len(data),
            frame_index=bad,
        )
    if len(data) > expected_end:
        raise MotionFormatError(
            f"{len(data) - expected_end} trailing bytes after last frame",
            byte_offset=expected_end,
        )

    records = np.frombuffer(data, dtype=_FRAME_DTYPE, count=n_frames, offset=body_start)
    norms = np.linalg.norm(records["quats"].astype(np.float64), axis=-1)
    bad = np.abs(norms - 1.0) > _QUAT_NORM_TOL
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise MotionFormatError(
            f"dimension mismatch: quaternion {j} has norm {norms[i, j]:.4g}, "
            "record does not hold 53 unit quaternions",
            byte_offset=body_start + int(i) * FRAME_RECORD_SIZE + int(j) * 16,
            frame_index=int(i),
        )

    frames = [
        _frame_from_record(records["quats"][i], records["trans"][i], records["ts"][i])
        for i in range(n_frames)
    ]
    try:
        return MotionSequence(frames=frames, fps=fps, name=name, source=str(path))
    except ValueError as e:
        raise MotionFormatError(str(e), byte_offset=body_start) from None


def save_motion(seq, path):
    """Write a motion file; a later load_motion returns bit-identical frames
    for float32-representable values. Overwrites any existing file."""
    name_bytes = seq.name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise ValueError("sequence name exceeds 65535 utf-8 bytes")
    records = np.empty(len(seq.frames), dtype=_FRAME_DTYPE)
    for i, f in enumerate(seq.frames):
        records["quats"][i] = f.all_quats()
        records["trans"][i] = f.root_translation
        records["ts"][i] = f.timestamp
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(seq.fps, len(seq.frames), len(name_bytes)))
        fh.write(name_bytes)
        fh.write(records.tobytes())


def resample(seq, target_fps):
    """Resample onto a uniform grid at target_fps starting at the first frame.

    Rotations interpolate spherically, translations linearly. Duration is
    preserved to within one target frame period. Resampling at the sequence's
    own fps returns the frames unchanged when they already lie on the grid.
    """
    if not target_fps > 0:
        raise ValueError(f"target_fps must be positive, got {target_fps}")
    if len(seq.frames) < 2:
        raise ValueError("resample needs at least 2 frames")
    t = seq.timestamps()
    t0 = t[0]
    grid = t0 + np.arange(len(seq.frames)) / seq.fps
    if target_fps == seq.fps and np.abs(t - grid).max() < 1e-9:
        return MotionSequence(seq.frames, fps=target_fps, name=seq.name, source=seq.source)

    n_new = int(np.floor((t[-1] - t0) * target_fps + 1e-9)) + 1
    n_new = max(n_new, 2)
    new_t = t0 + np.arange(n_new) / target_fps

    # segment index and interpolation weight for each output time
    seg = np.clip(np.searchsorted(t, new_t, side="right") - 1, 0, len(t) - 2)
    u = (new_t - t[seg]) / (t[seg + 1] - t[seg])
    u = np.clip(u, 0.0, 1.0)

    quats = np.stack([f.all_quats() for f in seq.frames])      # (n, 53, 4)
    trans = np.stack([f.root_translation for f in seq.frames])  # (n, 3)
    q_out = quat_slerp(quats[seg], quats[seg + 1], u[:, None])  # (m, 53, 4)
    p_out = trans[seg] + u[:, None] * (trans[seg + 1] - trans[seg])

    frames = [
        _frame_from_record(q_out[i], p_out[i], new_t[i]) for i in range(n_new)
    ]
    return MotionSequence(frames=frames, fps=target_fps, name=seq.name, source=seq.source)
