"""Dataset utilities: feasibility filtering, statistics, RL target sampling,
and demonstration storage for imitation learning.

Filtering runs on the retargeted 50Hz stream (not the raw human data) so the
criteria reflect what the humanoid would be asked to do. Demonstrations store
per-step proprioception, two per-camera feature vectors, and the 33-dim
whole-body action; they are serialized to a versioned binary format (magic
"HPDEM1") with a JSON metadata block.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import KinematicChain
from .motion import MotionSequence, resample
from .retarget import TargetStream, build_target_stream


@dataclass(frozen=True)
class FilterCriteria:
    """Feasibility thresholds, all positive. Defaults are explicit artifact
    choices (logged with results); they are not tuned to match any external
    dataset."""

    max_joint_velocity: float = 15.0   # rad/s, on retargeted joints
    max_root_speed: float = 4.0        # m/s, 3D root velocity
    max_height_deviation: float = 0.5  # m, root height from sequence median
    min_duration: float = 1.0          # s
    max_duration: float = 120.0        # s
    ground_penetration: float = 0.03   # m, lowest foot point below z=0

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive")


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    reasons: tuple


def filter_sequence(seq: MotionSequence, criteria: FilterCriteria, rmap, model) -> FilterResult:
    """Accept or reject one sequence; reasons name each violated criterion
    with the first offending frame (frame indices are on the 50Hz stream)."""
    reasons = []
    duration = seq.duration
    if duration < criteria.min_duration:
        reasons.append(f"min_duration ({duration:.2f}s < {criteria.min_duration:.2f}s)")
    if duration > criteria.max_duration:
        reasons.append(f"max_duration ({duration:.2f}s > {criteria.max_duration:.2f}s)")

    if len(seq) >= 3:
        if seq.fps != 50.0:
            seq50 = resample(seq, 50.0)
        else:
            seq50 = seq
        stream = build_target_stream(seq50, rmap, model)
        q_full = np.column_stack([stream.pose[:, 5:], stream.wrist, stream.hand])
        qd = np.abs(np.diff(q_full, axis=0)) * stream.rate
        over = np.any(qd > criteria.max_joint_velocity, axis=1)
        if np.any(over):
            reasons.append(f"max_joint_velocity @ frame {int(np.argmax(over)) + 1}")

        trans = np.stack([f.root_translation for f in seq50.frames])
        speed = np.linalg.norm(np.diff(trans, axis=0), axis=1) * 50.0
        if np.any(speed > criteria.max_root_speed):
            reasons.append(f"max_root_speed @ frame {int(np.argmax(speed > criteria.max_root_speed)) + 1}")

        dev = np.abs(trans[:, 2] - np.median(trans[:, 2]))
        if np.any(dev > criteria.max_height_deviation):
            reasons.append(f"max_height_deviation @ frame {int(np.argmax(dev > criteria.max_height_deviation))}")

        root_q = np.stack([f.root_rotation.quat for f in seq50.frames])
        q33 = np.column_stack([stream.pose[:, 5:], stream.wrist, stream.hand])
        lowest = np.full(len(seq50), np.inf)
        for side in ("left", "right"):
            chain = KinematicChain(model, f"{side}_foot", model.contacts[f"{side}_foot"])
            pts = chain.point_positions(trans, root_q, q33)
            lowest = np.minimum(lowest, pts[..., 2].min(axis=1))
        if np.any(lowest < -criteria.ground_penetration):
            reasons.append(
                f"ground_penetration @ frame {int(np.argmax(lowest < -criteria.ground_penetration))}"
            )

    return FilterResult(accepted=not reasons, reasons=tuple(reasons))


def dataset_stats(sequences):
    """Aggregate statistics over motion sequences.

    Returns count, total_hours, per-joint rotation-angle ranges (radians, by
    human joint name) and root-speed percentiles (p50/p90/p99, m/s).
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("dataset_stats needs at least one sequence")
    from .motion import BODY_JOINT_NAMES

    total_hours = sum(s.duration for s in sequences) / 3600.0
    angle_min = np.full(len(BODY_JOINT_NAMES), np.inf)
    angle_max = np.full(len(BODY_JOINT_NAMES), -np.inf)
    speeds = []
    for s in sequences:
        for f in s.frames:
            angles = np.array([r.angle() for r in f.body_joints])
            angle_min = np.minimum(angle_min, angles)
            angle_max = np.maximum(angle_max, angles)
        trans = np.stack([f.root_translation for f in s.frames])
        dt = np.diff(s.timestamps())
        speeds.append(np.linalg.norm(np.diff(trans, axis=0), axis=1) / dt)
    speeds = np.concatenate(speeds)
    return {
        "count": len(sequences),
        "total_hours": total_hours,
        "total_frames": int(sum(len(s) for s in sequences)),
        "joint_angle_range": {
            name: (float(angle_min[i]), float(angle_max[i]))
            for i, name in enumerate(BODY_JOINT_NAMES)
        },
        "root_speed_percentiles": {
            "p50": float(np.percentile(speeds, 50)),
            "p90": float(np.percentile(speeds, 90)),
            "p99": float(np.percentile(speeds, 99)),
        },
    }


def sample_target_segment(dataset, horizon_steps, rng) -> TargetStream:
    """Uniformly pick a stream, then a uniform start offset; returns the
    horizon-long slice. Deterministic under a seeded generator."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    if any(len(s) < horizon_steps for s in dataset):
        raise ValueError(f"every stream must hold at least {horizon_steps} steps")
    idx = int(rng.integers(0, len(dataset)))
    stream = dataset[idx]
    start = int(rng.integers(0, len(stream) - horizon_steps + 1))
    return stream[start : start + horizon_steps]


# ---------------------------------------------------------------------------
# demonstrations
# ---------------------------------------------------------------------------

class DemoFormatError(ValueError):
    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class Demonstration:
    """One collected episode: per-step proprioception, two camera feature
    vectors, and the whole-body target actually commanded."""

    proprio: np.ndarray    # (n, proprio_dim) f32
    features: np.ndarray   # (n, 2, feat_dim) f32
    actions: np.ndarray    # (n, action_dim) f32
    rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.ascontiguousarray(self.proprio, dtype=np.float32)
        f = np.ascontiguousarray(self.features, dtype=np.float32)
        a = np.ascontiguousarray(self.actions, dtype=np.float32)
        n = p.shape[0]
        if n < 1:
            raise ValueError("demonstration needs at least 1 step")
        if p.ndim != 2 or f.shape[:2] != (n, 2) or f.ndim != 3 or a.shape[0] != n or a.ndim != 2:
            raise ValueError("inconsistent demonstration array shapes")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        for name, arr in (("proprio", p), ("features", f), ("actions", a)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "proprio", p)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rate", float(self.rate))

    def __len__(self):
        return self.proprio.shape[0]

    @property
    def duration(self):
        return len(self) / self.rate


_DEMO_MAGIC = b"HPDEM1"
_DEMO_HEADER = struct.Struct("<fIHHH")
_DEMO_META = struct.Struct("<H")


def save_demonstration(demo: Demonstration, path):
    meta_b = json.dumps(demo.meta, sort_keys=True).encode("utf-8")
    if len(meta_b) > 0xFFFF:
        raise ValueError("metadata too large")
    n = len(demo)
    dp, df, da = demo.proprio.shape[1], demo.features.shape[2], demo.actions.shape[1]
    records = np.concatenate(
        [demo.proprio, demo.features.reshape(n, 2 * df), demo.actions], axis=1
    ).astype("<f4")
    with open(path, "wb") as f:
        f.write(_DEMO_MAGIC)
        f.write(_DEMO_HEADER.pack(demo.rate, n, dp, df, da))
        f.write(_DEMO_META.pack(len(meta_b)))
        f.write(meta_b)
        f.write(records.tobytes())


def load_demonstration(path) -> Demonstration:
    data = Path(path).read_bytes()
    if data[: len(_DEMO_MAGIC)] != _DEMO_MAGIC:
        raise DemoFormatError("bad magic, not a demonstration file", byte_offset=0)
    off = len(_DEMO_MAGIC)
    if len(data) < off + _DEMO_HEADER.size + _DEMO_META.size:
        raise DemoFormatError("truncated header", byte_offset=len(data))
    rate, n, dp, df, da = _DEMO_HEADER.unpack_from(data, off)
    off += _DEMO_HEADER.size
    (meta_len,) = _DEMO_META.unpack_from(data, off)
    off += _DEMO_META.size
    if len(data) < off + meta_len:
        raise DemoFormatError("truncated metadata", byte_offset=len(data))
    try:
        meta = json.loads(data[off : off + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DemoFormatError("metadata is not valid JSON", byte_offset=off) from None
    off += meta_len
    row = dp + 2 * df + da
    need = off + 4 * n * row
    if len(data) != need:
        raise DemoFormatError(
            f"expected {need} bytes for {n} steps, file has {len(data)}",
            byte_offset=min(need, len(data)),
        )
    flat = np.frombuffer(data, dtype="<f4", count=n * row, offset=off).reshape(n, row)
    return Demonstration(
        proprio=flat[:, :dp],
        features=flat[:, dp : dp + 2 * df].reshape(n, 2, df),
        actions=flat[:, dp + 2 * df :],
        rate=rate,
        meta=meta,
    )
