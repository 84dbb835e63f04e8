"""Quaternion-backed 3D rotations shared by retargeting, kinematics and simulation.

Conventions used throughout the toolkit:

- Quaternions are scalar-first ``(w, x, y, z)`` unit quaternions (Hamilton
  product, right-handed frames).
- Euler angles are roll-pitch-yaw: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``,
  i.e. rotations about the fixed x, then y, then z axes, angles in radians.
- At gimbal lock (|pitch| >= pi/2 - 1e-6) the decomposition returns the
  canonical solution with roll = 0.

The module-level ``quat_*`` functions are batch-vectorized over leading
dimensions; :class:`Rotation` is a thin convenience wrapper around a single
quaternion built on the same kernels.
"""

from __future__ import annotations

import numpy as np

_GIMBAL_SIN = np.cos(1e-6)  # |sin(pitch)| at the gimbal-lock threshold


# ---------------------------------------------------------------------------
# batched quaternion kernels, shapes (..., 4) scalar-first
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_mul(q1, q2):
    """Hamilton product q1 * q2 (apply q2 first, then q1)."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_rotate(q, v):
    """Rotate vectors v (..., 3) by quaternions q (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis, angle):
    """Unit quaternion for a rotation of `angle` radians about unit `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_from_scaled_axis(rotvec):
    """Exponential map: rotation vector (axis * angle) -> quaternion.

    Uses the small-angle series below 1e-8 rad so the map is smooth at zero.
    """
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(angle == 0, 1.0, angle))
    w = np.cos(half)
    return np.concatenate([w, k * rotvec], axis=-1)


def quat_to_scaled_axis(q):
    """Log map: quaternion -> rotation vector, angle in [0, pi]."""
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0, -q, q)  # hemisphere with w >= 0
    sin_half = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(sin_half, q[..., :1])
    small = sin_half < 1e-9
    scale = np.where(small, 2.0, angle / np.where(sin_half == 0, 1.0, sin_half))
    return scale * q[..., 1:]


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Orthonormal matrix (..., 3, 3) -> unit quaternion, Shepperd's method."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m_flat = m.reshape((-1, 3, 3))
    q = np.empty((m_flat.shape[0], 4), dtype=np.float64)
    for i, r in enumerate(m_flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return quat_normalize(q.reshape(batch + (4,)))


def euler_to_quat(roll, pitch, yaw):
    """Roll-pitch-yaw -> quaternion for R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    roll = np.asarray(roll, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.stack(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ],
        axis=-1,
    )


def quat_to_euler(q):
    """Quaternion -> (roll, pitch, yaw) arrays, gimbal lock resolved with roll=0."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    sp = np.clip(2 * (w * y - x * z), -1.0, 1.0)
    locked = np.abs(sp) >= _GIMBAL_SIN
    roll = np.where(locked, 0.0, np.arctan2(2 * (y * z + w * x), 1 - 2 * (x * x + y * y)))
    pitch = np.arcsin(sp)
    # regular: yaw = atan2(R10, R00); locked: yaw = atan2(-R01, R11)
    yaw_reg = np.arctan2(2 * (x * y + w * z), 1 - 2 * (y * y + z * z))
    yaw_lock = np.arctan2(-(2 * (x * y - w * z)), 1 - 2 * (x * x + z * z))
    yaw = np.where(locked, yaw_lock, yaw_reg)
    return roll, pitch, yaw


def quat_slerp(q0, q1, t):
    """Spherical linear interpolation along the shorter arc, t in [0, 1]."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    dot = np.abs(dot)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < dot.ndim:
        t = t.reshape(t.shape + (1,) * (dot.ndim - t.ndim))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-9
    w0 = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / np.where(near, 1.0, sin_theta))
    w1 = np.where(near, t, np.sin(t * theta) / np.where(near, 1.0, sin_theta))
    return quat_normalize(w0 * q0 + w1 * q1)


def quat_twist_angle(q, axis):
    """Signed twist of q about the unit axis (swing-twist decomposition).

    Returns the rotation angle of the twist factor, wrapped to (-pi, pi];
    zero when q is a pure swing about any axis orthogonal to `axis`.
    """
    q = quat_normalize(q)
    axis = np.asarray(axis, dtype=np.float64)
    proj = np.sum(q[..., 1:] * axis, axis=-1)
    angle = 2.0 * np.arctan2(proj, q[..., 0])
    return wrap_angle(angle)


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    wrapped = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def unwrap_angles(a):
    """Nearest-angle continuation of a 1-D angle sequence (no +-pi jumps)."""
    a = np.asarray(a, dtype=np.float64)
    return a[0] + np.concatenate([[0.0], np.cumsum(wrap_angle(np.diff(a)))])


# ---------------------------------------------------------------------------
# Rotation wrapper
# ---------------------------------------------------------------------------

class Rotation:
    """A single 3D rotation stored as a scalar-first unit quaternion.

    Instances are immutable. Algebraic operations renormalize their result;
    quaternions loaded from float32 storage are kept bit-exact via
    ``normalize=False`` (the motion file loader validates the norm instead).
    """

    __slots__ = ("_q",)

    def __init__(self, quat, normalize=True):
        q = np.asarray(quat, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError(f"quaternion must have shape (4,), got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("quaternion has non-finite components")
        if normalize:
            n = np.linalg.norm(q)
            if n < 1e-12:
                raise ValueError("quaternion norm too small to normalize")
            q = q / n
        q = q.copy()
        q.flags.writeable = False
        object.__setattr__(self, "_q", q)

    def __setattr__(self, name, value):
        raise AttributeError("Rotation is immutable")

    @property
    def quat(self):
        """Quaternion (w, x, y, z), read-only view."""
        return self._q

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), normalize=False)

    @classmethod
    def from_quat(cls, w, x, y, z):
        return cls(np.array([w, x, y, z], dtype=np.float64))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"matrix must have shape (3, 3), got {m.shape}")
        return cls(matrix_to_quat(m), normalize=False)

    @classmethod
    def from_euler(cls, roll, pitch, yaw):
        if not np.all(np.isfinite([roll, pitch, yaw])):
            raise ValueError("euler angles must be finite")
        return cls(euler_to_quat(roll, pitch, yaw), normalize=False)

    @classmethod
    def from_axis_angle(cls, axis, angle):
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        return cls(quat_from_axis_angle(axis / n, float(angle)), normalize=False)

    @classmethod
    def random(cls, rng):
        """Uniformly random rotation (normalized 4-D Gaussian)."""
        q = rng.standard_normal(4)
        return cls(q)

    def as_matrix(self):
        return quat_to_matrix(self._q)

    def as_euler(self):
        r, p, y = quat_to_euler(self._q)
        return float(r), float(p), float(y)

    def as_axis_angle(self):
        rv = quat_to_scaled_axis(self._q)
        angle = float(np.linalg.norm(rv))
        if angle < 1e-12:
            return np.array([1.0, 0.0, 0.0]), 0.0
        return rv / angle, angle

    def inverse(self):
        return Rotation(quat_conj(self._q), normalize=False)

    def apply(self, v):
        return quat_rotate(self._q, v)

    def angle(self):
        """Rotation angle in [0, pi]."""
        return self.as_axis_angle()[1]

    def slerp(self, other, t):
        return Rotation(quat_slerp(self._q, other._q, float(t)), normalize=False)

    def twist_angle(self, axis):
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("twist axis must be nonzero")
        return float(quat_twist_angle(self._q, axis / n))

    def __mul__(self, other):
        """Compose rotations: (a * b).apply(v) == a.apply(b.apply(v))."""
        if not isinstance(other, Rotation):
            return NotImplemented
        return Rotation(quat_mul(self._q, other._q))

    def approx_equal(self, other, atol=1e-9):
        """True if both quaternions represent the same rotation within atol."""
        return min(np.abs(self._q - other._q).max(), np.abs(self._q + other._q).max()) < atol

    def __repr__(self):
        w, x, y, z = self._q
        return f"Rotation(w={w:.6f}, x={x:.6f}, y={y:.6f}, z={z:.6f})"


# ---------------------------------------------------------------------------
# spec-level operations
# ---------------------------------------------------------------------------

def euler_to_rotation(roll, pitch, yaw):
    """Rotation for roll-pitch-yaw angles: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return Rotation.from_euler(roll, pitch, yaw)


def rotation_to_euler(rot):
    """Inverse of :func:`euler_to_rotation`; roll=0 at gimbal lock."""
    return rot.as_euler()


def relative_rotation(ra, rb):
    """The rotation taking ra to rb: ra^-1 * rb."""
    return ra.inverse() * rb
