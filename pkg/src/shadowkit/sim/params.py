"""Environment randomization parameters and the PD inner-loop controller."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RandomizationRanges:
    """Uniform sampling ranges for the physical parameters randomized during
    training. Defaults cover payloads, center-of-mass offset, motor strength,
    ground friction, and control delay."""

    base_payload: tuple = (-3.0, 3.0)      # kg
    ee_payload: tuple = (0.0, 0.5)         # kg, per end effector
    com_offset: tuple = (-0.1, 0.1)        # m, each of x/y/z
    motor_strength: tuple = (0.8, 1.1)     # torque multiplier
    friction: tuple = (0.3, 0.9)           # ground Coulomb coefficient
    control_delay: tuple = (0.02, 0.04)    # s

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            lo, hi = getattr(self, f)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"{f}: invalid range ({lo}, {hi})")


@dataclass(frozen=True)
class EnvParams:
    """One sampled environment configuration.

    Training draws come from RandomizationRanges, so sampled instances always
    sit inside the default ranges. Out-of-range values are accepted here on
    purpose: diagnostics pin extremes (e.g. motor_strength 0 to prove torque
    scaling, friction 0.05 to exercise the friction cone).
    """

    base_payload: float = 0.0
    ee_payload: float = 0.0
    com_offset: tuple = (0.0, 0.0, 0.0)
    motor_strength: float = 1.0
    friction: float = 0.6
    control_delay: float = 0.02

    def __post_init__(self):
        co = tuple(float(c) for c in self.com_offset)
        if len(co) != 3 or not all(np.isfinite(c) for c in co):
            raise ValueError("com_offset must be a finite 3-vector")
        object.__setattr__(self, "com_offset", co)
        for f in ("base_payload", "ee_payload", "motor_strength", "friction", "control_delay"):
            if not np.isfinite(getattr(self, f)):
                raise ValueError(f"{f} must be finite")
        if self.ee_payload < 0 or self.motor_strength < 0 or self.friction < 0 \
                or self.control_delay < 0:
            raise ValueError("ee_payload, motor_strength, friction, control_delay must be >= 0")

    @property
    def delay_ticks(self):
        """Control delay rounded to whole milliseconds (1000Hz ticks)."""
        return int(round(self.control_delay * 1000.0))


def sample_env_params(rng, ranges: RandomizationRanges = None) -> EnvParams:
    """One independent uniform draw per field. Deterministic under a seeded
    generator; degenerate ranges [a, a] produce exactly a."""
    if ranges is None:
        ranges = RandomizationRanges()
    u = lambda r: float(rng.uniform(r[0], r[1]))
    return EnvParams(
        base_payload=u(ranges.base_payload),
        ee_payload=u(ranges.ee_payload),
        com_offset=tuple(rng.uniform(ranges.com_offset[0], ranges.com_offset[1], 3)),
        motor_strength=u(ranges.motor_strength),
        friction=u(ranges.friction),
        control_delay=u(ranges.control_delay),
    )


@dataclass(frozen=True)
class PDConfig:
    """Per-joint gains and torque limits for the 1000Hz inner loop.

    substeps * 50Hz policy rate = 1000Hz, so substeps is fixed at 20 unless
    the policy rate itself changes.
    """

    kp: np.ndarray
    kd: np.ndarray
    torque_limit: np.ndarray
    substeps: int = 20

    def __post_init__(self):
        kp = np.asarray(self.kp, dtype=np.float64)
        kd = np.asarray(self.kd, dtype=np.float64)
        lim = np.asarray(self.torque_limit, dtype=np.float64)
        if not (kp.shape == kd.shape == lim.shape):
            raise ValueError("kp, kd, torque_limit shapes differ")
        if np.any(kp < 0) or np.any(kd < 0):
            raise ValueError("kp and kd must be >= 0")
        if np.any(lim <= 0):
            raise ValueError("torque limits must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)
        object.__setattr__(self, "torque_limit", lim)

    @classmethod
    def from_model(cls, model, substeps=20):
        return cls(
            kp=model.default_kp,
            kd=model.default_kd,
            torque_limit=model.torque_limits,
            substeps=substeps,
        )


def pd_torque(cfg: PDConfig, q_tg, q, qd, motor_strength=1.0):
    """tau_i = clip(strength * (kp_i (q_tg_i - q_i) - kd_i qd_i), +-limit_i).

    Inputs broadcast over leading batch dimensions; the last axis must match
    the gain vectors.
    """
    q_tg = np.asarray(q_tg, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    n = cfg.kp.shape[0]
    if q_tg.shape[-1] != n or q.shape[-1] != n or qd.shape[-1] != n:
        raise ValueError(f"expected last axis {n}, got {q_tg.shape[-1]}/{q.shape[-1]}/{qd.shape[-1]}")
    strength = np.asarray(motor_strength, dtype=np.float64)
    if strength.ndim:  # per-env scalars broadcast across joints
        strength = strength[..., None]
    raw = strength * (cfg.kp * (q_tg - q) - cfg.kd * qd)
    return np.clip(raw, -cfg.torque_limit, cfg.torque_limit)
