"""Two-joint torque-control tracking task.

A minimal environment for end-to-end training sanity: two independent,
gravity-free joints must be driven to a per-episode random setpoint. The
reward is the same exponential tracking kernel the full environment uses, so
returns are positive and improvement ratios are meaningful. Cheap enough to
train in seconds, which makes it the canary for the PPO stack.
"""

from __future__ import annotations

import numpy as np

OBS_DIM = 6       # q (2), qd (2), target q (2)
ACTION_DIM = 2
PROPRIO_SLICE = slice(0, 4)
TARGET_SLICE = slice(4, 6)


class ToyTrackingEnv:
    def __init__(self, num_envs=1, horizon=100, inertia=0.05, damping=0.1,
                 torque_limit=2.0, target_range=2.0, dt=0.02, auto_reset=True):
        self.n = int(num_envs)
        self.horizon = int(horizon)
        self.inertia = float(inertia)
        self.damping = float(damping)
        self.torque_limit = float(torque_limit)
        self.target_range = float(target_range)
        self.dt = float(dt)
        self.auto_reset = auto_reset
        self._ready = False

    def _sample_targets(self, k):
        return self._rng.uniform(-self.target_range, self.target_range, (k, 2))

    def reset(self, rng=None):
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.q = np.zeros((self.n, 2))
        self.qd = np.zeros((self.n, 2))
        self.q_tg = self._sample_targets(self.n)
        self.t = np.zeros(self.n, dtype=np.int64)
        self._ready = True
        return self._obs()

    def _obs(self):
        return np.concatenate([self.q, self.qd, self.q_tg], axis=1)

    def step(self, action):
        if not self._ready:
            raise RuntimeError("step before reset")
        a = np.broadcast_to(np.asarray(action, dtype=np.float64), (self.n, 2))
        if not np.all(np.isfinite(a)):
            raise ValueError("action must be finite")
        tau = np.clip(a, -self.torque_limit, self.torque_limit)
        self.qd = (self.qd + self.dt * tau / self.inertia) / (1.0 + self.dt * self.damping / self.inertia)
        self.q = self.q + self.dt * self.qd
        self.t = self.t + 1
        reward = np.exp(-np.linalg.norm(self.q - self.q_tg, axis=1))
        done = self.t >= self.horizon
        info = {}
        if self.auto_reset and done.any():
            m = done.copy()
            k = int(m.sum())
            self.q[m] = 0.0
            self.qd[m] = 0.0
            self.q_tg[m] = self._sample_targets(k)
            self.t[m] = 0
            info["reset_mask"] = m
        return self._obs(), reward, done.copy(), info
