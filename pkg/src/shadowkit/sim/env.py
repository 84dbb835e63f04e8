"""Batched reduced-order humanoid environment.

Physics model, in one paragraph: every joint integrates independently with an
effective inertia precomputed from subtree masses about its axis (plus rotor
armature), driven by the 1000Hz PD loop with viscous damping; the floating
base is a single rigid body under gravity, pushes, and spring-damper point
contacts at the FK-resolved toe/heel points of each foot, with tangential
forces capped by the Coulomb cone mu * F_n. Joint motion affects the base
only through contact geometry (a bent ankle moves where the foot springs
push), never through reaction torques. That is the reduced-order concession:
this is a control-stack testbed with exact timing semantics, not a dynamics
engine.

Trajectory logs are JSON Lines: one object per policy step with "state" and
"reward" keys for the selected environment index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ..model import HumanoidModel, HumanoidPose, KinematicChain, forward_kinematics
from ..rotation import (
    Rotation,
    quat_conj,
    quat_from_scaled_axis,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_euler,
)
from .params import EnvParams, PDConfig, pd_torque, sample_env_params
from .rewards import RewardWeights, TERM_NAMES, breakdown_from_terms, reward_terms_batch

PROPRIO_DIM = 62  # roll, pitch, body angular velocity (3), q(19), qd(19), last action (19)
POLICY_DT = 0.02


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.001                   # inner tick, s
    gravity: float = 9.81
    contact_stiffness: float = 30000.0  # N/m per contact point
    contact_damping: float = 1000.0     # N*s/m, normal
    tangential_damping: float = 500.0   # N*s/m, planar
    contact_force_threshold: float = 1.0  # N, "in contact" and slip mask
    roll_pitch_limit: float = 1.0       # rad, termination
    min_base_height: float = 0.3        # m, termination
    max_steps: int = 1000               # policy steps (20 s)
    joint_noise: float = 0.05           # rad, reset
    vel_noise: float = 0.05             # m/s and rad/s, reset

    def __post_init__(self):
        if self.dt <= 0 or self.max_steps < 1:
            raise ValueError("dt must be positive and max_steps >= 1")
        for f in ("contact_stiffness", "contact_damping", "tangential_damping",
                  "roll_pitch_limit", "min_base_height"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.joint_noise < 0 or self.vel_noise < 0 or self.gravity < 0:
            raise ValueError("noise levels and gravity must be >= 0")


@dataclass(frozen=True)
class FootContact:
    in_contact: bool
    normal_force: float      # N, summed over the foot's points
    planar_velocity: float   # m/s, centroid planar speed


@dataclass(frozen=True)
class SimState:
    """Policy-visible snapshot of one environment (body joints only)."""

    base_position: np.ndarray
    base_rotation: Rotation
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    q: np.ndarray            # (19,)
    qd: np.ndarray           # (19,)
    tau: np.ndarray          # (19,) last inner-loop torques
    feet: tuple              # (left FootContact, right FootContact)
    last_action: np.ndarray  # (19,)
    time: float

    def to_json(self):
        r, p, y = self.base_rotation.as_euler()
        return {
            "time": self.time,
            "base_position": self.base_position.tolist(),
            "base_rpy": [float(r), float(p), float(y)],
            "base_lin_vel": self.base_lin_vel.tolist(),
            "base_ang_vel": self.base_ang_vel.tolist(),
            "q": self.q.tolist(),
            "qd": self.qd.tolist(),
            "tau": self.tau.tolist(),
            "feet": [
                {"in_contact": f.in_contact, "normal_force": f.normal_force,
                 "planar_velocity": f.planar_velocity}
                for f in self.feet
            ],
            "last_action": self.last_action.tolist(),
        }


def check_termination(state: SimState, cfg: SimConfig) -> bool:
    """True iff roll or pitch exceeds the limit, the base is too low, or the
    episode horizon is reached."""
    r, p, _ = state.base_rotation.as_euler()
    if abs(r) > cfg.roll_pitch_limit or abs(p) > cfg.roll_pitch_limit:
        return True
    if state.base_position[2] < cfg.min_base_height:
        return True
    return state.time >= cfg.max_steps * POLICY_DT - 1e-12


def target_contact(stream, k):
    """Per-foot desired contact (left, right) at stream index k, clamped to
    the final frame past the end."""
    k = min(int(k), len(stream) - 1)
    return tuple(bool(c) for c in stream.contacts[k])


class HumanoidEnv:
    """N independent environments stepped in lockstep (no shared mutable
    state across instances; vectorization is a speed choice, not a coupling).
    """

    def __init__(self, model: HumanoidModel, num_envs=1, config: SimConfig = None,
                 pd: PDConfig = None, weights: RewardWeights = None,
                 auto_reset=False, debug=False):
        self.model = model
        self.cfg = config if config is not None else SimConfig()
        self.pd = pd if pd is not None else PDConfig.from_model(model)
        if self.pd.kp.shape[0] != 33:
            raise ValueError("env needs gains for all 33 joints")
        self.weights = weights if weights is not None else RewardWeights()
        self._w = np.array([getattr(self.weights, n) for n in TERM_NAMES])
        self.n = int(num_envs)
        self.auto_reset = auto_reset
        self.debug = debug
        self.pd_evaluations = 0
        self._ready = False
        self._log = None
        self._log_index = 0
        self._passthrough = None

        self._chains = [
            KinematicChain(model, f"{side}_foot", model.contacts[f"{side}_foot"])
            for side in ("left", "right")
        ]
        self._precompute_inertials()

    # -- precomputation ----------------------------------------------------

    def _precompute_inertials(self):
        model = self.model
        zero = HumanoidPose(np.zeros(3), Rotation.identity(), np.zeros(33))
        fk = forward_kinematics(model, zero)
        names = [model.root_link] + [j.child for j in model.joints]
        pos = {ln: fk.position(ln) + model.links[ln].com for ln in names}
        mass = {ln: model.links[ln].mass for ln in names}

        self._mass0 = model.total_mass
        self._com0 = sum(mass[ln] * pos[ln] for ln in names) / self._mass0

        # diagonal body inertia about the zero-pose COM, point-mass links
        inertia = np.zeros(3)
        for ln in names:
            d = pos[ln] - self._com0
            inertia += mass[ln] * np.array(
                [d[1] ** 2 + d[2] ** 2, d[0] ** 2 + d[2] ** 2, d[0] ** 2 + d[1] ** 2]
            )
        self._inertia0 = np.maximum(inertia, 0.2)

        # per-joint effective inertia: armature + subtree point masses about
        # the joint axis line at zero pose
        joint_pos = np.zeros((33, 3))
        for i, j in enumerate(model.joints):
            parent_origin = fk.position(j.parent)
            joint_pos[i] = parent_origin + j.offset
        axes = np.stack([j.axis for j in model.joints])
        i_eff = model.armature.copy()
        for ln in names:
            if ln == model.root_link:
                continue
            for ji in model.chain(ln):
                r = pos[ln] - joint_pos[ji]
                d2 = r @ r - (r @ axes[ji]) ** 2
                i_eff[ji] += mass[ln] * max(d2, 0.0)
        self._i_eff0 = np.maximum(i_eff, 1e-4)

        # end-effector payload lever terms (added per kg of ee payload)
        ee_joint = np.zeros(33)
        ee_base = np.zeros(3)
        for ln in model.end_effectors:
            r_ln = pos[ln]
            for ji in model.chain(ln):
                r = r_ln - joint_pos[ji]
                ee_joint[ji] += r @ r - (r @ axes[ji]) ** 2
            d = r_ln - self._com0
            ee_base += np.array(
                [d[1] ** 2 + d[2] ** 2, d[0] ** 2 + d[2] ** 2, d[0] ** 2 + d[1] ** 2]
            )
        self._ee_joint_lever = ee_joint
        self._ee_base_lever = ee_base
        self._ee_positions = np.stack([pos[ln] for ln in model.end_effectors]) \
            if model.end_effectors else np.zeros((0, 3))

        pts = np.concatenate(
            [c.point_positions(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(33))
             for c in self._chains], axis=0)
        self.rest_height = -float(pts[:, 2].min())

    # -- reset ---------------------------------------------------------------

    def reset(self, stream, params=None, rng=None, ranges=None):
        """Initialize every environment at the stream's first frame.

        params: one EnvParams for all envs, or a sequence of N. If `ranges`
        is given instead, params are sampled per env (and re-sampled on every
        auto-reset). Returns proprioception (N, 62), or (62,) when N == 1.
        """
        if len(stream) < 2:
            raise ValueError("target stream needs at least 2 frames")
        self._stream = stream
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._ranges = ranges
        if ranges is not None:
            plist = [sample_env_params(self._rng, ranges) for _ in range(self.n)]
        elif params is None:
            plist = [EnvParams()] * self.n
        elif isinstance(params, EnvParams):
            plist = [params] * self.n
        else:
            plist = list(params)
            if len(plist) != self.n:
                raise ValueError(f"expected {self.n} EnvParams, got {len(plist)}")
        self._apply_params(plist, np.ones(self.n, dtype=bool))

        n = self.n
        self.base_pos = np.zeros((n, 3))
        self.base_quat = np.zeros((n, 4))
        self.base_lin_vel = np.zeros((n, 3))
        self.base_ang_vel = np.zeros((n, 3))
        self.q = np.zeros((n, 33))
        self.qd = np.zeros((n, 33))
        self.tau = np.zeros((n, 33))
        self.last_action = np.zeros((n, 19))
        self.act_hist = np.zeros((n, 3, 19))
        self.t_steps = np.zeros(n, dtype=np.int64)
        self.fault = np.zeros(n, dtype=bool)
        self.foot_force = np.zeros((n, 2))
        self.foot_speed = np.zeros((n, 2))
        self.foot_contact = np.zeros((n, 2), dtype=bool)
        self._push_force = np.zeros(3)
        self._push_ticks = 0
        self._prev_pts = np.zeros((n, 4, 3))
        self._init_envs(np.ones(n, dtype=bool))
        self._ready = True
        self._passthrough = None
        return self._obs_maybe_squeezed()

    def _apply_params(self, plist, mask):
        if not hasattr(self, "_params"):
            self._params = [None] * self.n
            self.mass = np.zeros(self.n)
            self.com_body = np.zeros((self.n, 3))
            self.inertia = np.zeros((self.n, 3))
            self.i_eff = np.zeros((self.n, 33))
            self.strength = np.zeros(self.n)
            self.friction = np.zeros(self.n)
            self.delay_ticks = np.zeros(self.n, dtype=np.int64)
        for i in np.nonzero(mask)[0]:
            p = plist[i] if len(plist) == self.n else plist[0]
            self._params[i] = p
            m = self._mass0 + p.base_payload + 2.0 * p.ee_payload
            if m <= 0:
                raise ValueError("total mass must stay positive")
            self.mass[i] = m
            com = self._com0 * self._mass0
            for r_ee in self._ee_positions:
                com = com + p.ee_payload * r_ee
            self.com_body[i] = com / m + np.asarray(p.com_offset)
            self.inertia[i] = self._inertia0 + p.ee_payload * self._ee_base_lever
            self.i_eff[i] = self._i_eff0 + p.ee_payload * self._ee_joint_lever
            self.strength[i] = p.motor_strength
            self.friction[i] = p.friction
            self.delay_ticks[i] = p.delay_ticks

    def _init_envs(self, mask):
        """(Re)initialize the masked envs at the stream's first frame."""
        k = int(mask.sum())
        if k == 0:
            return
        row = self._stream.pose[0]
        q_full = np.concatenate([row[5:], self._stream.wrist[0], self._stream.hand[0]])
        cfg = self.cfg
        qn = self._rng.uniform(-cfg.joint_noise, cfg.joint_noise, (k, 33))
        vn = self._rng.uniform(-cfg.vel_noise, cfg.vel_noise, (k, 33))
        bn = self._rng.uniform(-cfg.vel_noise, cfg.vel_noise, (k, 3))
        self.q[mask] = q_full + qn
        self.qd[mask] = vn
        self.base_pos[mask] = np.array([0.0, 0.0, self.rest_height])
        self.base_quat[mask] = Rotation.from_euler(row[2], row[3], 0.0).quat
        self.base_lin_vel[mask] = np.array([row[0], row[1], 0.0]) + bn
        self.base_ang_vel[mask] = np.array([0.0, 0.0, row[4]])
        self.tau[mask] = 0.0
        self.last_action[mask] = row[5:]
        self.act_hist[mask] = row[5:]
        self.t_steps[mask] = 0
        self.fault[mask] = False
        self.foot_force[mask] = 0.0
        self.foot_speed[mask] = 0.0
        self.foot_contact[mask] = False
        pts = self._foot_points()
        self._prev_pts[mask] = pts[mask]

    # -- per-step physics ----------------------------------------------------

    def _foot_points(self):
        return np.concatenate(
            [c.point_positions(self.base_pos, self.base_quat, self.q) for c in self._chains],
            axis=1,
        )  # (n, 4, 3): left toe, left heel, right toe, right heel

    def step(self, action):
        """Advance 20ms. Returns (proprio, reward, done, info); for a single
        unbatched env the tuple is (proprio (62,), RewardBreakdown, bool,
        SimState), otherwise arrays plus an info dict with per-term rewards.
        """
        if not self._ready:
            raise RuntimeError("step before reset")
        single = np.ndim(action) == 1 and self.n == 1
        a = np.broadcast_to(np.asarray(action, dtype=np.float64), (self.n, 19)).copy()
        if not np.all(np.isfinite(a)):
            raise ValueError("action must be finite")
        a = np.clip(a, self.model.limits_lo[:19], self.model.limits_hi[:19])
        self.act_hist = np.roll(self.act_hist, 1, axis=1)
        self.act_hist[:, 0] = a
        self.last_action = a

        cfg = self.cfg
        n = self.n
        tgt_idx = np.minimum(self.t_steps + 1, len(self._stream) - 1)
        wh = np.concatenate(
            [self._stream.wrist[tgt_idx], self._stream.hand[tgt_idx]], axis=1
        )  # (n, 14)
        if self.debug:
            self.debug_substep_targets = np.zeros((self.pd.substeps, n, 19))

        env_idx = np.arange(n)
        g_vec = np.array([0.0, 0.0, -cfg.gravity])
        for j in range(self.pd.substeps):
            if self._passthrough is not None:
                q_tg = np.broadcast_to(self._passthrough, (n, 33))
            else:
                slot = np.clip(np.ceil((self.delay_ticks - j) / self.pd.substeps), 0, 2)
                q_tg19 = self.act_hist[env_idx, slot.astype(np.intp)]
                q_tg = np.concatenate([q_tg19, wh], axis=1)
            if self.debug:
                self.debug_substep_targets[j] = q_tg[:, :19]
            self.tau = pd_torque(self.pd, q_tg, self.q, self.qd, self.strength)
            self.pd_evaluations += 1

            damp = self.model.joint_damping
            self.qd = (self.qd + cfg.dt * self.tau / self.i_eff) / (1.0 + cfg.dt * damp / self.i_eff)
            self.q = self.q + cfg.dt * self.qd

            pts = self._foot_points()
            v_pts = (pts - self._prev_pts) / cfg.dt
            self._prev_pts = pts
            pen = -pts[..., 2]
            active = pen > 0.0
            f_n = np.where(active, cfg.contact_stiffness * pen - cfg.contact_damping * v_pts[..., 2], 0.0)
            f_n = np.maximum(f_n, 0.0)
            f_t = -cfg.tangential_damping * v_pts[..., :2] * active[..., None]
            t_mag = np.linalg.norm(f_t, axis=-1)
            cap = self.friction[:, None] * f_n
            scale = np.where(t_mag > cap, cap / np.maximum(t_mag, 1e-12), 1.0)
            f_t = f_t * scale[..., None]
            f_pts = np.concatenate([f_t, f_n[..., None]], axis=-1)  # (n, 4, 3)

            self.foot_force = np.stack([f_n[:, :2].sum(axis=1), f_n[:, 2:].sum(axis=1)], axis=1)
            v_foot = np.stack([v_pts[:, :2].mean(axis=1), v_pts[:, 2:].mean(axis=1)], axis=1)
            self.foot_speed = np.linalg.norm(v_foot[..., :2], axis=-1)
            self.foot_contact = self.foot_force > cfg.contact_force_threshold
            self._last_point_forces = f_pts
            self._last_point_active = active

            if self._passthrough is not None:
                continue  # base pinned

            push = self._push_force if self._push_ticks > 0 else np.zeros(3)
            if self._push_ticks > 0:
                self._push_ticks -= 1
            com_w = self.base_pos + quat_rotate(self.base_quat, self.com_body)
            force = f_pts.sum(axis=1) + self.mass[:, None] * g_vec + push
            torque = np.cross(pts - com_w[:, None, :], f_pts).sum(axis=1)
            torque += np.cross(self.base_pos - com_w, np.broadcast_to(push, (n, 3)))

            acc = force / self.mass[:, None]
            v_new = self.base_lin_vel + cfg.dt * acc
            self.base_pos = self.base_pos + cfg.dt * 0.5 * (self.base_lin_vel + v_new)
            self.base_lin_vel = v_new

            tau_body = quat_rotate(quat_conj(self.base_quat), torque)
            wdot = quat_rotate(self.base_quat, tau_body / self.inertia)
            self.base_ang_vel = self.base_ang_vel + cfg.dt * wdot
            self.base_quat = quat_normalize(
                quat_mul(quat_from_scaled_axis(self.base_ang_vel * cfg.dt), self.base_quat)
            )

        self.t_steps = self.t_steps + 1
        bad = ~(
            np.all(np.isfinite(self.q), axis=1)
            & np.all(np.isfinite(self.base_pos), axis=1)
            & np.all(np.isfinite(self.base_quat), axis=1)
            & np.all(np.isfinite(self.base_lin_vel), axis=1)
        )
        self.fault = self.fault | bad

        terms, totals = self._rewards(tgt_idx)
        roll, pitch, _ = quat_to_euler(self.base_quat)
        fell = (
            (np.abs(roll) > cfg.roll_pitch_limit)
            | (np.abs(pitch) > cfg.roll_pitch_limit)
            | (self.base_pos[:, 2] < cfg.min_base_height)
        )
        horizon = (self.t_steps >= cfg.max_steps) | (self.t_steps >= len(self._stream) - 1)
        done = self.fault | fell | horizon

        if self._log is not None:
            i = self._log_index
            rec = {"state": self.state(i).to_json(),
                   "reward": breakdown_from_terms(terms[i], self.weights).as_dict()}
            self._log.write(json.dumps(rec) + "\n")

        if single:
            return (self._obs()[0], breakdown_from_terms(terms[0], self.weights),
                    bool(done[0]), self.state(0))

        info = {"terms": terms, "fault": self.fault.copy(), "time": self.time}
        if self.auto_reset and done.any():
            if self._ranges is not None:
                fresh = [
                    sample_env_params(self._rng, self._ranges) if d else self._params[i]
                    for i, d in enumerate(done)
                ]
                self._apply_params(fresh, done)
            self._init_envs(done.copy())
            info["reset_mask"] = done.copy()
        return self._obs(), totals, done.copy(), info

    def _rewards(self, tgt_idx):
        roll, pitch, yaw = quat_to_euler(self.base_quat)
        c, s = np.cos(yaw), np.sin(yaw)
        vwx, vwy = self.base_lin_vel[:, 0], self.base_lin_vel[:, 1]
        terms = reward_terms_batch(
            vx=c * vwx + s * vwy,
            vy=-s * vwx + c * vwy,
            vyaw=self.base_ang_vel[:, 2],
            roll=roll,
            pitch=pitch,
            q=self.q[:, :19],
            qd=self.qd[:, :19],
            tau=self.tau[:, :19],
            contact=self.foot_contact,
            foot_speed=self.foot_speed,
            foot_force=self.foot_force,
            target_vec=self._stream.pose[tgt_idx],      # (n, 24)
            target_contacts=self._stream.contacts[tgt_idx],
            force_threshold=self.cfg.contact_force_threshold,
        )
        return terms, terms @ self._w

    # -- observation and state ------------------------------------------------

    def _obs(self):
        roll, pitch, _ = quat_to_euler(self.base_quat)
        omega_body = quat_rotate(quat_conj(self.base_quat), self.base_ang_vel)
        return np.concatenate(
            [roll[:, None], pitch[:, None], omega_body,
             self.q[:, :19], self.qd[:, :19], self.last_action],
            axis=1,
        )

    def _obs_maybe_squeezed(self):
        obs = self._obs()
        return obs[0] if self.n == 1 else obs

    @property
    def time(self):
        return float(self.t_steps.max()) * POLICY_DT

    def current_target_vector(self):
        """(N, 24) target rows the policy should condition on this step."""
        idx = np.minimum(self.t_steps + 1, len(self._stream) - 1)
        return self._stream.pose[idx]

    def state(self, i=0) -> SimState:
        feet = tuple(
            FootContact(
                in_contact=bool(self.foot_contact[i, f]),
                normal_force=float(self.foot_force[i, f]),
                planar_velocity=float(self.foot_speed[i, f]),
            )
            for f in range(2)
        )
        return SimState(
            base_position=self.base_pos[i].copy(),
            base_rotation=Rotation(self.base_quat[i], normalize=False),
            base_lin_vel=self.base_lin_vel[i].copy(),
            base_ang_vel=self.base_ang_vel[i].copy(),
            q=self.q[i, :19].copy(),
            qd=self.qd[i, :19].copy(),
            tau=self.tau[i, :19].copy(),
            feet=feet,
            last_action=self.last_action[i].copy(),
            time=float(self.t_steps[i]) * POLICY_DT,
        )

    # -- disturbances and modes -------------------------------------------------

    def apply_push(self, force, duration):
        """Constant external force at the base for `duration` seconds,
        starting with the next inner tick."""
        force = np.asarray(force, dtype=np.float64)
        if force.shape != (3,) or not np.all(np.isfinite(force)):
            raise ValueError("force must be a finite 3-vector")
        self._push_force = force
        self._push_ticks = int(round(duration / self.cfg.dt))

    def set_passthrough(self, whole_body_target):
        """Pin the base and PD-track the full 33-dim target directly,
        bypassing the policy and the delay queue. Base rates are zeroed; the
        base pose is left exactly where it is."""
        self._passthrough = np.asarray(whole_body_target.full_q(), dtype=np.float64)
        self.base_lin_vel[:] = 0.0
        self.base_ang_vel[:] = 0.0

    def release_passthrough(self):
        self._passthrough = None

    # -- logging ------------------------------------------------------------

    def enable_logging(self, path, env_index=0):
        self._log = open(path, "w")
        self._log_index = int(env_index)

    def close_log(self):
        if self._log is not None:
            self._log.close()
            self._log = None


def sit_mode_passthrough(env: HumanoidEnv, whole_body_target):
    """Engage seated passthrough on a running env (see set_passthrough)."""
    env.set_passthrough(whole_body_target)
