"""PPO trainer for the control policy.

The policy network consumes a rolling history window per environment, so the
rollout buffer stores the full (context, feature) windows alongside lengths
rather than single observations.  Advantages use generalized advantage
estimation; `dones` block bootstrapping across episode boundaries.

All stochastic choices (action noise, minibatch shuffling) are driven by one
numpy Generator, so a seeded run is reproducible end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .nets import ShadowPolicy


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; the caller keeps the last good weights."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 256
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    horizon: int = 64
    max_grad_norm: float = 1.0
    normalize_advantages: bool = True
    anneal_lr: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must be in (0, 1], got {self.gae_lambda}")
        if self.clip_eps <= 0.0:
            raise ValueError(f"clip_eps must be positive, got {self.clip_eps}")
        for name in ("epochs", "minibatch_size", "horizon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


def gae_advantages(rewards, values, dones, gamma: float, lam: float,
                   bootstrap_value=0.0, normalize: bool = False):
    """Generalized advantage estimation over a (T,) or (T, N) rollout.

    `bootstrap_value` is V(s_T) for the state after the last step; a done at
    step t cuts both the TD target and the advantage recursion, so no value
    leaks across episode boundaries.  Returns (advantages, returns) where
    returns = advantages + values (computed before any normalization).
    """
    if not 0.0 < gamma <= 1.0 or not 0.0 < lam <= 1.0:
        raise ValueError("gamma and lam must be in (0, 1]")
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if r.shape != v.shape or r.shape != d.shape:
        raise ValueError("rewards, values, dones must share a shape")
    if r.ndim not in (1, 2) or r.shape[0] == 0:
        raise ValueError("expected a non-empty (T,) or (T, N) rollout")

    boot = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64),
                           r.shape[1:]).copy()
    adv = np.zeros_like(r)
    next_value = boot
    next_adv = np.zeros_like(boot)
    for t in range(r.shape[0] - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = v[t]
    returns = adv + v
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor,
                      clip_eps: float) -> torch.Tensor:
    """Per-sample PPO objective min(r*A, clip(r)*A); never above the unclipped r*A."""
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    return torch.minimum(unclipped, clipped)


class RolloutBuffer:
    """Preallocated storage for one on-policy rollout of window-shaped obs."""

    def __init__(self, horizon: int, num_envs: int, context: int,
                 proprio_dim: int, target_dim: int, action_dim: int):
        shape = (horizon, num_envs)
        self.proprio = np.zeros(shape + (context, proprio_dim), dtype=np.float32)
        self.target = np.zeros(shape + (context, target_dim), dtype=np.float32)
        self.lengths = np.zeros(shape, dtype=np.int64)
        self.actions = np.zeros(shape + (action_dim,), dtype=np.float32)
        self.log_probs = np.zeros(shape, dtype=np.float32)
        self.values = np.zeros(shape, dtype=np.float32)
        self.rewards = np.zeros(shape, dtype=np.float32)
        self.dones = np.zeros(shape, dtype=bool)
        self.pos = 0
        self.horizon = horizon

    def add(self, proprio, target, lengths, actions, log_probs, values,
            rewards, dones):
        t = self.pos
        if t >= self.horizon:
            raise RuntimeError("rollout buffer is full")
        self.proprio[t] = proprio
        self.target[t] = target
        self.lengths[t] = lengths
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.pos = t + 1

    def batch(self, advantages, returns, dtype=torch.float32):
        """Flatten (T, N, ...) into torch tensors keyed for ppo_update."""
        if self.pos != self.horizon:
            raise RuntimeError("rollout buffer not full")
        flat = lambda a: torch.as_tensor(a.reshape((-1,) + a.shape[2:]))
        return {
            "proprio": flat(self.proprio).to(dtype),
            "target": flat(self.target).to(dtype),
            "lengths": flat(self.lengths),
            "actions": flat(self.actions).to(dtype),
            "log_probs": flat(self.log_probs).to(dtype),
            "advantages": flat(np.asarray(advantages, dtype=np.float32)).to(dtype),
            "returns": flat(np.asarray(returns, dtype=np.float32)).to(dtype),
        }


def _gaussian_log_prob(actions, mean, log_std):
    var = torch.exp(2.0 * log_std)
    return (-0.5 * ((actions - mean) ** 2 / var)
            - log_std - 0.5 * np.log(2.0 * np.pi)).sum(dim=-1)


def ppo_losses(policy: ShadowPolicy, minibatch: dict, cfg: PPOConfig) -> dict:
    """Loss terms on one minibatch; separated from the step for testability."""
    mean, log_std, value = policy(minibatch["proprio"], minibatch["target"],
                                  minibatch["lengths"])
    mean, value = mean[:, -1], value[:, -1]
    new_log_prob = _gaussian_log_prob(minibatch["actions"], mean, log_std)
    ratio = torch.exp(new_log_prob - minibatch["log_probs"])
    adv = minibatch["advantages"]

    policy_loss = -clipped_surrogate(ratio, adv, cfg.clip_eps).mean()
    value_loss = ((value - minibatch["returns"]) ** 2).mean()
    entropy = (log_std + 0.5 * np.log(2.0 * np.pi * np.e)).sum()
    with torch.no_grad():
        log_ratio = new_log_prob - minibatch["log_probs"]
        approx_kl = ((torch.exp(log_ratio) - 1.0) - log_ratio).mean()
        clip_fraction = ((ratio - 1.0).abs() > cfg.clip_eps).float().mean()
    total = (policy_loss + cfg.value_coef * value_loss
             - cfg.entropy_coef * entropy)
    return {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "total_loss": total,
        "approx_kl": approx_kl,
        "clip_fraction": clip_fraction,
    }


def ppo_update(policy: ShadowPolicy, optimizer: torch.optim.Optimizer,
               batch: dict, cfg: PPOConfig, rng: np.random.Generator) -> dict:
    """Run cfg.epochs of shuffled minibatch updates; returns averaged metrics.

    Raises TrainingDiverged if any loss turns non-finite (weights from the
    offending step are never applied) and ValueError on an empty batch.
    """
    n = int(batch["advantages"].shape[0])
    if n == 0:
        raise ValueError("ppo_update got an empty batch")
    sums: dict[str, float] = {}
    steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = torch.as_tensor(order[lo:lo + cfg.minibatch_size])
            minibatch = {k: v[idx] for k, v in batch.items()}
            losses = ppo_losses(policy, minibatch, cfg)
            if not torch.isfinite(losses["total_loss"]):
                raise TrainingDiverged("non-finite PPO loss", iteration=-1)
            optimizer.zero_grad()
            losses["total_loss"].backward()
            if cfg.max_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            for k, v in losses.items():
                sums[k] = sums.get(k, 0.0) + float(v.detach())
            steps += 1
    return {k: v / steps for k, v in sums.items()}


class _HistoryWindows:
    """Rolling left-padded history windows for a batch of envs."""

    def __init__(self, num_envs: int, context: int, proprio_dim: int, target_dim: int):
        self.proprio = np.zeros((num_envs, context, proprio_dim), dtype=np.float32)
        self.target = np.zeros((num_envs, context, target_dim), dtype=np.float32)
        self.lengths = np.zeros(num_envs, dtype=np.int64)
        self.context = context

    def clear(self, mask):
        self.lengths[mask] = 0
        self.proprio[mask] = 0.0
        self.target[mask] = 0.0

    def push(self, proprio, target):
        self.proprio[:, :-1] = self.proprio[:, 1:]
        self.target[:, :-1] = self.target[:, 1:]
        self.proprio[:, -1] = proprio
        self.target[:, -1] = target
        np.minimum(self.lengths + 1, self.context, out=self.lengths)


def train_shadow(env, policy: ShadowPolicy, cfg: PPOConfig, iterations: int,
                 rng: np.random.Generator, observe, initial_obs,
                 start_iteration: int = 0, callback=None) -> list[dict]:
    """On-policy training loop.

    `env` must expose `n` and step(actions) -> (obs, reward, done, info) with
    automatic per-env resets (info["reset_mask"]) and batch-shaped rewards.
    `observe(env, obs)` splits a raw observation batch into (proprio, target)
    arrays.  Returns a list of per-iteration metric dicts;
    `callback(metrics, policy)` runs after each iteration (checkpointing,
    logging).
    """
    pcfg = policy.config
    n = env.n
    windows = _HistoryWindows(n, pcfg.context_length, pcfg.proprio_dim,
                              pcfg.target_dim)
    proprio, target = observe(env, initial_obs)
    windows.push(proprio, target)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.learning_rate)

    ep_return = np.zeros(n, dtype=np.float64)
    history: list[dict] = []
    for it in range(start_iteration, start_iteration + iterations):
        if cfg.anneal_lr:
            frac = 1.0 - (it - start_iteration) / iterations
            for group in optimizer.param_groups:
                group["lr"] = cfg.learning_rate * frac
        buf = RolloutBuffer(cfg.horizon, n, pcfg.context_length,
                            pcfg.proprio_dim, pcfg.target_dim, pcfg.action_dim)
        completed: list[float] = []
        term_sum = None
        for _ in range(cfg.horizon):
            obs_p = torch.as_tensor(windows.proprio)
            obs_t = torch.as_tensor(windows.target)
            lens = torch.as_tensor(windows.lengths)
            with torch.no_grad():
                mean, log_std, value = policy.act(obs_p, obs_t, lens)
            if not torch.isfinite(mean).all():
                raise TrainingDiverged("non-finite policy output during rollout",
                                       iteration=it)
            std = torch.exp(log_std)
            noise = torch.as_tensor(
                rng.standard_normal(mean.shape).astype(np.float32))
            actions = mean + std * noise
            log_prob = _gaussian_log_prob(actions, mean, log_std)

            obs, reward, done, info = env.step(actions.numpy())
            buf.add(windows.proprio, windows.target, windows.lengths,
                    actions.numpy(), log_prob.numpy(), value.numpy(),
                    reward, done)
            ep_return += np.asarray(reward, dtype=np.float64)
            if "terms" in info:
                col = np.asarray(info["terms"], dtype=np.float64).mean(axis=0)
                term_sum = col if term_sum is None else term_sum + col
            if done.any():
                completed.extend(ep_return[done].tolist())
                ep_return[done] = 0.0
                windows.clear(info.get("reset_mask", done))
            proprio, target = observe(env, obs)
            windows.push(proprio, target)

        with torch.no_grad():
            _, _, boot = policy.act(torch.as_tensor(windows.proprio),
                                    torch.as_tensor(windows.target),
                                    torch.as_tensor(windows.lengths))
        adv, ret = gae_advantages(buf.rewards, buf.values, buf.dones,
                                  cfg.gamma, cfg.gae_lambda,
                                  bootstrap_value=boot.numpy(),
                                  normalize=cfg.normalize_advantages)
        batch = buf.batch(adv, ret, dtype=policy.log_std.dtype)
        try:
            metrics = ppo_update(policy, optimizer, batch, cfg, rng)
        except TrainingDiverged as exc:
            raise TrainingDiverged(str(exc), iteration=it) from None
        metrics["iteration"] = it
        metrics["reward_mean"] = float(buf.rewards.mean())
        metrics["episode_return_mean"] = (
            float(np.mean(completed)) if completed else None)
        metrics["episodes_completed"] = len(completed)
        if term_sum is not None:
            metrics["reward_terms"] = (term_sum / cfg.horizon).tolist()
        history.append(metrics)
        if callback is not None:
            callback(metrics, policy)
    return history


def observe_toy(env, obs):
    """Split the toy tracking observation into (proprio, target)."""
    from ..sim.toy import PROPRIO_SLICE, TARGET_SLICE
    return obs[:, PROPRIO_SLICE], obs[:, TARGET_SLICE]


def observe_humanoid(env, obs):
    """Humanoid observations are pure proprioception; targets come from the stream."""
    return obs, env.current_target_vector()
