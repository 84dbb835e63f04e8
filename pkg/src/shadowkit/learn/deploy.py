"""Two-rate deploy loop.

The environment steps at 50Hz while the imitation policy is queried at 25Hz
(every `query_period` env steps).  Each query yields a fresh action chunk
that replaces the previous one; between queries the loop walks the freshest
chunk in order, clamping at the last entry if the chunk goes stale.  The
control policy turns each consumed chunk entry into a 50Hz action.

Predicted camera features are a training-time signal only: the loop drops
them on the floor, and `zero_predicted_features` lets callers prove the
trace is bit-identical either way.
"""

from __future__ import annotations

import numpy as np
import torch

from .imitation import ImitationPolicy, hit_forward
from .nets import ShadowPolicy


def deploy_loop(shadow_policy: ShadowPolicy, imitation_policy: ImitationPolicy,
                env, initial_obs: np.ndarray, feature_fn, n_steps: int,
                query_period: int = 2,
                zero_predicted_features: bool = False) -> dict:
    """Run the stacked policies on a single environment for n_steps.

    `feature_fn(env)` supplies the per-query camera features (n_cameras, F).
    The imitation chunk's first 19 entries become the joint-position targets
    fed to the control policy (velocity and orientation targets zero); wrist
    and hand entries are logged with each query.  Returns a trace dict with
    per-step actions, observations, rewards, chunk indices, and query count.
    """
    if env.n != 1:
        raise ValueError("deploy_loop drives a single environment")
    if n_steps <= 0 or query_period <= 0:
        raise ValueError("n_steps and query_period must be positive")
    scfg = shadow_policy.config
    icfg = imitation_policy.config
    if icfg.proprio_dim != scfg.proprio_dim:
        raise ValueError("the two policies disagree on proprio_dim")
    if icfg.action_dim < 19 or scfg.action_dim != 19 or scfg.target_dim != 24:
        raise ValueError("expected whole-body chunks (>= 19) and a 19-joint, "
                         "24-target control policy")

    hist_p = np.zeros((scfg.context_length, scfg.proprio_dim), dtype=np.float32)
    hist_t = np.zeros((scfg.context_length, scfg.target_dim), dtype=np.float32)
    hist_len = 0

    obs = np.asarray(initial_obs, dtype=np.float32).reshape(scfg.proprio_dim)
    chunk = None
    chunk_age = 0
    n_queries = 0
    steps = []
    actions = np.zeros((n_steps, scfg.action_dim), dtype=np.float32)
    observations = np.zeros((n_steps, scfg.proprio_dim), dtype=np.float32)
    rewards = np.zeros(n_steps, dtype=np.float64)
    chunk_indices = np.zeros(n_steps, dtype=np.int64)

    for t in range(n_steps):
        queried = t % query_period == 0
        if queried:
            features = np.asarray(feature_fn(env), dtype=np.float32)
            with torch.no_grad():
                new_chunk, pred_features = hit_forward(
                    imitation_policy, features, obs)
            if zero_predicted_features:
                pred_features = torch.zeros_like(pred_features)
            del pred_features  # forward-prediction output is not used here
            chunk = new_chunk.numpy().astype(np.float32)
            chunk_age = 0
            n_queries += 1
        idx = min(chunk_age, icfg.chunk_size - 1)

        target = np.zeros(scfg.target_dim, dtype=np.float32)
        target[5:5 + 19] = chunk[idx, :19]
        hist_p = np.roll(hist_p, -1, axis=0)
        hist_t = np.roll(hist_t, -1, axis=0)
        hist_p[-1] = obs
        hist_t[-1] = target
        hist_len = min(hist_len + 1, scfg.context_length)

        with torch.no_grad():
            mean, _, _ = shadow_policy.act(
                torch.as_tensor(hist_p)[None], torch.as_tensor(hist_t)[None],
                torch.as_tensor([hist_len]))
        action = mean[0].numpy().astype(np.float32)

        obs, reward, done, _ = env.step(action)
        obs = np.asarray(obs, dtype=np.float32).reshape(scfg.proprio_dim)
        total = float(reward.total) if hasattr(reward, "total") else float(reward)

        actions[t] = action
        observations[t] = obs
        rewards[t] = total
        chunk_indices[t] = idx
        steps.append({"t": t, "queried": queried, "chunk_index": int(idx),
                      "reward_total": total, "done": bool(done)})
        chunk_age += 1
        if done:
            break

    n_done = len(steps)
    return {
        "steps": steps,
        "n_env_steps": n_done,
        "n_hit_queries": n_queries,
        "actions": actions[:n_done],
        "observations": observations[:n_done],
        "rewards": rewards[:n_done],
        "chunk_indices": chunk_indices[:n_done],
    }
