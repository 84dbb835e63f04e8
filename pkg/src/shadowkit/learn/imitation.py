"""Chunked imitation policy.

A single transformer pass maps (camera features, proprioception) to a chunk
of future whole-body actions.  Tokens: one per camera, one for proprio, and
one fixed sinusoidal query slot per chunk step, all under full self-attention.
The action head reads the query slots; a second head reads the camera slots
and predicts the camera features at the end of the chunk.  That forward
prediction only shapes training: its output is discarded at deploy time.

The total loss is action MSE plus feature_loss_weight times feature MSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..dataset import Demonstration
from .features import FeatureOracle
from .nets import TransformerBlock, sinusoidal_positions
from .ppo import TrainingDiverged


@dataclass(frozen=True)
class ImitationPolicyConfig:
    chunk_size: int = 50
    n_cameras: int = 2
    feature_dim: int = 32
    proprio_dim: int = 62
    action_dim: int = 33
    width: int = 128
    heads: int = 4
    layers: int = 3
    feature_loss_weight: float = 0.5
    tie_camera_embeddings: bool = True

    def __post_init__(self):
        for name in ("chunk_size", "n_cameras", "feature_dim", "proprio_dim",
                     "action_dim", "width", "heads", "layers"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive int, got {v!r}")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.width % 2 != 0:
            raise ValueError("width must be even")
        if self.feature_loss_weight < 0.0:
            raise ValueError("feature_loss_weight must be non-negative")


class ImitationPolicy(nn.Module):
    def __init__(self, config: ImitationPolicyConfig | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        cfg = config if config is not None else ImitationPolicyConfig()
        self.config = cfg
        self.embed_feature = nn.Linear(cfg.feature_dim, cfg.width, dtype=dtype)
        self.embed_proprio = nn.Linear(cfg.proprio_dim, cfg.width, dtype=dtype)
        # Tied camera embeddings make the cameras interchangeable: swapping
        # the two feature vectors permutes the predicted features and leaves
        # the action chunk unchanged.
        n_cam_embed = 1 if cfg.tie_camera_embeddings else cfg.n_cameras
        self.camera_embed = nn.Parameter(
            torch.zeros(n_cam_embed, cfg.width, dtype=dtype))
        self.proprio_embed = nn.Parameter(torch.zeros(cfg.width, dtype=dtype))
        self.register_buffer(
            "query_table", sinusoidal_positions(cfg.chunk_size, cfg.width, dtype))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.width, cfg.heads, dtype) for _ in range(cfg.layers))
        self.ln_out = nn.LayerNorm(cfg.width, dtype=dtype)
        self.action_head = nn.Linear(cfg.width, cfg.action_dim, dtype=dtype)
        self.feature_head = nn.Linear(cfg.width, cfg.feature_dim, dtype=dtype)

    def forward(self, features: torch.Tensor, proprio: torch.Tensor):
        """(B, C, F) features and (B, P) proprio -> ((B, K, A), (B, C, F))."""
        cfg = self.config
        if features.ndim != 3 or features.shape[1:] != (cfg.n_cameras,
                                                        cfg.feature_dim):
            raise ValueError(
                f"features must be (batch, {cfg.n_cameras}, {cfg.feature_dim})")
        if proprio.ndim != 2 or proprio.shape[-1] != cfg.proprio_dim:
            raise ValueError(f"proprio must be (batch, {cfg.proprio_dim})")
        b = features.shape[0]

        cam = self.embed_feature(features)
        if cfg.tie_camera_embeddings:
            cam = cam + self.camera_embed[0]
        else:
            cam = cam + self.camera_embed
        prop = (self.embed_proprio(proprio) + self.proprio_embed)[:, None]
        query = self.query_table[None].expand(b, -1, -1)
        x = torch.cat([cam, prop, query], dim=1)

        for block in self.blocks:
            x = block(x, allowed=None)  # full attention, no mask
        x = self.ln_out(x)
        chunk = self.action_head(x[:, cfg.n_cameras + 1:])
        pred_features = self.feature_head(x[:, :cfg.n_cameras])
        return chunk, pred_features


def hit_forward(policy: ImitationPolicy, features, proprio):
    """Single-query wrapper: (C, F) features + (P,) proprio -> ((K, A), (C, F))."""
    dtype = policy.ln_out.weight.dtype
    f = torch.as_tensor(features, dtype=dtype)
    p = torch.as_tensor(proprio, dtype=dtype)
    single = f.ndim == 2
    if single:
        f, p = f[None], p[None]
    chunk, pred = policy(f, p)
    if single:
        chunk, pred = chunk[0], pred[0]
    return chunk, pred


def hit_loss(pred_chunk, true_chunk, pred_features, true_features,
             feature_loss_weight: float):
    """Action MSE + weighted forward-prediction feature MSE (both elementwise means)."""
    if feature_loss_weight < 0.0:
        raise ValueError("feature_loss_weight must be non-negative")
    action_mse = ((pred_chunk - true_chunk) ** 2).mean()
    feature_mse = ((pred_features - true_features) ** 2).mean()
    return action_mse + feature_loss_weight * feature_mse


def _chunk_samples(demos: list[Demonstration], chunk: int):
    """(demo_index, start) pairs with a full action chunk available."""
    out = []
    for i, demo in enumerate(demos):
        n = demo.actions.shape[0]
        for t in range(0, n - chunk + 1):
            out.append((i, t))
    return out


def _gather_batch(demos, samples, idx, chunk, dtype):
    feats, props, chunks, futs = [], [], [], []
    for j in idx:
        i, t = samples[j]
        demo = demos[i]
        n = demo.actions.shape[0]
        feats.append(demo.features[t])
        props.append(demo.proprio[t])
        chunks.append(demo.actions[t:t + chunk])
        futs.append(demo.features[min(t + chunk, n - 1)])
    to = lambda a: torch.as_tensor(np.stack(a), dtype=dtype)
    return to(feats), to(props), to(chunks), to(futs)


def evaluate_imitation(policy: ImitationPolicy, demos: list[Demonstration],
                       batch_size: int = 64):
    """Full-pass (action_mse, feature_mse) without gradient tracking."""
    cfg = policy.config
    samples = _chunk_samples(demos, cfg.chunk_size)
    if not samples:
        raise ValueError(f"no demonstration has {cfg.chunk_size} steps")
    dtype = policy.ln_out.weight.dtype
    se_a = se_f = 0.0
    na = nf = 0
    with torch.no_grad():
        for lo in range(0, len(samples), batch_size):
            idx = range(lo, min(lo + batch_size, len(samples)))
            f, p, c, fut = _gather_batch(demos, samples, idx, cfg.chunk_size, dtype)
            pred_c, pred_f = policy(f, p)
            se_a += float(((pred_c - c) ** 2).sum())
            se_f += float(((pred_f - fut) ** 2).sum())
            na += c.numel()
            nf += fut.numel()
    return se_a / na, se_f / nf


def train_imitation(train_demos: list[Demonstration],
                    val_demos: list[Demonstration],
                    config: ImitationPolicyConfig, seed: int, epochs: int,
                    batch_size: int = 32, learning_rate: float = 1e-3,
                    callback=None):
    """Minibatch Adam on the chunk + feature loss.

    Returns (policy, history) where history holds one dict per epoch with
    train/val action and feature errors.  Fully deterministic for a given
    seed: weight init comes from torch.manual_seed(seed) and shuffling from
    a numpy generator seeded the same way.
    """
    for name, demos in (("train", train_demos), ("val", val_demos)):
        if not demos:
            raise ValueError(f"{name} demo list is empty")
        for demo in demos:
            if demo.actions.shape[1] != config.action_dim:
                raise ValueError("demo action dim does not match config")
            if demo.features.shape[1:] != (config.n_cameras, config.feature_dim):
                raise ValueError("demo feature shape does not match config")
            if demo.proprio.shape[1] != config.proprio_dim:
                raise ValueError("demo proprio dim does not match config")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    policy = ImitationPolicy(config)
    optimizer = torch.optim.Adam(policy.parameters(), lr=learning_rate)
    samples = _chunk_samples(train_demos, config.chunk_size)
    if not samples:
        raise ValueError(f"no training demo has {config.chunk_size} steps")
    dtype = policy.ln_out.weight.dtype

    history: list[dict] = []
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            f, p, c, fut = _gather_batch(train_demos, samples, idx,
                                         config.chunk_size, dtype)
            pred_c, pred_f = policy(f, p)
            loss = hit_loss(pred_c, c, pred_f, fut, config.feature_loss_weight)
            if not torch.isfinite(loss):
                raise TrainingDiverged("non-finite imitation loss", iteration=epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        train_a, train_f = evaluate_imitation(policy, train_demos)
        val_a, val_f = evaluate_imitation(policy, val_demos)
        row = {"epoch": epoch,
               "train_action_mse": train_a, "train_feature_mse": train_f,
               "val_action_mse": val_a, "val_feature_mse": val_f}
        history.append(row)
        if callback is not None:
            callback(row, policy)
    return policy, history


def make_latent_task_demos(oracle: FeatureOracle, n_demos: int, steps: int,
                           rng: np.random.Generator, proprio_dim: int = 32,
                           action_dim: int = 33, task_seed: int = 0,
                           rate: float = 25.0) -> list[Demonstration]:
    """Synthetic episodes whose actions depend only on a latent visible in features.

    Each episode draws a latent z; camera features come from the oracle
    applied to a slowly shrinking z, and every action in the episode is a
    fixed linear function of z.  Proprioception carries no information about
    z, just a per-episode random vector, so a policy can reach zero training
    error by memorizing proprio yet fail on fresh episodes.  These demos
    exercise how the feature losses affect that failure mode.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    task_rng = np.random.default_rng(task_seed)
    mix = task_rng.normal(0.0, 1.0, (action_dim, oracle.state_dim))
    mix /= np.sqrt(oracle.state_dim)

    demos = []
    for e in range(n_demos):
        z = rng.uniform(-1.0, 1.0, oracle.state_dim)
        decay = 1.0 - 0.5 * np.arange(steps) / (steps - 1)
        states = z[None, :] * decay[:, None]
        features = oracle(states)  # (steps, C, F)
        actions = np.tile(mix @ z, (steps, 1))
        proprio = np.tile(rng.normal(0.0, 1.0, proprio_dim), (steps, 1))
        demos.append(Demonstration(
            proprio=proprio, features=features, actions=actions, rate=rate,
            meta={"task": "latent-lin", "episode": e}))
    return demos
