"""Control policy network.

A decoder-only transformer maps a short history of (proprioception, target
pose) pairs to joint-position setpoints.  Each timestep is embedded as a
single token (proprio embedding + target embedding summed), positions are
right-aligned so the newest token always sits in the last context slot, and
attention is causal.  The action head parameterizes a diagonal Gaussian with
a state-independent learned log standard deviation; a scalar value head
shares the trunk.

Shapes are (batch, time, feature) throughout.  Histories shorter than the
context window may be passed either unpadded or left-padded with a lengths
vector; both produce identical outputs at the valid positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


def sinusoidal_positions(n: int, width: int, dtype: torch.dtype) -> torch.Tensor:
    """Fixed sin/cos position table, shape (n, width)."""
    if width % 2 != 0:
        raise ValueError(f"width must be even, got {width}")
    pos = torch.arange(n, dtype=dtype)[:, None]
    idx = torch.arange(width // 2, dtype=dtype)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), 2.0 * idx / width)
    table = torch.zeros(n, width, dtype=dtype)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle)
    return table


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with a 4x GELU MLP."""

    def __init__(self, width: int, heads: int, dtype: torch.dtype):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.ln1 = nn.LayerNorm(width, dtype=dtype)
        self.ln2 = nn.LayerNorm(width, dtype=dtype)
        self.qkv = nn.Linear(width, 3 * width, dtype=dtype)
        self.proj = nn.Linear(width, width, dtype=dtype)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width, dtype=dtype),
            nn.GELU(),
            nn.Linear(4 * width, width, dtype=dtype),
        )

    def forward(self, x: torch.Tensor, allowed: torch.Tensor | None) -> torch.Tensor:
        b, t, w = x.shape
        dh = w // self.heads
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, dh).transpose(1, 2)
        k = k.view(b, t, self.heads, dh).transpose(1, 2)
        v = v.view(b, t, self.heads, dh).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(dh)
        if allowed is not None:
            att = att.masked_fill(~allowed, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, w)
        x = x + self.proj(y)
        x = x + self.mlp(self.ln2(x))
        return x


@dataclass(frozen=True)
class ShadowPolicyConfig:
    """Sizes for the control policy.

    Dims are configurable so the same network runs the 2-joint toy benchmark
    and the full humanoid without special cases.
    """

    context_length: int = 8
    proprio_dim: int = 62
    target_dim: int = 24
    action_dim: int = 19
    width: int = 128
    heads: int = 4
    layers: int = 3
    log_std_init: float = -1.0

    def __post_init__(self):
        for name in ("context_length", "proprio_dim", "target_dim", "action_dim",
                     "width", "heads", "layers"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive int, got {v!r}")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.width % 2 != 0:
            raise ValueError("width must be even")


class ShadowPolicy(nn.Module):
    def __init__(self, config: ShadowPolicyConfig | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        cfg = config if config is not None else ShadowPolicyConfig()
        self.config = cfg
        self.embed_proprio = nn.Linear(cfg.proprio_dim, cfg.width, dtype=dtype)
        self.embed_target = nn.Linear(cfg.target_dim, cfg.width, dtype=dtype)
        self.register_buffer(
            "pos_table", sinusoidal_positions(cfg.context_length, cfg.width, dtype))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.width, cfg.heads, dtype) for _ in range(cfg.layers))
        self.ln_out = nn.LayerNorm(cfg.width, dtype=dtype)
        self.action_head = nn.Linear(cfg.width, cfg.action_dim, dtype=dtype)
        self.value_head = nn.Linear(cfg.width, 1, dtype=dtype)
        # Setpoint policies must start near-neutral: a randomly initialized
        # head emits constant joint-target biases large enough to destabilize
        # the plant before any learning happens.
        nn.init.orthogonal_(self.action_head.weight, 0.01)
        nn.init.zeros_(self.action_head.bias)
        self.log_std = nn.Parameter(
            torch.full((cfg.action_dim,), cfg.log_std_init, dtype=dtype))

    def forward(self, proprio: torch.Tensor, target: torch.Tensor,
                lengths: torch.Tensor | None = None):
        """Per-position outputs: (mean (B,T,A), log_std (A,), value (B,T)).

        `lengths` marks left-padded batches: sample i has lengths[i] valid
        trailing tokens.  Padded positions are excluded from attention keys;
        their outputs are garbage and must not be read.
        """
        cfg = self.config
        if proprio.ndim != 3 or target.ndim != 3:
            raise ValueError("expected (batch, time, dim) inputs")
        b, t, dp = proprio.shape
        if dp != cfg.proprio_dim or target.shape[-1] != cfg.target_dim:
            raise ValueError(
                f"feature dims ({dp}, {target.shape[-1]}) do not match config "
                f"({cfg.proprio_dim}, {cfg.target_dim})")
        if target.shape[:2] != (b, t):
            raise ValueError("proprio and target disagree on (batch, time)")
        if t > cfg.context_length:
            raise ValueError(f"history length {t} exceeds context {cfg.context_length}")

        # Right-aligned absolute slots: the newest token is always slot ctx-1,
        # so a short history and its left-padded version embed identically.
        offset = cfg.context_length - t
        x = self.embed_proprio(proprio) + self.embed_target(target)
        x = x + self.pos_table[offset:offset + t]

        device = proprio.device
        steps = torch.arange(t, device=device)
        allowed = (steps[None, :] <= steps[:, None])[None, None]  # causal, inclusive
        if lengths is not None:
            if lengths.shape != (b,):
                raise ValueError("lengths must have shape (batch,)")
            valid = steps[None, :] >= (t - lengths.to(device))[:, None]
            allowed = allowed & valid[:, None, None, :]
            # Fully-masked rows would NaN under softmax; padded queries may
            # attend themselves since their outputs are never read.
            eye = torch.eye(t, dtype=torch.bool, device=device)
            allowed = allowed | eye[None, None]
        allowed = allowed.expand(b, 1, t, t)

        for block in self.blocks:
            x = block(x, allowed)
        x = self.ln_out(x)
        mean = self.action_head(x)
        value = self.value_head(x).squeeze(-1)
        return mean, self.log_std, value

    @torch.no_grad()
    def act(self, proprio: torch.Tensor, target: torch.Tensor,
            lengths: torch.Tensor | None = None):
        """Newest-position outputs for rollout: (mean (B,A), log_std, value (B,))."""
        mean, log_std, value = self.forward(proprio, target, lengths)
        return mean[:, -1], log_std.detach(), value[:, -1]


def shadow_forward(policy: ShadowPolicy, proprio, target, lengths=None):
    """Functional wrapper: outputs for the newest history entry.

    Accepts numpy or torch inputs of shape (T, dim) or (B, T, dim); returns
    torch tensors (mean (..., A), log_std (A,), value (...,)).
    """
    p = torch.as_tensor(proprio, dtype=policy.log_std.dtype)
    g = torch.as_tensor(target, dtype=policy.log_std.dtype)
    single = p.ndim == 2
    if single:
        p, g = p[None], g[None]
        if lengths is not None:
            lengths = torch.as_tensor(lengths).reshape(1)
    elif lengths is not None:
        lengths = torch.as_tensor(lengths)
    mean, log_std, value = policy(p, g, lengths)
    mean, value = mean[:, -1], value[:, -1]
    if single:
        mean, value = mean[0], value[0]
    return mean, log_std, value
