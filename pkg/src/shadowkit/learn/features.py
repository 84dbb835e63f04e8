"""Stand-in visual features.

Real deployments extract camera features with a frozen vision backbone; on a
desk there are no cameras, so a fixed random projection followed by tanh
plays that role.  The map is deterministic for a given seed, injective
whenever feature_dim >= state_dim (tanh is strictly monotonic and a generic
random matrix has full column rank), and Lipschitz with a constant bounded
by the largest singular value of the projection.
"""

from __future__ import annotations

import numpy as np


class FeatureOracle:
    """Per-camera feature map state -> tanh(W state + b)."""

    def __init__(self, state_dim: int, feature_dim: int, n_cameras: int = 2,
                 seed: int = 0):
        if state_dim <= 0 or feature_dim <= 0 or n_cameras <= 0:
            raise ValueError("state_dim, feature_dim, n_cameras must be positive")
        self.state_dim = state_dim
        self.feature_dim = feature_dim
        self.n_cameras = n_cameras
        self.seed = seed
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(state_dim)
        self.weights = rng.normal(0.0, scale,
                                  (n_cameras, feature_dim, state_dim))
        self.biases = rng.normal(0.0, 0.1, (n_cameras, feature_dim))

    def __call__(self, state) -> np.ndarray:
        """Features for one state (S,) -> (C, F) or a batch (..., S) -> (..., C, F)."""
        s = np.asarray(state, dtype=np.float64)
        if s.shape[-1] != self.state_dim:
            raise ValueError(
                f"expected state dim {self.state_dim}, got {s.shape[-1]}")
        pre = np.einsum("cfs,...s->...cf", self.weights, s) + self.biases
        return np.tanh(pre)

    def lipschitz_bound(self) -> float:
        """Upper bound on the per-camera Lipschitz constant (2-norm)."""
        return max(np.linalg.norm(self.weights[c], ord=2)
                   for c in range(self.n_cameras))
