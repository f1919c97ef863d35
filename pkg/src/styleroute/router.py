"""Ada-Route: per-state logits from style statistics, softmax weights, fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encdec import make_activation
from .losses import style_gram


@dataclass(frozen=True)
class AdaRouteConfig:
    style_width: int = 64
    proj_dim: int = 8
    mlp_hidden: int = 128
    activation: str = "silu"

    def __post_init__(self):
        if not 1 <= self.proj_dim <= self.style_width:
            raise ValueError(f"proj_dim must lie in 1..style_width, got {self.proj_dim}")


@dataclass
class RoutingDecision:
    logits: torch.Tensor  # N x (K+1)
    weights: torch.Tensor  # N x (K+1)
    fused: torch.Tensor  # N x C x H x W
    pre_logit_vectors: torch.Tensor  # N x (K+1) x d


class AdaRoute(nn.Module):
    """Shared across states: Gram compressed by ``P_A G P_B^T``, plus GAP, into an MLP."""

    def __init__(self, config: AdaRouteConfig = AdaRouteConfig()):
        super().__init__()
        self.config = config
        c = config
        self.proj_a = nn.Parameter(torch.empty(c.proj_dim, c.style_width))
        self.proj_b = nn.Parameter(torch.empty(c.proj_dim, c.style_width))
        nn.init.orthogonal_(self.proj_a)
        nn.init.orthogonal_(self.proj_b)
        self.hidden = nn.Linear(c.proj_dim * c.proj_dim + c.style_width, c.mlp_hidden)
        self.act = make_activation(c.activation)
        self.out = nn.Linear(c.mlp_hidden, 1)

    def forward(self, style):
        """N x Cs x h x w -> (logit N, pre_logit N x hidden)."""
        if style.dim() != 4 or style.shape[1] != self.config.style_width:
            raise ValueError(
                f"router expects N x {self.config.style_width} x h x w style, got {tuple(style.shape)}"
            )
        g = style_gram(style)
        compressed = self.proj_a @ g @ self.proj_b.t()
        feat = torch.cat([compressed.flatten(1), style.mean(dim=(2, 3))], dim=1)
        pre = self.act(self.hidden(feat))
        return self.out(pre).squeeze(1), pre


def ada_route_logit(router: AdaRoute, style):
    return router(style)


def route_weights(logits):
    """Stable softmax over the last axis."""
    logits = torch.as_tensor(logits)
    if torch.isnan(logits).any():
        raise ValueError("route logits contain NaN")
    m = logits.max(dim=-1, keepdim=True).values
    e = (logits - m).exp()
    return e / e.sum(dim=-1, keepdim=True)


def fuse(candidates, weights):
    """Sum_k w_k C_k. ``weights`` is (K+1,) or N x (K+1) with NCHW candidates."""
    if len(candidates) == 0:
        raise ValueError("no candidates to fuse")
    weights = torch.as_tensor(weights)
    n_states = weights.shape[-1]
    if len(candidates) != n_states:
        raise ValueError(f"{len(candidates)} candidates but {n_states} weights")
    shape = candidates[0].shape
    for c in candidates[1:]:
        if c.shape != shape:
            raise ValueError(f"candidate shapes differ: {tuple(shape)} vs {tuple(c.shape)}")
    stack = torch.stack(list(candidates), dim=-1)  # ... x (K+1)
    if weights.dim() == 1:
        return (stack * weights.to(stack.dtype)).sum(dim=-1)
    w = weights.to(stack.dtype).view(weights.shape[0], *([1] * (stack.dim() - 2)), n_states)
    return (stack * w).sum(dim=-1)


def route_states(router: AdaRoute, reps, styles) -> RoutingDecision:
    """Evaluate the shared router on every S_k and fuse the C_k."""
    outs = [router(s) for s in styles]
    logits = torch.stack([o[0] for o in outs], dim=1)
    pre = torch.stack([o[1] for o in outs], dim=1)
    weights = route_weights(logits)
    return RoutingDecision(logits, weights, fuse(reps, weights), pre)


def route_and_decode(router: AdaRoute, trajectory, decoder):
    decision = route_states(router, trajectory.reps, trajectory.styles)
    return decision, decoder(decision.fused)


def project_routing_vectors(vectors) -> np.ndarray:
    """Centered PCA onto the top two components.

    Axes are ordered by descending variance; each axis is sign-flipped so its
    largest-magnitude coordinate is positive. Returns an M x 2 array.
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise ValueError("need at least two vectors to project")
    centered = v - v.mean(axis=0)
    if np.allclose(centered, 0.0):
        raise ValueError("degenerate covariance: all routing vectors are identical")
    # SVD of the centered data gives the covariance eigenvectors in descending order
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    for j in range(2):
        i = np.argmax(np.abs(coords[:, j]))
        if coords[i, j] < 0:
            coords[:, j] = -coords[:, j]
    return coords
