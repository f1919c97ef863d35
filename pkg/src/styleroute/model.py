"""The full network: encoder/decoder, shared SREU and Ada-Route."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .encdec import EncDec
from .router import AdaRoute, AdaRouteConfig, route_states
from .sreu import SREU, SreuConfig
from .trajectory import unroll


@dataclass(frozen=True)
class ModelConfig:
    rep_width: int = 32
    style_width: int = 64
    downsample: int = 4
    n_blocks: int = 3
    proj_dim: int = 8
    mlp_hidden: int = 128
    activation: str = "silu"
    normalization: str = "none"

    def __post_init__(self):
        if self.normalization != "none":
            raise ValueError("only normalization='none' is implemented")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Network(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        c = config
        self.encdec = EncDec(c.rep_width, c.style_width, c.downsample, c.activation)
        self.sreu = SREU(SreuConfig(c.n_blocks, c.n_blocks, c.rep_width, c.style_width, c.activation))
        self.router = AdaRoute(AdaRouteConfig(c.style_width, c.proj_dim, c.mlp_hidden, c.activation))

    def encode(self, x):
        return self.encdec.encode(x)

    def decode(self, rep):
        return self.encdec.decode(rep)

    def step(self, rep, style):
        return self.sreu(rep, style)

    def basic(self, x, depth=1):
        """``D(SREU^depth(E(x)))``; depth 1 is the basic enhancement network."""
        rep, style = self.encode(x)
        for _ in range(depth):
            rep, style = self.sreu(rep, style)
        return self.decode(rep)

    def unroll(self, x, K):
        rep, style = self.encode(x)
        return unroll(self.sreu, rep, style, K)

    def forward(self, x, K=2):
        """Routed enhancement: returns (image, RoutingDecision, Trajectory)."""
        traj = self.unroll(x, K)
        decision = route_states(self.router, traj.reps, traj.styles)
        return self.decode(decision.fused), decision, traj


def parameter_groups(net: Network):
    """Named parameters split by namespace prefix."""
    groups = {}
    for name, p in net.named_parameters():
        groups.setdefault(name.split(".", 1)[0], []).append((name, p))
    return groups
