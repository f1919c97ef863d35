"""Shared recursive enhancement unit.

Representation enhancement blocks (REBs) run at full resolution on C, style
evolution blocks (SEBs) run at style resolution on S. After each paired stage
the SEB output is bilinearly upsampled, mixed by a 1x1 convolution and added
onto the REB stream. One call advances (C, S) by one state and preserves both
shapes, so the unit composes with itself.
"""

from __future__ import annotations

from dataclasses import dataclass

from torch import nn
import torch.nn.functional as F

from .encdec import conv3x3, make_activation


@dataclass(frozen=True)
class SreuConfig:
    n_reb: int = 3
    n_seb: int = 3
    rep_width: int = 32
    style_width: int = 64
    activation: str = "silu"

    def __post_init__(self):
        if self.n_reb < 1 or self.n_seb < 1:
            raise ValueError("n_reb and n_seb must be >= 1")
        if self.n_reb != self.n_seb:
            raise ValueError(f"REBs and SEBs are paired: n_reb={self.n_reb} != n_seb={self.n_seb}")


class ResBlock(nn.Module):
    def __init__(self, width, activation="silu"):
        super().__init__()
        self.body = nn.Sequential(conv3x3(width, width), make_activation(activation), conv3x3(width, width))

    def forward(self, x):
        return x + self.body(x)


class SREU(nn.Module):
    def __init__(self, config: SreuConfig = SreuConfig()):
        super().__init__()
        self.config = config
        c = config
        self.reb = nn.ModuleList(ResBlock(c.rep_width, c.activation) for _ in range(c.n_reb))
        self.seb = nn.ModuleList(ResBlock(c.style_width, c.activation) for _ in range(c.n_seb))
        self.inject = nn.ModuleList(nn.Conv2d(c.style_width, c.rep_width, 1) for _ in range(c.n_reb))
        for conv in self.inject:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def check_shapes(self, rep, style):
        c = self.config
        if rep.dim() != 4 or rep.shape[1] != c.rep_width:
            raise ValueError(f"representation must be N x {c.rep_width} x H x W, got {tuple(rep.shape)}")
        if style.dim() != 4 or style.shape[1] != c.style_width:
            raise ValueError(f"style must be N x {c.style_width} x h x w, got {tuple(style.shape)}")
        if rep.shape[0] != style.shape[0]:
            raise ValueError("representation and style batch sizes differ")
        if rep.shape[-2] % style.shape[-2] or rep.shape[-1] % style.shape[-1]:
            raise ValueError("style resolution must divide the representation resolution")

    def forward(self, rep, style):
        self.check_shapes(rep, style)
        size = rep.shape[-2:]
        for reb, seb, inject in zip(self.reb, self.seb, self.inject):
            style = seb(style)
            cond = F.interpolate(style, size=size, mode="bilinear", align_corners=False)
            rep = reb(rep) + inject(cond)
        return rep, style

    def reb_only(self, rep):
        """The REB stack without style conditioning."""
        for reb in self.reb:
            rep = reb(rep)
        return rep


def sreu_step(unit: SREU, rep, style):
    return unit(rep, style)
