"""Lightweight encoder/decoder with a fixed Sobel gradient branch.

The encoder produces a full-resolution representation feature C from the
image concatenated with its gradient map, and a downsampled style feature S
from C. The decoder maps C back onto an RGB image in [0, 1].
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .tensors import to_tensor

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

ACTIVATIONS = {"silu": nn.SiLU, "gelu": nn.GELU, "tanh": nn.Tanh}


def make_activation(name: str) -> nn.Module:
    try:
        return ACTIVATIONS[name]()
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def conv3x3(cin, cout):
    return nn.Conv2d(cin, cout, 3, padding=1, padding_mode="reflect")


def grayscale(x: torch.Tensor) -> torch.Tensor:
    w = x.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
    return (x * w).sum(dim=1, keepdim=True)


def sobel(gray: torch.Tensor) -> torch.Tensor:
    """N x 1 x H x W -> N x 2 x H x W (horizontal, vertical) with reflect padding."""
    p = F.pad(gray, (1, 1, 1, 1), mode="reflect")
    # separable form: difference first so flat regions give exact zeros
    dx = p[..., :, 2:] - p[..., :, :-2]
    dy = p[..., 2:, :] - p[..., :-2, :]
    gx = dx[..., :-2, :] + 2 * dx[..., 1:-1, :] + dx[..., 2:, :]
    gy = dy[..., :, :-2] + 2 * dy[..., :, 1:-1] + dy[..., :, 2:]
    return torch.cat([gx, gy], dim=1)


def gradient_tensor(x: torch.Tensor) -> torch.Tensor:
    return sobel(grayscale(x))


def grad_map(image) -> np.ndarray:
    """Fixed, non-learnable gradient map of an image, shape H x W x 2."""
    g = gradient_tensor(to_tensor(image, torch.float64))
    return g[0].permute(1, 2, 0).numpy()


def down_stages(downsample: int) -> int:
    stages = int(round(math.log2(downsample))) if downsample >= 1 else -1
    if stages < 0 or 2**stages != downsample:
        raise ValueError(f"style downsample factor must be a power of two, got {downsample}")
    return stages


class Encoder(nn.Module):
    def __init__(self, rep_width=32, style_width=64, downsample=4, activation="silu"):
        super().__init__()
        self.downsample = downsample
        self.conv_in = nn.Sequential(
            conv3x3(3 + 2, rep_width), make_activation(activation), conv3x3(rep_width, rep_width)
        )
        layers = []
        cin = rep_width
        for i in range(down_stages(downsample)):
            if i:
                layers.append(make_activation(activation))
            layers += [nn.AvgPool2d(2), conv3x3(cin, style_width)]
            cin = style_width
        if not layers:
            layers = [nn.Conv2d(rep_width, style_width, 1)]
        self.down = nn.Sequential(*layers)

    def check_resolution(self, h, w):
        if h % self.downsample or w % self.downsample:
            raise ValueError(
                f"resolution {h}x{w} is not divisible by the style downsample factor {self.downsample}"
            )

    def forward(self, x):
        self.check_resolution(*x.shape[-2:])
        rep = self.conv_in(torch.cat([x, gradient_tensor(x)], dim=1))
        return rep, self.down(rep)


class Decoder(nn.Module):
    def __init__(self, rep_width=32, activation="silu"):
        super().__init__()
        self.rep_width = rep_width
        self.conv_out = nn.Sequential(
            conv3x3(rep_width, rep_width),
            make_activation(activation),
            conv3x3(rep_width, rep_width),
            make_activation(activation),
            nn.Conv2d(rep_width, 3, 1),
        )

    def forward(self, rep):
        if rep.dim() != 4 or rep.shape[1] != self.rep_width:
            raise ValueError(
                f"decoder expects N x {self.rep_width} x H x W features, got {tuple(rep.shape)}"
            )
        return torch.sigmoid(self.conv_out(rep))


class EncDec(nn.Module):
    def __init__(self, rep_width=32, style_width=64, downsample=4, activation="silu"):
        super().__init__()
        self.encoder = Encoder(rep_width, style_width, downsample, activation)
        self.decoder = Decoder(rep_width, activation)

    def encode(self, x):
        return self.encoder(x)

    def decode(self, rep):
        return self.decoder(rep)
