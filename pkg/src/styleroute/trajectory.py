"""Recursive state trajectories, image-space cascades and pseudo-labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

PSNR_CAP = 100.0


@dataclass
class Trajectory:
    """States ``(k, C_k, S_k)`` for k = 0..K."""

    states: list

    @property
    def K(self) -> int:
        return len(self.states) - 1

    @property
    def reps(self):
        return [s[1] for s in self.states]

    @property
    def styles(self):
        return [s[2] for s in self.states]


@dataclass(frozen=True)
class PseudoLabel:
    kbar: int
    scores: tuple


def unroll(unit, rep0, style0, K: int) -> Trajectory:
    """State 0 is the given pair verbatim; state k is ``unit`` applied to state k-1."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    states = [(0, rep0, style0)]
    rep, style = rep0, style0
    for k in range(1, K + 1):
        rep, style = unit(rep, style)
        states.append((k, rep, style))
    return Trajectory(states)


@torch.no_grad()
def cascade_images(i0, K: int, network) -> list:
    """``[I_0, N(I_0), N(N(I_0)), ...]`` with ``N = decode . sreu . encode``, no gradients."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    out = [i0]
    x = i0
    for _ in range(K):
        x = network.basic(x)
        out.append(x)
    return out


def psnr_tensor(a, b):
    """Per-sample PSNR in dB (peak 1.0) for NCHW tensors, capped for identical inputs."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = ((a.double() - b.double()) ** 2).flatten(1).mean(dim=1)
    out = 10.0 * torch.log10(1.0 / mse.clamp_min(1e-300))
    return torch.where(mse == 0, torch.full_like(out, PSNR_CAP), out.clamp(max=PSNR_CAP))


def select_label(scores) -> int:
    """Argmax with ties resolved toward the smallest index."""
    scores = np.asarray(scores, dtype=np.float64)
    return int(np.flatnonzero(scores == scores.max())[0])


def pseudo_label(candidates, igt, quality=None) -> PseudoLabel:
    if len(candidates) == 0:
        raise ValueError("no candidates to score")
    if quality is None:
        from .metrics import psnr as quality
    scores = tuple(float(quality(c, igt)) for c in candidates)
    return PseudoLabel(select_label(scores), scores)


def pseudo_labels_batch(candidates, igt):
    """Batched labels for NCHW candidate tensors; returns (kbar LongTensor N, scores N x (K+1))."""
    scores = torch.stack([psnr_tensor(c, igt) for c in candidates], dim=1)
    best = scores.max(dim=1, keepdim=True).values
    # first index attaining the max
    hit = (scores == best).to(torch.int64)
    idx = torch.arange(scores.shape[1]).expand_as(hit)
    kbar = torch.where(hit.bool(), idx, scores.shape[1]).min(dim=1).values
    return kbar, scores
