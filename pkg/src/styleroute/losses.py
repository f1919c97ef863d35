"""Reconstruction, Gram-style, routing and phase objectives.

All losses take NCHW tensors and reduce by means, so magnitudes do not
depend on resolution. ``per_sample=True`` keeps the batch axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch
from torch import nn
import torch.nn.functional as F

from .encdec import gradient_tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 1.0
    lambda_l2: float = 1.0
    lambda_str: float = 1.0
    lambda_grad: float = 0.5
    lambda_perc: float = 0.1
    lambda_style: float = 1.0
    lambda_rep_dec: float = 1.0
    lambda_w_recon: float = 1.0
    lambda_route: float = 0.1
    lambda_k_recon: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")

    def to_dict(self):
        return asdict(self)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _mean(x, per_sample):
    if per_sample:
        return x.flatten(1).mean(dim=1)
    return x.mean()


# -- feature extractors -------------------------------------------------------

class ExtractorUnavailable(RuntimeError):
    pass


class RandomPyramid(nn.Module):
    """Frozen random-weight three-stage conv pyramid; seeded, so bit-stable."""

    name = "random"

    def __init__(self, layer=2, seed=0, widths=(16, 32, 64)):
        super().__init__()
        if not 1 <= layer <= len(widths):
            raise ValueError(f"layer must be in 1..{len(widths)}")
        self.layer = layer
        gen = torch.Generator().manual_seed(seed)
        stages = []
        cin = 3
        for i, cout in enumerate(widths):
            conv = nn.Conv2d(cin, cout, 3, padding=1, padding_mode="reflect")
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (cin * 9)) ** 0.5)
                conv.bias.zero_()
            mods = [conv, nn.SiLU()]
            if i < len(widths) - 1:
                mods.append(nn.AvgPool2d(2))
            stages.append(nn.Sequential(*mods))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        for stage in self.stages[: self.layer]:
            x = stage(x)
        return x


class VGG19Features(nn.Module):
    """Frozen VGG-19 feature map; the ``layer``-th block's last ReLU output."""

    name = "vgg19"
    # index one past the last ReLU of each block in torchvision's vgg19().features
    BLOCK_ENDS = (4, 9, 18, 27, 36)

    def __init__(self, layer=2, weights_path=None):
        super().__init__()
        try:
            from torchvision.models import vgg19, VGG19_Weights
        except ImportError as exc:
            raise ExtractorUnavailable("torchvision is not installed; use extractor 'random'") from exc
        try:
            if weights_path is not None:
                net = vgg19()
                net.load_state_dict(torch.load(Path(weights_path), map_location="cpu"))
            else:
                net = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ExtractorUnavailable(
                f"VGG-19 weights could not be loaded ({exc}); select extractor 'random' as fallback"
            ) from exc
        self.layer = layer
        self.features = net.features[: self.BLOCK_ENDS[layer - 1]]
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        return self.features((x - self.mean.to(x.dtype)) / self.std.to(x.dtype))


def get_extractor(name="random", layer=2, seed=0, weights_path=None) -> nn.Module:
    if name == "random":
        return RandomPyramid(layer=layer, seed=seed)
    if name == "vgg19":
        return VGG19Features(layer=layer, weights_path=weights_path)
    raise ValueError(f"unknown extractor {name!r}; choose 'random' or 'vgg19'")


# -- reconstruction family ----------------------------------------------------

def pixel_loss(a, b, w: LossWeights = LossWeights(), per_sample=False):
    _same_shape(a, b)
    d = a - b
    return w.lambda_l1 * _mean(d.abs(), per_sample) + w.lambda_l2 * _mean(d * d, per_sample)


def grad_loss(a, b, per_sample=False):
    _same_shape(a, b)
    return _mean((gradient_tensor(a) - gradient_tensor(b)).abs(), per_sample)


def perceptual_loss(a, b, extractor, per_sample=False):
    """Mean squared distance between frozen feature maps of ``a`` and ``b``."""
    if extractor is None:
        raise ExtractorUnavailable("no feature extractor given; select extractor 'random' as fallback")
    _same_shape(a, b)
    fa, fb = extractor(a.to(next(extractor.parameters()).dtype)), extractor(b.to(next(extractor.parameters()).dtype))
    d = fa - fb
    return _mean(d * d, per_sample).to(a.dtype)


def recon_loss(a, b, w: LossWeights = LossWeights(), extractor=None, per_sample=False):
    out = w.lambda_str * pixel_loss(a, b, w, per_sample) + w.lambda_grad * grad_loss(a, b, per_sample)
    if w.lambda_perc:
        out = out + w.lambda_perc * perceptual_loss(a, b, extractor, per_sample)
    return out


# -- style decoupling -------------------------------------------------------------

def gram(x):
    """``x x^T / (a b)`` for an a x b matrix (or a batch of them)."""
    if x.dim() < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"gram needs a non-empty a x b matrix, got shape {tuple(x.shape)}")
    a, b = x.shape[-2:]
    return x @ x.transpose(-1, -2) / (a * b)


def style_gram(style):
    """N x C x h x w style feature -> N x C x C Gram matrix over flattened space."""
    return gram(style.flatten(2))


def style_loss(s1, sgt, per_sample=False):
    _same_shape(s1, sgt)
    d = style_gram(s1) - style_gram(sgt)
    return _mean(d * d, per_sample)


def rep_dec_loss(i0, igt, i0_hat, igt_hat, i1_hat, s1, sgt, w: LossWeights = LossWeights(), extractor=None):
    return (
        recon_loss(i0, i0_hat, w, extractor)
        + recon_loss(igt, igt_hat, w, extractor)
        + recon_loss(igt, i1_hat, w, extractor)
        + w.lambda_style * style_loss(s1, sgt)
    )


# -- routing ----------------------------------------------------------------------

def route_loss(logits, label):
    """Cross-entropy ``-log softmax(logits)[label]``; batched logits average over rows."""
    logits = torch.as_tensor(logits)
    if not torch.isfinite(logits).all():
        raise ValueError("route logits must be finite")
    lg = logits if logits.dim() == 2 else logits.unsqueeze(0)
    lab = torch.as_tensor(label, dtype=torch.long).reshape(-1)
    if lab.numel() != lg.shape[0]:
        raise ValueError("one label per logit row is required")
    if (lab < 0).any() or (lab >= lg.shape[1]).any():
        raise ValueError(f"label out of range 0..{lg.shape[1] - 1}: {lab.tolist()}")
    m = lg.max(dim=1, keepdim=True).values.detach()
    lse = (lg - m).exp().sum(dim=1).log() + m.squeeze(1)
    return (lse - lg.gather(1, lab[:, None]).squeeze(1)).mean()


def k_recon_loss(kbar: int, igt, trajectory_decodes, w: LossWeights = LossWeights(), extractor=None):
    """Zero for ``kbar == 0``, else recon between ``igt`` and the decode of state ``kbar``."""
    K = len(trajectory_decodes) - 1
    if not 0 <= kbar <= K:
        raise ValueError(f"kbar must lie in 0..{K}, got {kbar}")
    if kbar == 0:
        return igt.new_zeros(())
    return recon_loss(igt, trajectory_decodes[kbar], w, extractor)


def k_recon_loss_batch(kbar, igt, selected, w: LossWeights = LossWeights(), extractor=None):
    """Batched variant: ``selected[i]`` is the decode of state ``kbar[i]`` for sample i."""
    kbar = torch.as_tensor(kbar)
    per = recon_loss(igt, selected, w, extractor, per_sample=True)
    return (per * (kbar > 0).to(per.dtype)).mean()


def ada_mod_loss(rep_dec, w_recon, route, k_recon, w: LossWeights = LossWeights()):
    return (
        w.lambda_rep_dec * rep_dec
        + w.lambda_w_recon * w_recon
        + w.lambda_route * route
        + w.lambda_k_recon * k_recon
    )
