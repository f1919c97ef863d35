"""Synthetic underwater degradation with known ground truth and severity.

The imaging model is the usual attenuation/backscatter formation
``I = J * t + B * (1 - t) + n`` with a spatially uniform per-channel
transmission ``t`` and veiling light ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Image, SamplePair

# red-suppressed transmission and blue-green veil reached at severity 1
T_ENDPOINT = (0.2, 0.55, 0.85)
B_ENDPOINT = (0.05, 0.25, 0.35)
SIGMA_ENDPOINT = 0.02
JITTER = 0.1


@dataclass(frozen=True)
class DegradationParams:
    transmission: tuple[float, float, float]
    backscatter: tuple[float, float, float]
    severity: float
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        t = tuple(float(v) for v in self.transmission)
        b = tuple(float(v) for v in self.backscatter)
        if len(t) != 3 or len(b) != 3:
            raise ValueError("transmission and backscatter must be 3-vectors")
        if not all(0.0 < v <= 1.0 for v in t):
            raise ValueError(f"transmission must lie in (0, 1], got {t}")
        if not all(0.0 <= v <= 1.0 for v in b):
            raise ValueError(f"backscatter must lie in [0, 1], got {b}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.severity == 0 and (t != (1.0, 1.0, 1.0) or b != (0.0, 0.0, 0.0) or self.noise_sigma):
            raise ValueError("severity 0 requires the identity degradation")
        if self.severity > 0 and t[0] > t[2]:
            raise ValueError("red transmission must not exceed blue transmission")
        object.__setattr__(self, "transmission", t)
        object.__setattr__(self, "backscatter", b)

    def without_noise(self) -> "DegradationParams":
        return DegradationParams(self.transmission, self.backscatter, self.severity, 0.0, self.seed)


def sample_params(severity: float, seed: int = 0) -> DegradationParams:
    """Interpolate from the identity toward the jittered severity-1 endpoints."""
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    if severity == 0:
        return DegradationParams((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), 0.0, 0.0, seed)
    rng = np.random.default_rng(seed)
    jt, jb = rng.uniform(1 - JITTER, 1 + JITTER, size=(2, 3))
    js = rng.uniform(1 - JITTER, 1 + JITTER)
    t_end = np.asarray(T_ENDPOINT) * jt
    b_end = np.asarray(B_ENDPOINT) * jb
    t = 1.0 + severity * (t_end - 1.0)
    b = severity * b_end
    return DegradationParams(
        tuple(t.tolist()), tuple(b.tolist()), float(severity), float(severity * SIGMA_ENDPOINT * js), seed
    )


def degrade(clean, params: DegradationParams) -> Image:
    px = np.asarray(clean, dtype=np.float64)
    t = np.asarray(params.transmission)
    b = np.asarray(params.backscatter)
    out = px * t + b * (1.0 - t)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed)
        out = out + rng.normal(0.0, params.noise_sigma, size=out.shape)
    return Image(np.clip(out, 0.0, 1.0))


# -- procedural clean sources -------------------------------------------------

def _gradient(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w] / np.array([max(h - 1, 1), max(w - 1, 1)])[:, None, None]
    c0, c1, c2 = rng.uniform(0.05, 0.95, size=(3, 3))
    theta = rng.uniform(0, 2 * np.pi)
    u = (np.cos(theta) * xx + np.sin(theta) * yy)
    u = (u - u.min()) / max(np.ptp(u), 1e-9)
    v = yy if rng.random() < 0.5 else xx
    return (c0 * (1 - u)[..., None] + c1 * u[..., None]) * (1 - 0.3 * v[..., None]) + 0.3 * c2 * v[..., None]


def _checker(rng, h, w):
    period = int(rng.integers(4, 17))
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((yy // period + xx // period) % 2)[..., None]
    a, b = rng.uniform(0.05, 0.95, size=(2, 3))
    return a * mask + b * (1 - mask)


def _blobs(rng, h, w):
    out = np.broadcast_to(rng.uniform(0.1, 0.6, size=3), (h, w, 3)).copy()
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(3, 8))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        s = rng.uniform(0.05, 0.25) * min(h, w)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))[..., None]
        col = rng.uniform(0.0, 1.0, size=3)
        out = out * (1 - g) + col * g
    return out


def procedural_image(index: int, resolution=(64, 64), seed: int = 0) -> Image:
    """Deterministic clean test scene: colored gradient, checkerboard and blobs."""
    h, w = resolution
    rng = np.random.default_rng([seed, index])
    base = _gradient(rng, h, w)
    kind = index % 3
    if kind == 0:
        img = 0.6 * base + 0.4 * _checker(rng, h, w)
    elif kind == 1:
        img = 0.4 * base + 0.6 * _blobs(rng, h, w)
    else:
        img = 0.5 * _blobs(rng, h, w) + 0.3 * _checker(rng, h, w) + 0.2 * base
    return Image(np.clip(img, 0.0, 1.0))


def tier_labels(tiers) -> list[str]:
    order = np.argsort(tiers, kind="stable")
    if len(tiers) == 1:
        names = ["degraded"]
    elif len(tiers) == 2:
        names = ["mild", "severe"]
    elif len(tiers) == 3:
        names = ["mild", "moderate", "severe"]
    else:
        names = [f"tier{i}" for i in range(len(tiers))]
    labels = [""] * len(tiers)
    for rank, i in enumerate(order):
        labels[i] = names[rank]
    return labels


def tier_of(name: str) -> str:
    return name.rsplit("__", 1)[-1]


def make_synthetic_dataset(clean_sources=None, n: int = 8, severity_tiers=(0.2, 0.8),
                           seed: int = 0, resolution=(64, 64), split="train") -> Dataset:
    """Build ``n`` pairs with tiers assigned round-robin; names end in ``__<tier>``.

    ``clean_sources`` may be a Dataset (targets are reused cyclically) or None
    for procedural scenes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tiers = [float(s) for s in severity_tiers]
    if not tiers or not all(0.0 <= s <= 1.0 for s in tiers):
        raise ValueError(f"severity tiers must lie in [0, 1], got {tiers}")
    labels = tier_labels(tiers)
    pairs = []
    meta = {"severity": {}, "params": {}}
    for i in range(n):
        ti = i % len(tiers)
        if clean_sources is None:
            clean = procedural_image(i, resolution, seed)
        else:
            clean = clean_sources[i % len(clean_sources)].target
        params = sample_params(tiers[ti], seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        name = f"{i:04d}__{labels[ti]}"
        pairs.append(SamplePair(degrade(clean, params), clean, name))
        meta["severity"][name] = tiers[ti]
        meta["params"][name] = params
    return Dataset(tuple(pairs), split, meta)
