"""Image value types, paired dataset loading and preprocessing."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    """An H x W x 3 float32 raster, clamped onto [0, 1] and read-only."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected an HxWx3 raster, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        px = np.clip(px, 0.0, 1.0)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.pixels
        return self.pixels.astype(dtype)


@dataclass(frozen=True)
class SamplePair:
    input: Image
    target: Image
    name: str

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ValueError(
                f"pair {self.name!r}: input {self.input.shape} != target {self.target.shape}"
            )


@dataclass(frozen=True)
class Dataset:
    pairs: tuple[SamplePair, ...]
    split: str = "train"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "pairs", tuple(self.pairs))
        names = [p.name for p in self.pairs]
        if len(set(names)) != len(names):
            raise ValueError("pair names must be unique within a dataset")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.pairs]

    def inputs(self) -> np.ndarray:
        return np.stack([p.input.pixels for p in self.pairs])

    def targets(self) -> np.ndarray:
        return np.stack([p.target.pixels for p in self.pairs])

    def subset(self, indices, split=None) -> "Dataset":
        return Dataset(
            tuple(self.pairs[i] for i in indices), split or self.split, dict(self.meta)
        )


def to_working_range(raw, bit_depth: int = 8) -> Image:
    """Map an integer raster onto [0, 1] by dividing by ``2**bit_depth - 1``."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    peak = 2**bit_depth - 1
    if raw.size and (raw.min() < 0 or raw.max() > peak):
        raise ValueError(
            f"raw values must lie in [0, {peak}] for bit depth {bit_depth}; "
            f"got [{raw.min()}, {raw.max()}]"
        )
    return Image(raw.astype(np.float64) / peak)


def resize(image: Image, resolution) -> Image:
    """Bilinear resize to ``resolution = (height, width)``."""
    h, w = resolution
    if (image.height, image.width) == (h, w):
        return image
    chans = [
        np.asarray(
            PILImage.fromarray(image.pixels[..., c], mode="F").resize(
                (w, h), PILImage.Resampling.BILINEAR
            )
        )
        for c in range(3)
    ]
    return Image(np.stack(chans, axis=2))


def read_image(path, resolution=None) -> Image:
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                raw = np.asarray(im, dtype=np.int64)
                depth = 16
            else:
                raw = np.asarray(im.convert("RGB"))
                depth = 8
    except (OSError, ValueError) as exc:
        raise DatasetError(f"unreadable raster: {path.name} ({exc})") from exc
    img = to_working_range(raw, depth)
    return resize(img, resolution) if resolution is not None else img


def write_image(image, path) -> None:
    px = np.asarray(image, dtype=np.float64)
    raw = np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(raw, mode="RGB").save(path)


def _index_dir(d: Path) -> dict[str, Path]:
    out = {}
    for name in sorted(os.listdir(d)):
        p = d / name
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            out[p.stem] = p
    return out


def load_dataset(root, resolution=(256, 256), split="train", workers: int = 4) -> Dataset:
    """Load ``root/input`` and ``root/gt`` rasters matched by file stem.

    Pairs are sorted by name and resized to ``resolution`` (height, width).
    """
    root = Path(root)
    in_dir, gt_dir = root / "input", root / "gt"
    for d in (in_dir, gt_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory: {d}")
    inputs, targets = _index_dir(in_dir), _index_dir(gt_dir)
    orphans = sorted(
        [f"input/{inputs[s].name}" for s in inputs.keys() - targets.keys()]
        + [f"gt/{targets[s].name}" for s in targets.keys() - inputs.keys()]
    )
    if orphans:
        raise DatasetError("files without a counterpart: " + ", ".join(orphans))
    names = sorted(inputs)
    if not names:
        raise DatasetError(f"empty dataset: {root}")

    def load(name):
        return SamplePair(
            read_image(inputs[name], resolution),
            read_image(targets[name], resolution),
            name,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pairs = list(pool.map(load, names))
    return Dataset(tuple(pairs), split, {"root": str(root)})


def save_dataset(dataset: Dataset, root) -> None:
    root = Path(root)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for pair in dataset:
        write_image(pair.input, root / "input" / f"{pair.name}.png")
        write_image(pair.target, root / "gt" / f"{pair.name}.png")
