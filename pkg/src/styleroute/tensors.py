"""Conversions between channel-last numpy rasters and NCHW tensors."""

import numpy as np
import torch


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """HxWx3, NxHxWx3 (numpy or Image) or a sequence of those -> N x 3 x H x W."""
    if isinstance(images, torch.Tensor):
        x = images
        if x.dim() == 3:
            x = x.unsqueeze(0)
        return x.to(dtype)
    if isinstance(images, (list, tuple)):
        arr = np.stack([np.asarray(im) for im in images])
    else:
        arr = np.asarray(images)
        if arr.ndim == 3:
            arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected channel-last RGB rasters, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_numpy(x: torch.Tensor) -> np.ndarray:
    """N x C x H x W tensor -> N x H x W x C float32 array (batch dim dropped for N=1 input of dim 3)."""
    x = x.detach().cpu()
    if x.dim() == 3:
        return x.permute(1, 2, 0).numpy().astype(np.float32)
    return x.permute(0, 2, 3, 1).numpy().astype(np.float32)
