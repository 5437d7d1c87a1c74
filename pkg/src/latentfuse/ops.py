"""Small tensor ops shared by the network blocks and the loss functions."""

from __future__ import annotations

import torch
import torch.nn.functional as F

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0],
                        [-2.0, 0.0, 2.0],
                        [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.t().contiguous()


def sobel_gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel Sobel responses (gx, gy) of a B x C x H x W tensor.

    Replicate padding keeps the output size equal to the input and makes the
    response of a constant image exactly zero at the borders too.
    """
    if x.dim() != 4:
        raise ValueError(f"expected a 4D tensor, got shape {tuple(x.shape)}")
    c = x.shape[1]
    kx = SOBEL_X.to(device=x.device, dtype=x.dtype).expand(c, 1, 3, 3)
    ky = SOBEL_Y.to(device=x.device, dtype=x.dtype).expand(c, 1, 3, 3)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(padded, kx, groups=c)
    gy = F.conv2d(padded, ky, groups=c)
    return gx, gy


def sobel_magnitude(x: torch.Tensor) -> torch.Tensor:
    """L1 gradient magnitude |gx| + |gy| (finite gradients on flat regions)."""
    gx, gy = sobel_gradients(x)
    return gx.abs() + gy.abs()
