"""Reconstruction objective: pixel L2, Sobel-gradient L2, perceptual distance.

The three components are combined as ``pixel + lambda_grad * grad +
lambda_perp * perp`` with both balancing weights defaulting to 0.5. All
components are means over batch and pixels so the weights stay
resolution-independent.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ConfigError, LossConfig
from .ops import sobel_gradients

# Capture points inside the torchvision VGG16 feature stack, named by
# convolutional stage; index = position of the ReLU in vgg16().features.
VGG16_LAYERS = {
    "relu1_2": 3,
    "relu2_2": 8,
    "relu3_3": 15,
    "relu4_3": 22,
    "relu5_3": 29,
}

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

# set to False after the first failed download so later constructions skip
# the network attempt
_PRETRAINED_AVAILABLE: bool | None = None


class PerceptualExtractor(nn.Module):
    """Frozen VGG16 feature stack exposing intermediate activations.

    Tries to load ImageNet weights; when they are unavailable (offline
    environments) a fixed-seed randomly initialized copy of the same
    architecture is used instead, and ``pretrained`` is False so runs can
    flag the substitution in their manifest.
    """

    def __init__(self, layers: list[str] | None = None, seed: int = 2024):
        super().__init__()
        import torchvision

        self.layers = list(layers or ["relu4_3"])
        unknown = [l for l in self.layers if l not in VGG16_LAYERS]
        if unknown:
            raise ConfigError(
                f"unknown perceptual layer(s) {unknown}; "
                f"available: {sorted(VGG16_LAYERS)}"
            )
        global _PRETRAINED_AVAILABLE
        vgg = None
        if _PRETRAINED_AVAILABLE is not False:
            try:
                weights = torchvision.models.VGG16_Weights.IMAGENET1K_V1
                vgg = torchvision.models.vgg16(weights=weights)
                _PRETRAINED_AVAILABLE = True
            except Exception:
                _PRETRAINED_AVAILABLE = False
        self.pretrained = vgg is not None
        if vgg is None:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                vgg = torchvision.models.vgg16(weights=None)
        cutoff = max(VGG16_LAYERS[l] for l in self.layers) + 1
        self.features = vgg.features[:cutoff]
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)

    def train(self, mode: bool = True):
        # the extractor stays frozen in eval mode even inside a training loop
        return super().train(False)

    def extract(self, x: torch.Tensor, layers: list[str] | None = None) -> dict[str, torch.Tensor]:
        """Feature maps at the requested layers for a B x 1 x H x W batch."""
        layers = list(layers or self.layers)
        unknown = [l for l in layers if l not in VGG16_LAYERS]
        if unknown:
            raise ConfigError(
                f"unknown perceptual layer(s) {unknown}; "
                f"available: {sorted(VGG16_LAYERS)}"
            )
        wanted = {VGG16_LAYERS[l]: l for l in layers}
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        x = (x - self.input_mean) / self.input_std
        out: dict[str, torch.Tensor] = {}
        for idx, module in enumerate(self.features):
            x = module(x)
            if idx in wanted:
                out[wanted[idx]] = x
            if len(out) == len(wanted):
                break
        return out


def _check_shapes(x: torch.Tensor, x_hat: torch.Tensor) -> None:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")


def pixel_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel difference over batch and pixels."""
    _check_shapes(x, x_hat)
    return ((x - x_hat) ** 2).mean()


def gradient_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Squared difference of Sobel gradient fields, summed over the x- and
    y-direction components and mean-reduced over batch and pixels."""
    _check_shapes(x, x_hat)
    gx, gy = sobel_gradients(x)
    hx, hy = sobel_gradients(x_hat)
    return ((gx - hx) ** 2).mean() + ((gy - hy) ** 2).mean()


def perceptual_loss(extractor: PerceptualExtractor, x: torch.Tensor,
                    x_hat: torch.Tensor, layers: list[str] | None = None) -> torch.Tensor:
    """Squared feature distance at the selected extractor layers.

    Per layer: sum over channels and space normalized by the feature-map
    size, then mean over batch; layers are summed.
    """
    _check_shapes(x, x_hat)
    feats = extractor.extract(x, layers)
    feats_hat = extractor.extract(x_hat, layers)
    total = x.new_zeros(())
    for name, f in feats.items():
        diff = f - feats_hat[name]
        b, _, h, w = diff.shape
        total = total + (diff ** 2).sum() / (b * h * w)
    return total


def total_loss(cfg: LossConfig, pixel, grad, perp):
    """Weighted sum of the three components with the configured balancers."""
    return pixel + cfg.lambda_grad * grad + cfg.lambda_perp * perp


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor,
                        extractor: PerceptualExtractor, cfg: LossConfig,
                        use_grad: bool = True) -> tuple[torch.Tensor, dict[str, float]]:
    """Total objective plus a per-component breakdown for logging.

    With ``use_grad`` False the gradient term is omitted entirely (the
    ablation baseline trains on pixel + perceptual only).
    """
    pix = pixel_loss(x, x_hat)
    grad = gradient_loss(x, x_hat) if use_grad else x.new_zeros(())
    perp = perceptual_loss(extractor, x, x_hat, cfg.perceptual_layers)
    total = total_loss(cfg, pix, grad, perp)
    parts = {
        "pixel": float(pix.detach()),
        "grad": float(grad.detach()),
        "perp": float(perp.detach()),
        "total": float(total.detach()),
    }
    return total, parts
