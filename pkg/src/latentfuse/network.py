"""Encoder, edge enhancer and decoder of the fusion autoencoder.

The encoder expands the receptive field with parallel {1,3,5}-dilated
convolutions on shallow features, then applies a residual-attention stage
and a pyramid-attention stage (stacks of 3x3 convolutions standing in for
3x3 / 5x5 / 7x7 receptive fields). A separate edge-enhancer branch (two
residual 3x3 convolutions plus a projected Sobel magnitude) is added
element-wise to the latent. The decoder is deliberately shallow: three
convolutions with leaky ReLU.

All blocks preserve spatial size; the latent of an H x W image is
``latent_channels`` x H x W.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, EncoderConfig, config_hash
from .ops import sobel_magnitude

CHECKPOINT_FORMAT_VERSION = 1


def _conv3(in_ch: int, out_ch: int, dilation: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=dilation, dilation=dilation)


class DilatedBranches(nn.Module):
    """Parallel dilated 3x3 convolutions, concatenated channel-wise."""

    def __init__(self, in_ch: int, branch_ch: int, rates, slope: float):
        super().__init__()
        self.branches = nn.ModuleList(_conv3(in_ch, branch_ch, r) for r in rates)
        self.act = nn.LeakyReLU(slope)

    @property
    def out_channels(self) -> int:
        return sum(b.out_channels for b in self.branches)

    def forward(self, x):
        return torch.cat([self.act(b(x)) for b in self.branches], dim=1)


class ResidualAttentionBlock(nn.Module):
    """Trunk features gated by a downsample-upsample sigmoid mask, plus skip.

    out = trunk(x) * sigmoid(mask(x)) + x
    """

    def __init__(self, channels: int, downsample_factor: int, trunk_convs: int, slope: float):
        super().__init__()
        self.factor = downsample_factor
        trunk = []
        for i in range(trunk_convs):
            trunk.append(_conv3(channels, channels))
            if i < trunk_convs - 1:
                trunk.append(nn.LeakyReLU(slope))
        self.trunk = nn.Sequential(*trunk)
        self.mask_conv = _conv3(channels, channels)

    def attention_mask(self, x):
        """Sigmoid gate in (0, 1): avg-pool down, convolve, upsample back."""
        h, w = x.shape[-2:]
        if h % self.factor or w % self.factor:
            raise ValueError(
                f"spatial size {h}x{w} not divisible by the attention "
                f"downsample factor {self.factor}"
            )
        m = F.avg_pool2d(x, self.factor)
        m = self.mask_conv(m)
        m = F.interpolate(m, size=(h, w), mode="bilinear", align_corners=False)
        return torch.sigmoid(m)

    def forward(self, x):
        return self.trunk(x) * self.attention_mask(x) + x


class PyramidAttentionBlock(nn.Module):
    """Stacks of 1, 2, 3 consecutive 3x3 convolutions merged to the latent width.

    A stack of n 3x3 convolutions has a (2n+1)x(2n+1) receptive field, so the
    default depths [1, 2, 3] cover 3x3, 5x5 and 7x7.
    """

    def __init__(self, in_ch: int, stack_ch: int, depths, out_ch: int, slope: float):
        super().__init__()
        stacks = []
        for depth in depths:
            layers = []
            ch = in_ch
            for i in range(depth):
                layers.append(_conv3(ch, stack_ch))
                ch = stack_ch
                if i < depth - 1:
                    layers.append(nn.LeakyReLU(slope))
            stacks.append(nn.Sequential(*layers))
        self.stacks = nn.ModuleList(stacks)
        self.act = nn.LeakyReLU(slope)
        self.merge = nn.Conv2d(stack_ch * len(depths), out_ch, kernel_size=1)

    def forward(self, x):
        merged = torch.cat([self.act(s(x)) for s in self.stacks], dim=1)
        return self.merge(merged)


class EdgeEnhancer(nn.Module):
    """Edge branch: residual 3x3 convolutions plus projected Sobel magnitude.

    Operates on the shallow stem features; the output is projected to the
    latent width so it can be added element-wise after the attention stages.
    """

    def __init__(self, channels: int, out_ch: int, slope: float):
        super().__init__()
        self.conv1 = _conv3(channels, channels)
        self.conv2 = _conv3(channels, channels)
        self.act = nn.LeakyReLU(slope)
        self.grad_proj = nn.Conv2d(channels, channels, kernel_size=1)
        self.out_proj = nn.Conv2d(channels, out_ch, kernel_size=1)

    def forward(self, x):
        y = x + self.act(self.conv1(x))
        y = y + self.act(self.conv2(y))
        y = y + self.grad_proj(sobel_magnitude(x))
        return self.out_proj(y)


class Encoder(nn.Module):
    """Stem -> dilated branches -> residual attention -> pyramid attention."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = _conv3(1, cfg.shallow_channels)
        self.act = nn.LeakyReLU(cfg.leaky_slope)
        self.dilated = DilatedBranches(
            cfg.shallow_channels, cfg.branch_channels, cfg.dilation_rates, cfg.leaky_slope
        )
        width = self.dilated.out_channels
        self.attention = nn.Sequential(*[
            ResidualAttentionBlock(
                width, cfg.attention_downsample_factor,
                cfg.attention_trunk_convs, cfg.leaky_slope,
            )
            for _ in range(cfg.attention_stages)
        ])
        self.pyramid = PyramidAttentionBlock(
            width, cfg.pyramid_channels, cfg.pyramid_depths,
            cfg.latent_channels, cfg.leaky_slope,
        )

    def forward_shallow(self, x):
        return self.act(self.stem(x))

    def forward(self, x):
        s = self.forward_shallow(x)
        d = self.dilated(s)
        r = self.attention(d)
        return self.pyramid(r)


class Decoder(nn.Module):
    """Three 3x3 convolutions; leaky ReLU between, final layer linear.

    The final layer stays linear to avoid saturation under the L2 pixel
    loss; outputs are clamped to [0, 1] at inference time only.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c1, c2 = cfg.decoder_channels
        self.conv1 = _conv3(cfg.latent_channels, c1)
        self.conv2 = _conv3(c1, c2)
        self.conv3 = _conv3(c2, 1)
        self.act = nn.LeakyReLU(cfg.leaky_slope)

    def init_output_layer(self):
        """Start at mid-gray so early training fixes structure, not scale."""
        nn.init.zeros_(self.conv3.weight)
        nn.init.constant_(self.conv3.bias, 0.5)

    @property
    def conv_layer_count(self) -> int:
        return sum(1 for m in self.modules() if isinstance(m, nn.Conv2d))

    def forward(self, z):
        if z.shape[1] != self.conv1.in_channels:
            raise ValueError(
                f"latent has {z.shape[1]} channels, decoder expects "
                f"{self.conv1.in_channels}"
            )
        x = self.act(self.conv1(z))
        x = self.act(self.conv2(x))
        x = self.conv3(x)
        if not self.training:
            x = x.clamp(0.0, 1.0)
        return x


class FusionAutoencoder(nn.Module):
    """Deep encoder + optional edge enhancer + lightweight decoder."""

    def __init__(self, cfg: EncoderConfig, use_edge_enhancer: bool = True):
        super().__init__()
        self.cfg = cfg
        self.use_edge_enhancer = use_edge_enhancer
        self.encoder = Encoder(cfg)
        self.edge = (
            EdgeEnhancer(cfg.shallow_channels, cfg.latent_channels, cfg.leaky_slope)
            if use_edge_enhancer else None
        )
        self.decoder = Decoder(cfg)
        self.apply(_init_module)
        self.decoder.init_output_layer()

    def validate_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError(f"expected B x 1 x H x W input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        factor = self.cfg.attention_downsample_factor
        if min(h, w) < 16:
            raise ValueError(f"input {h}x{w} is below the 16-pixel minimum side")
        if h % factor or w % factor:
            raise ValueError(
                f"input {h}x{w} not divisible by attention downsample factor {factor}"
            )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self.validate_input(x)
        s = self.encoder.forward_shallow(x)
        d = self.encoder.dilated(s)
        r = self.encoder.attention(d)
        z = self.encoder.pyramid(r)
        if self.edge is not None:
            z = z + self.edge(s)
        return z

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def forward(self, x):
        return self.decode(self.encode(x))


def _init_module(m: nn.Module) -> None:
    if isinstance(m, nn.Conv2d):
        nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def zero_all_biases(model: nn.Module) -> None:
    for m in model.modules():
        if isinstance(m, nn.Conv2d) and m.bias is not None:
            nn.init.zeros_(m.bias)


def param_count(model: nn.Module) -> int:
    """Exact number of scalar trainable parameters (fixed kernels excluded)."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_autoencoder(cfg: EncoderConfig | None = None, use_edge_enhancer: bool = True) -> FusionAutoencoder:
    return FusionAutoencoder(cfg or EncoderConfig(), use_edge_enhancer)


def save_checkpoint(path: str | Path, model: FusionAutoencoder, *,
                    optimizer: torch.optim.Optimizer | None = None,
                    epoch: int = 0, extra: dict | None = None) -> None:
    """Write a checkpoint archive: config snapshot, weights, optimizer state."""
    from dataclasses import asdict

    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder_config": asdict(model.cfg),
        "config_hash": config_hash(model.cfg),
        "use_edge_enhancer": model.use_edge_enhancer,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, expected_config: EncoderConfig | None = None,
                    map_location: str = "cpu") -> tuple[FusionAutoencoder, dict]:
    """Rebuild a model from a checkpoint; validates the config hash.

    Returns the model (eval mode) and the raw payload for resume logic.
    """
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format in {path}")
    if expected_config is not None and config_hash(expected_config) != payload["config_hash"]:
        raise ConfigError(
            "checkpoint config does not match the runtime config "
            f"(stored hash {payload['config_hash'][:12]}...)"
        )
    cfg = EncoderConfig(**payload["encoder_config"])
    model = FusionAutoencoder(cfg, payload["use_edge_enhancer"])
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload
