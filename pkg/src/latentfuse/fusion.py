"""Parameter-free latent fusion by softmax-weighted nuclear norms.

Given the two latent feature maps of a co-registered pair, each map is
turned into a per-pixel contribution map by a channel-wise softmax; the
nuclear norm (sum of singular values) of every softmax channel scores how
much salient structure that channel carries. A reduction ``phi`` over the
per-channel scores (max, mean, sum, or identity for per-channel weights)
followed by normalization across the two modalities yields the fusion
weights, and the fused latent is their convex combination. No parameters
are learned or fitted at any point, so fusion runs at inference speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch


class DegenerateInputError(ValueError):
    """Fusion weights could not be normalized (non-finite inputs).

    For finite inputs this cannot trigger: softmax outputs are strictly
    positive, so every channel has a positive nuclear norm. The check only
    catches NaN/Inf corruption upstream.
    """


class NuclearNormError(RuntimeError):
    """SVD failed to converge for a channel."""


# phi reductions over the per-channel nuclear-norm vector (identity keeps
# the vector and normalizes channel-by-channel).
SFNN_KINDS: dict[str, Callable[[torch.Tensor], torch.Tensor] | None] = {
    "sfnn-max": torch.amax,
    "sfnn-mean": torch.mean,
    "sfnn-sum": torch.sum,
    "sfnn-identity": None,
}


@dataclass
class FusionWeights:
    """Per-modality weights; scalars for reduced kinds, per-channel vectors
    for the identity kind. They are nonnegative and sum to one."""

    w_a: torch.Tensor
    w_b: torch.Tensor

    def swapped(self) -> "FusionWeights":
        return FusionWeights(self.w_b, self.w_a)


def channel_softmax(f: torch.Tensor) -> torch.Tensor:
    """Softmax across the channel axis at every spatial location.

    Output values are strictly positive and sum to 1 over channels per
    pixel; computation is stabilized by per-pixel max subtraction.
    """
    if f.dim() != 4:
        raise ValueError(f"expected B x C x H x W, got shape {tuple(f.shape)}")
    return torch.softmax(f, dim=1)


def nuclear_norm(matrix: torch.Tensor) -> torch.Tensor:
    """Sum of singular values of a 2D matrix; zero iff the matrix is zero."""
    if matrix.dim() != 2:
        raise ValueError(f"expected a 2D matrix, got shape {tuple(matrix.shape)}")
    try:
        return torch.linalg.svdvals(matrix).sum()
    except Exception as exc:  # pragma: no cover - LAPACK non-convergence
        raise NuclearNormError(f"SVD failed: {exc}") from exc


def channel_nuclear_norms(f: torch.Tensor) -> torch.Tensor:
    """Nuclear norm of every channel of a 1 x C x H x W map."""
    if f.dim() != 4 or f.shape[0] != 1:
        raise ValueError(
            f"fusion operates on a single pair (batch 1), got shape {tuple(f.shape)}"
        )
    try:
        return torch.linalg.svdvals(f[0]).sum(dim=-1)
    except Exception:
        # fall back channel-by-channel so the failing index can be reported
        norms = []
        for idx in range(f.shape[1]):
            try:
                norms.append(nuclear_norm(f[0, idx]))
            except NuclearNormError as exc:
                raise NuclearNormError(
                    f"SVD failed to converge on channel {idx}"
                ) from exc
        return torch.stack(norms)


def reduce_norms(norms_a: torch.Tensor, norms_b: torch.Tensor, kind: str) -> FusionWeights:
    """Apply the phi reduction and normalize across the two modalities."""
    if kind not in SFNN_KINDS:
        raise KeyError(
            f"unknown fusion strategy {kind!r}; available: {available_strategies()}"
        )
    phi = SFNN_KINDS[kind]
    if phi is None:
        denom = norms_a + norms_b
        if not torch.all(torch.isfinite(denom)) or torch.any(denom <= 0):
            raise DegenerateInputError("per-channel nuclear norms are degenerate")
        return FusionWeights(norms_a / denom, norms_b / denom)
    r_a, r_b = phi(norms_a), phi(norms_b)
    denom = r_a + r_b
    if not torch.isfinite(denom) or denom <= 0:
        raise DegenerateInputError("reduced nuclear norms are degenerate")
    return FusionWeights(r_a / denom, r_b / denom)


def sfnn_weights(f_a: torch.Tensor, f_b: torch.Tensor, kind: str = "sfnn-max") -> FusionWeights:
    """Fusion weights for a latent pair (batch 1, identical shapes)."""
    if f_a.shape != f_b.shape:
        raise ValueError(f"shape mismatch: {tuple(f_a.shape)} vs {tuple(f_b.shape)}")
    norms_a = channel_nuclear_norms(channel_softmax(f_a))
    norms_b = channel_nuclear_norms(channel_softmax(f_b))
    return reduce_norms(norms_a, norms_b, kind)


def fuse(f_a: torch.Tensor, f_b: torch.Tensor, kind: str = "sfnn-max") -> torch.Tensor:
    """Convex combination of the two latents under the strategy's weights."""
    weights = sfnn_weights(f_a, f_b, kind)
    w_a, w_b = weights.w_a, weights.w_b
    if w_a.dim() == 1:  # per-channel weights (identity kind)
        w_a = w_a.view(1, -1, 1, 1)
        w_b = w_b.view(1, -1, 1, 1)
    return w_a * f_a + w_b * f_b


def _make_sfnn(kind: str) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    def strategy(f_a: torch.Tensor, f_b: torch.Tensor) -> torch.Tensor:
        return fuse(f_a, f_b, kind)

    strategy.__name__ = kind.replace("-", "_")
    return strategy


# Name -> callable(f_a, f_b) -> fused latent. External strategies (e.g.
# energy-ratio or L1-norm rules from other frameworks) can be plugged in
# through register_strategy without touching this module.
_REGISTRY: dict[str, Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = {
    kind: _make_sfnn(kind) for kind in SFNN_KINDS
}


def register_strategy(name: str, fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]) -> None:
    _REGISTRY[name] = fn


def available_strategies() -> list[str]:
    return sorted(_REGISTRY)


def get_strategy(name: str) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown fusion strategy {name!r}; available: {available_strategies()}"
        ) from None
