"""Training losses. All L1 terms are mean-reduced over pixels and batch."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import torch

from .networks import RandomFeatures
from .warp import warp


@dataclass(frozen=True)
class LossWeights:
    cycle: float = 1.0
    warp: float = 0.5
    smooth: float = 0.05
    percep: float = 0.01

    def __post_init__(self):
        if min(self.cycle, self.warp, self.smooth, self.percep) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.cycle > 0:
            raise ValueError("the cycle weight must be positive")


@dataclass
class LossBreakdown:
    cycle: torch.Tensor
    warp: torch.Tensor
    smooth: torch.Tensor
    percep: torch.Tensor
    total: torch.Tensor

    @classmethod
    def combine(cls, weights: LossWeights, cycle, warp, smooth, percep) -> "LossBreakdown":
        total = (weights.cycle * cycle + weights.warp * warp
                 + weights.smooth * smooth + weights.percep * percep)
        return cls(cycle, warp, smooth, percep, total)

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("cycle", "warp", "smooth", "percep", "total")}


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().mean()


def cycle_loss(recon_t0, I_t0, recon_t1, I_t1) -> torch.Tensor:
    return l1(recon_t0, I_t0) + l1(recon_t1, I_t1)


def warp_loss(target: torch.Tensor, sources: Sequence[torch.Tensor],
              flows: Sequence[torch.Tensor], border: int = 0) -> torch.Tensor:
    """Sum over sources of mean |warp(source, flow) - target|, optionally
    ignoring a ``border`` pixel margin."""
    total = target.new_zeros(())
    for src, flow in zip(sources, flows, strict=True):
        diff = (warp(src, flow) - target).abs()
        if border:
            diff = diff[..., border:-border, border:-border]
        total = total + diff.mean()
    return total


def smooth_loss(flows: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over flow fields of the mean absolute first difference, averaged
    over the two spatial directions."""
    total = None
    for f in flows:
        dx = (f[..., :, 1:] - f[..., :, :-1]).abs().mean()
        dy = (f[..., 1:, :] - f[..., :-1, :]).abs().mean()
        term = 0.5 * (dx + dy)
        total = term if total is None else total + term
    return total


@lru_cache(maxsize=8)
def _features(channels: int, seed: int) -> RandomFeatures:
    return RandomFeatures(channels, seed=seed).eval()


def percep_loss(pred: torch.Tensor, target: torch.Tensor, seed: int = 1234) -> torch.Tensor:
    """Mean squared distance between frozen random conv features."""
    net = _features(pred.shape[1], seed).to(pred.dtype)
    return (net(pred) - net(target)).pow(2).mean()
