"""Convolutional building blocks: a small U-Net and a fixed random feature
extractor used by the perceptual loss."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.LeakyReLU(0.1),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.LeakyReLU(0.1),
    )


class UNet(nn.Module):
    """Encoder-decoder with skip connections.

    ``depth`` scales, widths base, 2*base, 4*base, 4*base, ... The output
    layer starts at zero so a fresh network predicts all zeros.
    """

    def __init__(self, in_channels: int, out_channels: int, base: int = 32, depth: int = 4):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        widths = [base * 2 ** min(i, 2) for i in range(depth)]
        self.widths = widths
        self.encoders = nn.ModuleList()
        cin = in_channels
        for wd in widths:
            self.encoders.append(_block(cin, wd))
            cin = wd
        self.decoders = nn.ModuleList()
        for i in range(depth - 1, 0, -1):
            self.decoders.append(_block(widths[i] + widths[i - 1], widths[i - 1]))
        self.head = nn.Conv2d(widths[0], out_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def min_size(self) -> int:
        return 2 ** (len(self.widths) - 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % self.min_size or w % self.min_size:
            raise ValueError(f"input {h}x{w} must be divisible by {self.min_size}")
        skips = []
        for i, enc in enumerate(self.encoders):
            if i:
                x = F.avg_pool2d(x, 2)
            x = enc(x)
            skips.append(x)
        for dec, skip in zip(self.decoders, reversed(skips[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = dec(torch.cat([x, skip], dim=1))
        return self.head(x)


class RandomFeatures(nn.Module):
    """Three conv layers with frozen, seeded random weights."""

    def __init__(self, in_channels: int = 1, width: int = 16, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.layers = nn.ModuleList([
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.Conv2d(width, width, 3, padding=1, stride=2),
            nn.Conv2d(width, width, 3, padding=1, stride=2),
        ])
        for conv in self.layers:
            fan_in = conv.weight[0].numel()
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            conv.weight.requires_grad_(False)
            conv.bias.requires_grad_(False)

    def forward(self, x):
        for conv in self.layers:
            x = F.relu(conv(x))
        return x
