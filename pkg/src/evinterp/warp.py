"""Backward warping with bilinear sampling and clamp-to-border addressing."""

from __future__ import annotations

import torch


def warp(image: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Sample ``image`` at ``x + flow(x)``.

    image: (B, C, H, W); flow: (B, 2, H, W) in pixels, channel 0 horizontal.
    Sample positions are clamped to the image, so out-of-range lookups repeat
    the border. Differentiable in both arguments; zero flow is an exact
    identity.
    """
    if image.shape[0] != flow.shape[0] or image.shape[-2:] != flow.shape[-2:]:
        raise ValueError(f"image {tuple(image.shape)} and flow {tuple(flow.shape)} do not match")
    b, c, h, w = image.shape
    ys = torch.arange(h, dtype=flow.dtype, device=flow.device).view(1, h, 1)
    xs = torch.arange(w, dtype=flow.dtype, device=flow.device).view(1, 1, w)
    px = (xs + flow[:, 0]).clamp(0, w - 1)
    py = (ys + flow[:, 1]).clamp(0, h - 1)
    # non-finite flow gives a non-finite output instead of a bad index
    x0 = px.detach().nan_to_num(0.0).floor().clamp(0, max(w - 2, 0))
    y0 = py.detach().nan_to_num(0.0).floor().clamp(0, max(h - 2, 0))
    fx = (px - x0).unsqueeze(1)
    fy = (py - y0).unsqueeze(1)
    x0l, y0l = x0.long(), y0.long()
    x1l = (x0l + 1).clamp(max=w - 1)
    y1l = (y0l + 1).clamp(max=h - 1)

    flat = image.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).view(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).view(b, c, h, w)

    top = gather(y0l, x0l) * (1 - fx) + gather(y0l, x1l) * fx
    bottom = gather(y1l, x0l) * (1 - fx) + gather(y1l, x1l) * fx
    return top * (1 - fy) + bottom * fy
