"""Image quality metrics. Inputs are float images scaled to ``data_range``
(1.0 for [0, 1] frames); SSIM and IE are evaluated on the 8-bit scale."""

from __future__ import annotations

import math

import numpy as np
from skimage.metrics import structural_similarity

PSNR_CAP = 100.0


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target, data_range: float = 1.0) -> float:
    pred, target = _pair(pred, target)
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(data_range ** 2 / mse))


def ssim(pred, target, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5, K1=0.01, K2=0.03) on the
    8-bit scale; colour images are scored per channel and averaged."""
    pred, target = _pair(pred, target)
    scale = 255.0 / data_range
    kw = dict(data_range=255.0, gaussian_weights=True, sigma=1.5,
              use_sample_covariance=False, K1=0.01, K2=0.03)
    if pred.ndim == 3:
        return float(np.mean([structural_similarity(pred[..., c] * scale, target[..., c] * scale, **kw)
                              for c in range(pred.shape[-1])]))
    return float(structural_similarity(pred * scale, target * scale, **kw))


def interpolation_error(pred, target, data_range: float = 1.0) -> float:
    """Root-mean-square difference on the 8-bit scale."""
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean(((pred - target) * (255.0 / data_range)) ** 2)))
