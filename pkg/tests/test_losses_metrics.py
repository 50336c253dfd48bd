import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from evinterp.losses import (
    LossBreakdown,
    LossWeights,
    cycle_loss,
    percep_loss,
    smooth_loss,
    warp_loss,
)
from evinterp.metrics import PSNR_CAP, interpolation_error, psnr, ssim


# ------------------------------------------------------------------ losses

def test_cycle_loss_zero_for_exact_reconstructions():
    a, b = torch.rand(2, 1, 8, 8), torch.rand(2, 1, 8, 8)
    assert float(cycle_loss(a, a, b, b)) == 0.0


def test_cycle_loss_uniform_offset():
    a, b = torch.rand(1, 1, 8, 8, dtype=torch.float64), torch.rand(1, 1, 8, 8, dtype=torch.float64)
    assert float(cycle_loss(a + 0.1, a, b, b)) == pytest.approx(0.1, abs=1e-12)


def test_total_is_weighted_sum():
    w = LossWeights(1.0, 0.5, 1.0, 0.01)
    parts = [torch.tensor(v, dtype=torch.float64) for v in (0.3, 0.7, 0.11, 2.0)]
    br = LossBreakdown.combine(w, *parts)
    assert float(br.total) == 1.0 * 0.3 + 0.5 * 0.7 + 1.0 * 0.11 + 0.01 * 2.0


def test_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(cycle=0.0)
    with pytest.raises(ValueError):
        LossWeights(smooth=-1.0)


def test_warp_loss_zero_flow_static():
    img = torch.rand(1, 1, 8, 8)
    zero = torch.zeros(1, 2, 8, 8)
    assert float(warp_loss(img, (img, img), (zero, zero))) == 0.0


def test_warp_loss_exact_shift_on_ramp_interior():
    ramp = torch.arange(10.0).repeat(6, 1)[None, None]
    shifted = ramp + 1.0  # ramp content one pixel to the left
    flow = torch.zeros(1, 2, 6, 10)
    flow[:, 0] = 1.0
    # warp(ramp, +1 px) reads ramp[x + 1] = shifted except at the clamped right edge
    assert float(warp_loss(shifted[..., :, :-1].contiguous(), (ramp[..., :, :-1].contiguous(),),
                           (flow[..., :, :-1].contiguous(),), border=1)) == 0.0


def test_warp_loss_positive_for_random_flow():
    torch.manual_seed(0)
    img = torch.rand(1, 1, 12, 12)
    assert float(warp_loss(img, (img,), (torch.randn(1, 2, 12, 12) * 3,))) > 0


def test_smooth_loss_constant_flow_is_zero():
    f = torch.full((1, 2, 6, 7), 3.5)
    assert float(smooth_loss([f, f, f, f])) == 0.0


def test_smooth_loss_single_step():
    # unit step along one row of an HxW field: one nonzero x-difference
    h, w = 5, 7
    f = torch.zeros(1, 2, h, w, dtype=torch.float64)
    f[0, 0, 2, 4:] = 1.0
    dx = 1.0 / (2 * h * (w - 1))  # one unit among 2*h*(w-1) differences across both channels
    dy = (w - 4) * 2 / (2 * (h - 1) * w)  # the row edge contributes above and below
    assert float(smooth_loss([f])) == pytest.approx(0.5 * (dx + dy), abs=1e-15)


def test_smooth_loss_monotone_in_roughness():
    rng = np.random.default_rng(1)
    noise = torch.from_numpy(rng.normal(size=(1, 2, 8, 8)))
    values = [float(smooth_loss([a * noise])) for a in (0.0, 0.5, 1.0, 2.0)]
    assert values == sorted(values) and values[0] == 0.0


def test_percep_properties():
    torch.manual_seed(2)
    a, b = torch.rand(1, 1, 16, 16, dtype=torch.float64), torch.rand(1, 1, 16, 16, dtype=torch.float64)
    assert float(percep_loss(a, a)) == 0.0
    assert float(percep_loss(a, b)) == pytest.approx(float(percep_loss(b, a)), rel=1e-12)
    path = [float(percep_loss(a + s * (b - a), b)) for s in np.linspace(0, 1, 6)]
    assert all(x > y for x, y in zip(path, path[1:])) and path[-1] == 0.0


def test_percep_extractor_is_frozen():
    a, b = torch.rand(1, 1, 16, 16, requires_grad=True), torch.rand(1, 1, 16, 16)
    percep_loss(a, b).backward()
    from evinterp.losses import _features
    assert all(p.grad is None for p in _features(1, 1234).parameters())
    assert a.grad is not None


# ------------------------------------------------------------------ metrics

def test_psnr_values():
    a = np.random.default_rng(0).uniform(0.2, 0.8, (16, 16))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a + 10 / 255, a) == pytest.approx(10 * math.log10(255 ** 2 / 100), abs=1e-9)
    assert psnr(a + 10 / 255, a) == pytest.approx(28.13, abs=0.01)
    b = a + np.random.default_rng(1).normal(0, 0.05, a.shape)
    assert psnr(a, b) == psnr(b, a)


def test_ssim_values():
    a = np.random.default_rng(2).random((24, 24))
    assert ssim(a, a) == pytest.approx(1.0)
    c1 = (0.01 * 255) ** 2
    expected = (2 * 100 * 110 + c1) / (100 ** 2 + 110 ** 2 + c1)
    got = ssim(np.full((16, 16), 100 / 255), np.full((16, 16), 110 / 255))
    assert got == pytest.approx(expected, abs=1e-9)
    assert got == pytest.approx(0.9955, abs=1e-3)


def test_ie_values():
    a = np.random.default_rng(3).uniform(0.2, 0.7, (8, 8))
    assert interpolation_error(a, a) == 0.0
    assert interpolation_error(a + 10 / 255, a) == pytest.approx(10.0, abs=1e-9)
    assert interpolation_error(a + 20 / 255, a) == pytest.approx(2 * interpolation_error(a + 10 / 255, a))


def test_rgb_metrics_average_channels():
    rng = np.random.default_rng(4)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    per = np.mean([ssim(a[..., c], b[..., c]) for c in range(3)])
    assert ssim(a, b) == pytest.approx(per)


def test_metrics_reject_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.2))
def test_noise_degrades_metrics(seed, sigma):
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.2, 0.8, (24, 24))
    pred = target + rng.normal(0, 0.01, target.shape)
    noisy = pred + rng.normal(0, sigma, target.shape)
    assert psnr(noisy, target) < psnr(pred, target)
    assert ssim(noisy, target) < ssim(pred, target)
    assert interpolation_error(noisy, target) > interpolation_error(pred, target)
    assert ssim(noisy, target) <= 1.0
