"""Static figures: frame strips, colour-wheel flow images and PSNR-vs-time
curves. Everything renders through the non-interactive Agg backend with
fixed metadata so the same inputs give the same bytes."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import hsv_to_rgb  # noqa: E402

_META = {"Software": None}


def flow_to_rgb(flow: np.ndarray, max_norm: float | None = None) -> np.ndarray:
    """(2, H, W) flow -> (H, W, 3) image: hue is direction, saturation is magnitude."""
    u, v = flow[0], flow[1]
    mag = np.hypot(u, v)
    scale = max_norm if max_norm else (mag.max() if mag.max() > 0 else 1.0)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0
    sat = np.clip(mag / scale, 0.0, 1.0)
    return hsv_to_rgb(np.stack([hue, sat, np.ones_like(hue)], axis=-1))


def _save(fig, path) -> None:
    fig.savefig(path, metadata=_META, dpi=100)
    plt.close(fig)


def _show(ax, img):
    ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])


def frame_strip(path, rows: dict[str, Sequence[np.ndarray]], titles: Sequence[str] = ()) -> None:
    """One row of frames per label (e.g. 'prediction', 'ground truth')."""
    n = max(len(r) for r in rows.values())
    fig, axes = plt.subplots(len(rows), n, figsize=(1.4 * n, 1.5 * len(rows)), squeeze=False)
    for i, (label, frames) in enumerate(rows.items()):
        for j in range(n):
            ax = axes[i, j]
            if j < len(frames):
                _show(ax, np.clip(frames[j], 0, 1))
            else:
                ax.axis("off")
            if i == 0 and j < len(titles):
                ax.set_title(titles[j], fontsize=7)
        axes[i, 0].set_ylabel(label, fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def flow_panel(path, flows: Sequence[np.ndarray], titles: Sequence[str] = ()) -> None:
    """Flow fields side by side on a common magnitude scale."""
    top = max(float(np.hypot(f[0], f[1]).max()) for f in flows) or 1.0
    fig, axes = plt.subplots(1, len(flows), figsize=(1.6 * len(flows), 1.8), squeeze=False)
    for j, f in enumerate(flows):
        _show(axes[0, j], flow_to_rgb(f, top))
        if j < len(titles):
            axes[0, j].set_title(titles[j], fontsize=7)
    fig.suptitle(f"max |flow| = {top:.2f} px", fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def read_results(path) -> dict[str, list[tuple[int, float]]]:
    """Per-variant (intermediate index, psnr) pairs from a results CSV."""
    out = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["sample"].startswith("aggregate") or row["ok"] != "1":
                continue
            out[row["variant"]].append((int(row["index"]), float(row["psnr"])))
    return dict(out)


def psnr_vs_t(path, results_csv) -> None:
    """Mean PSNR at each intermediate position, one curve per variant."""
    data = read_results(results_csv)
    fig, ax = plt.subplots(figsize=(4, 3))
    for variant in sorted(data):
        by_idx = defaultdict(list)
        for idx, value in data[variant]:
            by_idx[idx].append(value)
        xs = sorted(by_idx)
        ax.plot([x + 1 for x in xs], [float(np.mean(by_idx[x])) for x in xs], marker="o",
                label=variant or "model")
    ax.set_xlabel("intermediate position")
    ax.set_ylabel("PSNR (dB)")
    if any(data.values()):
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def write_report_plots(out_dir, results_csv, strip_rows=None, strip_titles=(), flows=None,
                       flow_titles=()) -> list[Path]:
    out_dir = Path(out_dir)
    paths = [out_dir / "psnr_vs_t.png"]
    psnr_vs_t(paths[0], results_csv)
    if strip_rows:
        paths.append(out_dir / "frames.png")
        frame_strip(paths[-1], strip_rows, strip_titles)
    if flows:
        paths.append(out_dir / "flows.png")
        flow_panel(paths[-1], flows, flow_titles)
    return paths
