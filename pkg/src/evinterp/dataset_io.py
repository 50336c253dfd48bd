"""On-disk skip-k datasets.

Layout::

    <root>/manifest.yaml            dataset-level fields and the sample list
    <root>/sample_0000/
        input_0.png  input_1.png    boundary frames (16-bit PNG)
        gt_01.png ... gt_07.png     held-out intermediates (16-bit PNG)
        events.evt                  events on [t0, t1], binary event format
        manifest.yaml               t0, t1, skip, seed and file -> time tables

Frames are quantized to 16 bits on write. ``load_dataset`` returns full
evaluation samples; ``load_training_view`` reads the same folders without
touching any ground-truth file, so it also works after they are deleted.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
import yaml

from .event_io import read_events, write_events
from .synthetic import InterpolationSample, TrainingSample

FORMAT = "evinterp-dataset/1"
SAMPLE_KEYS = {"t0", "t1", "skip", "seed", "inputs", "gt", "events", "channels", "width", "height"}
DATASET_KEYS = {"format", "skip", "seed", "samples", "width", "height", "channels", "scene"}


class DatasetError(ValueError):
    """Schema or layout problem; the message names the offending field."""


def _write_png(path: Path, frame: np.ndarray) -> None:
    q = np.round(np.clip(frame, 0.0, 1.0) * 65535).astype(np.uint16)
    if q.ndim == 3:
        q = q[..., ::-1]  # RGB -> BGR for OpenCV
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write {path}")


def _read_png(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FileNotFoundError(f"missing or unreadable frame {path}")
    if img.dtype != np.uint16:
        raise DatasetError(f"{path.name}: expected a 16-bit image, got {img.dtype}")
    if img.ndim == 3:
        img = img[..., ::-1]
    return img.astype(np.float64) / 65535.0


def quantize(frame: np.ndarray) -> np.ndarray:
    """The value a frame takes after a write/read round trip."""
    return np.round(np.clip(frame, 0.0, 1.0) * 65535) / 65535.0


def _dump(path: Path, data: dict) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=True)


def _load_yaml(path: Path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise DatasetError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise DatasetError(f"{path}: expected a mapping")
    return data


def write_sample(folder: Path, sample: InterpolationSample, skip: int, seed: int) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    _write_png(folder / "input_0.png", sample.I_t0)
    _write_png(folder / "input_1.png", sample.I_t1)
    gt = {}
    for k, (t, frame) in enumerate(sample.gt_intermediates, start=1):
        name = f"gt_{k:02d}.png"
        _write_png(folder / name, frame)
        gt[name] = float(t)
    write_events(folder / "events.evt", sample.events_full)
    h, w = sample.I_t0.shape[:2]
    _dump(folder / "manifest.yaml", {
        "t0": float(sample.t0), "t1": float(sample.t1), "skip": int(skip), "seed": int(seed),
        "inputs": {"input_0.png": float(sample.t0), "input_1.png": float(sample.t1)},
        "gt": gt, "events": "events.evt", "width": int(w), "height": int(h),
        "channels": 1 if sample.I_t0.ndim == 2 else int(sample.I_t0.shape[2]),
    })


def write_dataset(root, samples: Sequence[InterpolationSample], skip: int, seed: int,
                  scene: Optional[dict] = None) -> list[Path]:
    """Write samples under ``root``; returns every file written."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, s in enumerate(samples):
        name = f"sample_{i:04d}"
        write_sample(root / name, s, skip, seed)
        names.append(name)
    first = samples[0].I_t0
    _dump(root / "manifest.yaml", {
        "format": FORMAT, "skip": int(skip), "seed": int(seed), "samples": names,
        "width": int(first.shape[1]), "height": int(first.shape[0]),
        "channels": 1 if first.ndim == 2 else int(first.shape[2]), "scene": scene or {},
    })
    return sorted(p for p in root.rglob("*") if p.is_file())


def _check_keys(where: str, data: dict, required: set) -> None:
    missing = required - set(data)
    if missing:
        raise DatasetError(f"{where}: missing field {sorted(missing)[0]!r}")
    extra = set(data) - required
    if extra:
        raise DatasetError(f"{where}: unknown field {sorted(extra)[0]!r}")


def read_manifest(root) -> dict:
    root = Path(root)
    path = root / "manifest.yaml"
    if not path.exists():
        raise FileNotFoundError(f"{root} has no manifest.yaml")
    meta = _load_yaml(path)
    _check_keys(str(path), meta, DATASET_KEYS)
    if meta["format"] != FORMAT:
        raise DatasetError(f"{path}: field 'format' is {meta['format']!r}, expected {FORMAT!r}")
    if not isinstance(meta["skip"], int) or meta["skip"] < 1:
        raise DatasetError(f"{path}: field 'skip' must be a positive integer")
    return meta


def _sample_meta(folder: Path, skip: int) -> dict:
    meta = _load_yaml(folder / "manifest.yaml")
    _check_keys(str(folder / "manifest.yaml"), meta, SAMPLE_KEYS)
    if meta["skip"] != skip:
        raise DatasetError(f"{folder.name}: field 'skip' is {meta['skip']}, dataset says {skip}")
    if len(meta["gt"]) != skip:
        raise DatasetError(f"{folder.name}: field 'gt' lists {len(meta['gt'])} frames for skip {skip}")
    return meta


def _common(folder: Path, meta: dict):
    I0 = _read_png(folder / "input_0.png")
    I1 = _read_png(folder / "input_1.png")
    events = read_events(folder / meta["events"])
    if events.window != (meta["t0"], meta["t1"]):
        raise DatasetError(f"{folder.name}: events window {events.window} does not match t0/t1")
    return I0, I1, events


def load_dataset(root) -> list[InterpolationSample]:
    root = Path(root)
    meta = read_manifest(root)
    out = []
    for name in meta["samples"]:
        folder = root / name
        sm = _sample_meta(folder, meta["skip"])
        I0, I1, events = _common(folder, sm)
        gt = [(float(t), _read_png(folder / fname)) for fname, t in sorted(sm["gt"].items(), key=lambda kv: kv[1])]
        out.append(InterpolationSample(I0, I1, float(sm["t0"]), float(sm["t1"]), gt, events))
    return out


def load_training_view(root) -> list[TrainingSample]:
    """Training samples built from inputs, events and the manifest times only."""
    root = Path(root)
    meta = read_manifest(root)
    out = []
    for name in meta["samples"]:
        folder = root / name
        sm = _sample_meta(folder, meta["skip"])
        I0, I1, events = _common(folder, sm)
        times = tuple(sorted(float(t) for t in sm["gt"].values()))
        out.append(TrainingSample(I0, I1, float(sm["t0"]), float(sm["t1"]), times, events))
    return out


def content_hash(paths: Sequence[Path], root: Optional[Path] = None) -> str:
    """SHA-1 over (relative path, bytes) of each file, in sorted order."""
    h = hashlib.sha1()
    for p in sorted(Path(p) for p in paths):
        rel = p.relative_to(root) if root is not None else p
        h.update(str(rel).encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
