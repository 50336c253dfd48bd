"""Skip-k evaluation harness and the ablation variants."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .events import EventStream, directed, tensorize
from .interp import VARIANTS, EventInput, InterpolationModel, ModelConfig, Query, frame_to_numpy, frame_to_torch
from .metrics import interpolation_error, psnr, ssim
from .synthetic import InterpolationSample

ModelFn = Callable[[np.ndarray, np.ndarray, EventStream, float], np.ndarray]
AGGREGATIONS = ("whole", "center")


def center_index(skip: int) -> int:
    """0-based index of the scored frame for 'center' aggregation
    (position ceil(skip / 2), counted from 1)."""
    return math.ceil(skip / 2) - 1


@dataclass
class FrameScore:
    sample: int
    index: int
    t: float
    psnr: float
    ssim: float
    ie: float
    ok: bool = True
    error: str = ""


@dataclass
class EvalRecord:
    skip: int
    aggregation: str
    frames: list[FrameScore] = field(default_factory=list)
    per_sample: list[dict] = field(default_factory=list)
    psnr: float = float("nan")
    ssim: float = float("nan")
    ie: float = float("nan")
    failures: int = 0

    def summary(self, **extra) -> dict:
        return {**extra, "skip": self.skip, "aggregation": self.aggregation, "psnr": self.psnr,
                "ssim": self.ssim, "ie": self.ie, "failures": self.failures}

    def write_csv(self, path, variant: str = "") -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["variant", "sample", "index", "t", "psnr", "ssim", "ie", "ok", "error"])
            for f in self.frames:
                wr.writerow([variant, f.sample, f.index, repr(f.t), repr(f.psnr), repr(f.ssim),
                             repr(f.ie), int(f.ok), f.error])
            wr.writerow([variant, f"aggregate:{self.aggregation}", "", "", repr(self.psnr),
                         repr(self.ssim), repr(self.ie), self.failures, ""])


def evaluate(model_fn: ModelFn, dataset: Sequence[InterpolationSample], skip: Optional[int] = None,
             aggregation: str = "whole") -> EvalRecord:
    """Score every held-out intermediate; aggregate per sample (all positions
    for 'whole', the centre position for 'center'), then average samples."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    if not dataset:
        raise ValueError("empty evaluation set")
    skip = skip or dataset[0].skip
    rec = EvalRecord(skip, aggregation)
    for si, sample in enumerate(dataset):
        if sample.skip != skip:
            raise ValueError(f"sample {si} has skip {sample.skip}, expected {skip}")
        if any(f is None for _, f in sample.gt_intermediates):
            raise ValueError(f"sample {si} lacks ground-truth frames")
        scores = []
        for k, (t, gt) in enumerate(sample.gt_intermediates):
            pred = np.asarray(model_fn(sample.I_t0, sample.I_t1, sample.events_full, t))
            if pred.shape != gt.shape:
                score = FrameScore(si, k, t, math.nan, math.nan, math.nan, False,
                                   f"output shape {pred.shape} != {gt.shape}")
                rec.failures += 1
            else:
                score = FrameScore(si, k, t, psnr(pred, gt), ssim(pred, gt), interpolation_error(pred, gt))
            rec.frames.append(score)
            scores.append(score)
        chosen = scores if aggregation == "whole" else [scores[center_index(skip)]]
        good = [s for s in chosen if s.ok]
        rec.per_sample.append({m: float(np.mean([getattr(s, m) for s in good])) if good else math.nan
                               for m in ("psnr", "ssim", "ie")})
    for m in ("psnr", "ssim", "ie"):
        vals = [r[m] for r in rec.per_sample if not math.isnan(r[m])]
        setattr(rec, m, float(np.mean(vals)) if vals else math.nan)
    return rec


# ------------------------------------------------------------- model_fns

def oracle_fn(dataset: Sequence[InterpolationSample]) -> ModelFn:
    """Looks up the stored ground truth; a sanity-check upper bound."""
    table = {}
    for s in dataset:
        for t, f in s.gt_intermediates:
            table[(id(s.events_full), t)] = f

    def fn(I_t0, I_t1, events, t):
        return table[(id(events), t)]
    return fn


def repeat_left_fn(I_t0, I_t1, events, t):
    return I_t0


def time_blend_fn(I_t0, I_t1, events, t):
    t0, t1 = events.window
    w = (t - t0) / (t1 - t0)
    return (1 - w) * np.asarray(I_t0) + w * np.asarray(I_t1)


def query_for(events: EventStream, t: float, dtype=torch.float32) -> Query:
    t0, t1 = events.window
    mk = lambda a, b: EventInput.from_tensors([tensorize(directed(events, a, b))], dtype)  # noqa: E731
    return Query(mk(t, t0), mk(t, t1), mk(t0, t1), mk(t1, t0))


def model_fn(model: InterpolationModel) -> ModelFn:
    dtype = next(model.parameters()).dtype

    def fn(I_t0, I_t1, events, t):
        t0, t1 = events.window
        with torch.no_grad():
            model.eval()
            out = model(frame_to_torch(I_t0, dtype), frame_to_torch(I_t1, dtype), t0, t1, t,
                        query_for(events, t, dtype))
        return np.clip(frame_to_numpy(out.frame), 0.0, 1.0)
    return fn


# --------------------------------------------------------------- variants

@dataclass(frozen=True)
class VariantSpec:
    kind: str = "full"

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown variant {self.kind!r}; expected one of {VARIANTS}")


# Table order used for ablation reports: the ablations first, the full model last.
ABLATION_ORDER = ("linear_motion", "shared_flow", "frames_only", "full")


@dataclass
class Variant:
    spec: VariantSpec
    model: InterpolationModel

    @property
    def model_fn(self) -> ModelFn:
        return model_fn(self.model)

    def train(self, dataset, cfg, **kw):
        from .trainer import train
        return train(self.model, dataset, cfg, **kw)


def build_variant(spec: VariantSpec | str, base: ModelConfig = ModelConfig(), seed: int = 0) -> Variant:
    """Fresh model of the requested variant; parameters seeded by ``seed``."""
    spec = VariantSpec(spec) if isinstance(spec, str) else spec
    torch.manual_seed(seed)
    return Variant(spec, InterpolationModel(replace(base, variant=spec.kind)))


def write_summary(path, rows: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        json.dump(list(rows), fh, indent=2, sort_keys=True)
