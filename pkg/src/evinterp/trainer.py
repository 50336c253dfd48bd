"""Unsupervised training by temporal cycle consistency.

For a sample (I_t0, I_t1, events on [t0, t1]) and an intermediate time t:

    I_t   = f(I_t0, I_t1, E[t->t0], E[t->t1])
    I_t1' = f(I_t,  I_t0, E[t1->t], E[t1->t0])     both streams reversed
    I_t0' = f(I_t,  I_t1, E[t0->t], E[t0->t1])     both streams forward

and the loss compares I_t0', I_t1' with the real inputs. Ground-truth
intermediate frames never enter this module.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .events import Direction, directed, tensorize
from .interp import EventInput, InterpolationModel, ModelConfig, Query, SynthesisResult
from .losses import LossBreakdown, LossWeights, cycle_loss, percep_loss, smooth_loss, warp_loss
from .synthetic import TrainingSample

logger = logging.getLogger(__name__)

ROLES = ("t0", "t", "t1")
PAIRS = [(a, b) for a in ROLES for b in ROLES if a != b]
_ORDER = {r: i for i, r in enumerate(ROLES)}

LOG_FIELDS = ("epoch", "cycle", "warp", "smooth", "percep", "total", "val_psnr", "lr")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 32
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lr_decay: float = 0.1
    decay_every: int = 40
    epochs: int = 100
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: Optional[int] = None  # default: at each lr decay boundary

    def __post_init__(self):
        if self.epochs <= 0 or self.decay_every <= 0:
            raise ValueError("epochs and decay_every must be positive")
        if self.patch_size <= 0 or self.batch_size <= 0:
            raise ValueError("patch_size and batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (0-based)."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise KeyError(f"unknown training field(s): {sorted(unknown)}")
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


PRESETS = {
    "paper": TrainConfig(patch_size=256, batch_size=28, lr=1e-4, lr_decay=0.1,
                         decay_every=200, epochs=500),
    # 100 epochs with the paper's 200/500 decay ratio; the initial rate is
    # raised tenfold so the shortened schedule still converges
    "desk": TrainConfig(patch_size=32, batch_size=4, lr=1e-3, lr_decay=0.1,
                        decay_every=40, epochs=100),
}


def scaled_schedule(epochs: int, reference: TrainConfig = PRESETS["paper"]) -> int:
    """Decay interval keeping the reference ratio decay_every / epochs."""
    return max(1, round(epochs * reference.decay_every / reference.epochs))


# ------------------------------------------------------------------ batches

def direction_of(src: str, dst: str) -> Direction:
    return Direction.FORWARD if _ORDER[src] < _ORDER[dst] else Direction.REVERSED


def sample_tensors(sample: TrainingSample, t: float) -> dict:
    """Event tensors of all six directed streams among t0, t and t1."""
    times = {"t0": sample.t0, "t": t, "t1": sample.t1}
    out = {}
    for src, dst in PAIRS:
        stream = directed(sample.events_full, times[src], times[dst])
        out[src, dst] = torch.from_numpy(tensorize(stream).data.astype(np.float32))
    return out


def _frame(arr: np.ndarray) -> torch.Tensor:
    arr = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


class TensorCache:
    """Lazily built per-sample, per-time event tensors."""

    def __init__(self, samples: Sequence[TrainingSample]):
        self.samples = list(samples)
        self._store: dict = {}

    def get(self, i: int, k: int) -> dict:
        key = (i, k)
        if key not in self._store:
            self._store[key] = sample_tensors(self.samples[i], self.samples[i].times[k])
        return self._store[key]


@dataclass
class Batch:
    I_t0: torch.Tensor
    I_t1: torch.Tensor
    t0: torch.Tensor
    t: torch.Tensor
    t1: torch.Tensor
    events: dict  # (src, dst) role pair -> (B, 4, H, W)

    def to(self, dtype) -> "Batch":
        return Batch(self.I_t0.to(dtype), self.I_t1.to(dtype), self.t0.to(dtype), self.t.to(dtype),
                     self.t1.to(dtype), {k: v.to(dtype) for k, v in self.events.items()})

    def ev(self, src: str, dst: str) -> EventInput:
        return EventInput(self.events[src, dst], direction_of(src, dst))


def make_batch(cache: TensorCache, picks: Sequence[tuple[int, int, int, int]],
               patch: Optional[int]) -> Batch:
    """picks: (sample index, time index, crop row, crop col)."""
    f0, f1, t0, t, t1 = [], [], [], [], []
    evs = {pair: [] for pair in PAIRS}
    for i, k, r, c in picks:
        s = cache.samples[i]
        crop = (np.s_[:, r:r + patch, c:c + patch] if patch else np.s_[:, :, :])
        f0.append(_frame(s.I_t0)[crop])
        f1.append(_frame(s.I_t1)[crop])
        t0.append(s.t0)
        t.append(s.times[k])
        t1.append(s.t1)
        tensors = cache.get(i, k)
        for pair in PAIRS:
            evs[pair].append(tensors[pair][crop])
    as64 = lambda v: torch.tensor(v, dtype=torch.float64)  # noqa: E731
    return Batch(torch.stack(f0), torch.stack(f1), as64(t0), as64(t), as64(t1),
                 {k: torch.stack(v) for k, v in evs.items()})


# --------------------------------------------------------------- cycle step

@dataclass
class CycleOutputs:
    intermediate: SynthesisResult
    recon_t1: SynthesisResult
    recon_t0: SynthesisResult


def cycle_forward(model: InterpolationModel, b: Batch) -> CycleOutputs:
    mid = model(b.I_t0, b.I_t1, b.t0, b.t1, b.t,
                Query(b.ev("t", "t0"), b.ev("t", "t1"), b.ev("t0", "t1"), b.ev("t1", "t0")))
    I_t = mid.frame
    rec1 = model(I_t, b.I_t0, b.t, b.t0, b.t1,
                 Query(b.ev("t1", "t"), b.ev("t1", "t0"), b.ev("t", "t0"), b.ev("t0", "t")))
    rec0 = model(I_t, b.I_t1, b.t, b.t1, b.t0,
                 Query(b.ev("t0", "t"), b.ev("t0", "t1"), b.ev("t", "t1"), b.ev("t1", "t")))
    return CycleOutputs(mid, rec1, rec0)


def cycle_losses(out: CycleOutputs, b: Batch, weights: LossWeights) -> LossBreakdown:
    """Losses on the two reconstructions. Auxiliary terms use the refined
    flows of both reconstruction passes."""
    I_t = out.intermediate.frame
    rec0, rec1 = out.recon_t0, out.recon_t1
    cyc = cycle_loss(rec0.frame, b.I_t0, rec1.frame, b.I_t1)
    wrp = (warp_loss(b.I_t1, (I_t, b.I_t0), rec1.flows)
           + warp_loss(b.I_t0, (I_t, b.I_t1), rec0.flows))
    smo = smooth_loss([*rec1.flows, *rec0.flows])
    per = percep_loss(rec0.frame, b.I_t0) + percep_loss(rec1.frame, b.I_t1)
    return LossBreakdown.combine(weights, cyc, wrp, smo, per)


def cycle_step(model: InterpolationModel, b: Batch, weights: LossWeights,
               backward: bool = True) -> tuple[LossBreakdown, dict]:
    """One forward/backward pass; returns the losses and parameter gradients."""
    model.zero_grad(set_to_none=True)
    losses = cycle_losses(cycle_forward(model, b), b, weights)
    grads = {}
    if backward:
        losses.total.backward()
        grads = {n: p.grad for n, p in model.named_parameters() if p.grad is not None}
    return losses, grads


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: InterpolationModel, optimizer=None, manifest: Optional[dict] = None):
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if optimizer is not None:
        for idx, state in optimizer.state_dict()["state"].items():
            for k, v in state.items():
                arrays[f"adam/{idx}/{k}"] = v.detach().cpu().numpy() if torch.is_tensor(v) else np.asarray(v)
    meta = dict(manifest or {})
    meta["model"] = model.config.to_dict()
    arrays["manifest"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def load_checkpoint(path, optimizer=None) -> tuple[InterpolationModel, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["manifest"]).decode())
        model = InterpolationModel(ModelConfig(**meta["model"]))
        state = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
        model.load_state_dict(state)
        if optimizer is not None:
            optimizer = optimizer(model) if callable(optimizer) else optimizer
            sd = optimizer.state_dict()
            for k in z.files:
                if k.startswith("adam/"):
                    _, idx, name = k.split("/")
                    sd["state"].setdefault(int(idx), {})[name] = torch.from_numpy(z[k].copy())
            optimizer.load_state_dict(sd)
            meta["optimizer"] = optimizer
    return model, meta


# ------------------------------------------------------------------- train

@dataclass
class TrainResult:
    model: InterpolationModel
    log: list[dict]
    checkpoints: list[Path]
    step_losses: list[float]


def _crop_offsets(rng, h, w, patch):
    if patch is None or patch >= min(h, w):
        return 0, 0
    return int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))


def train(model: InterpolationModel, dataset: Sequence[TrainingSample], cfg: TrainConfig,
          out_dir=None, validate: Optional[Callable[[InterpolationModel], float]] = None,
          resume: Optional[dict] = None, progress: bool = False) -> TrainResult:
    """Adam over random patch crops and random intermediate times.

    ``validate`` maps the model to a PSNR on held-out ground truth; it runs
    under no_grad after each epoch and never feeds the optimizer. With
    ``out_dir`` a metrics CSV and checkpoints are written there.
    """
    if not dataset:
        raise ValueError("empty training set")
    if any(not isinstance(s, TrainingSample) for s in dataset):
        raise TypeError("train() takes TrainingSample views (no ground truth)")
    h, w = dataset[0].I_t0.shape[:2]
    patch = cfg.patch_size if cfg.patch_size < min(h, w) else None
    if patch is not None and patch % model.min_size:
        raise ValueError(f"patch size {patch} must be divisible by {model.min_size}")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    start_epoch = 0
    if resume is not None:
        opt.load_state_dict(resume["optimizer"].state_dict())
        rng.bit_generator.state = resume["rng_state"]
        start_epoch = resume["epoch"]
    cache = TensorCache(dataset)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.csv" if out_dir else None
    if log_path and start_epoch == 0:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_FIELDS)
    ckpt_every = cfg.checkpoint_every or cfg.decay_every
    log, ckpts, step_losses = [], [], []
    last_good = None

    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(dataset))
        sums = dict.fromkeys(("cycle", "warp", "smooth", "percep", "total"), 0.0)
        n_steps = 0
        t_epoch = time.time()
        for pos in range(0, len(order), cfg.batch_size):
            picks = []
            for i in order[pos:pos + cfg.batch_size]:
                k = int(rng.integers(len(dataset[i].times)))
                r, c = _crop_offsets(rng, h, w, patch)
                picks.append((int(i), k, r, c))
            batch = make_batch(cache, picks, patch)
            model.train()
            losses, _ = cycle_step(model, batch, cfg.weights)
            total = float(losses.total.detach())
            if not math.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", last_good)
            opt.step()
            step_losses.append(total)
            for k, v in losses.as_floats().items():
                sums[k] += v
            n_steps += 1
        row = {k: v / n_steps for k, v in sums.items()}
        row["epoch"] = epoch + 1
        row["lr"] = lr
        model.eval()
        if validate is not None:
            with torch.no_grad():
                row["val_psnr"] = float(validate(model))
        else:
            row["val_psnr"] = float("nan")
        log.append(row)
        if progress:
            logger.info("epoch %d/%d total %.5f val_psnr %.2f (%.1fs)", epoch + 1, cfg.epochs,
                        row["total"], row["val_psnr"], time.time() - t_epoch)
        if log_path:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerow([repr(row[k]) if isinstance(row[k], float) else row[k]
                                         for k in LOG_FIELDS])
        if out_dir and ((epoch + 1) % ckpt_every == 0 or epoch + 1 == cfg.epochs):
            path = out_dir / f"checkpoint_epoch{epoch + 1:04d}.npz"
            save_checkpoint(path, model, opt, {
                "epoch": epoch + 1, "seed": cfg.seed, "train": _jsonable(cfg.to_dict()),
                "rng_state": rng.bit_generator.state, "step": len(step_losses)})
            ckpts.append(path)
            last_good = path
    return TrainResult(model, log, ckpts, step_losses)


def resume_state(path) -> tuple[InterpolationModel, dict]:
    """Model plus the optimizer/rng/epoch bundle ``train(resume=...)`` expects."""
    def make_opt(model):
        return torch.optim.Adam(model.parameters())
    model, meta = load_checkpoint(path, optimizer=make_opt)
    return model, meta


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: asdict(o) if hasattr(o, "__dataclass_fields__") else str(o)))
