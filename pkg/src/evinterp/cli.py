"""Command-line entry points: simulate, train, eval, ablate.

Exit codes: 0 success, 2 config or schema error, 3 training divergence,
4 I/O error. Every run writes ``run_manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config, with_overrides
from .dataset_io import DatasetError, content_hash, load_dataset, load_training_view, read_manifest, write_dataset
from .evaluation import (
    ABLATION_ORDER,
    EvalRecord,
    build_variant,
    evaluate,
    model_fn,
    oracle_fn,
    query_for,
    repeat_left_fn,
    time_blend_fn,
    write_summary,
)
from .interp import VARIANTS, frame_to_torch
from .synthetic import build_clip, make_skip_dataset, random_scene
from .trainer import TrainingDiverged, load_checkpoint, resume_state, train

logger = logging.getLogger("evinterp")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
SENTINELS = ("oracle", "blend", "repeat")
MANIFEST_NAME = "run_manifest.json"


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    argv: list
    config_path: Optional[str]
    seed: int
    code_version: str
    inputs: list
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    content_hash: str = ""

    def finish(self, out_dir: Path, started: float) -> None:
        files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME)
        self.outputs = [str(p.relative_to(out_dir)) for p in files]
        self.content_hash = content_hash(files, out_dir)
        self.wall_clock_s = round(time.time() - started, 3)
        with open(out_dir / MANIFEST_NAME, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)


def code_version() -> str:
    src = Path(__file__).parent
    h = hashlib.sha1()
    for p in sorted(src.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise FileExistsError(f"{path} is not empty (use --force to replace it)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return with_overrides(cfg, seed=args.seed, skip=getattr(args, "skip", None),
                          preset=getattr(args, "preset", None),
                          aggregation=getattr(args, "aggregation", None),
                          variant=getattr(args, "variant", None))


def _check_skip(cfg: RunConfig, dataset_dir: Path, explicit: bool) -> None:
    meta = read_manifest(dataset_dir)
    if explicit and meta["skip"] != cfg.skip:
        raise DatasetError(f"field 'skip': dataset has {meta['skip']}, requested {cfg.skip}")


# ---------------------------------------------------------------- simulate

def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def simulate_samples(cfg: RunConfig):
    sc = cfg.scene
    n_frames = max(sc.n_frames, cfg.skip + 2)
    samples = []
    for i in range(sc.n_scenes):
        spec = random_scene(scene_seed(cfg.seed, i), sc.motion, width=sc.width, height=sc.height,
                            n_objects=sc.n_objects, fps_gt=sc.fps_gt, n_frames=n_frames,
                            window_frames=cfg.skip + 1, speed=sc.speed, channels=sc.channels,
                            static=sc.static)
        clip = build_clip(spec, cfg.simulator, sc.oversample)
        samples += make_skip_dataset(clip.gt, clip.events, cfg.skip)
    return samples


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    out = prepare_out(Path(args.out), args.force)
    samples = simulate_samples(cfg)
    write_dataset(out, samples, cfg.skip, cfg.seed, scene=cfg.to_dict()["scene"])
    logger.info("wrote %d samples (skip %d) to %s", len(samples), cfg.skip, out)
    RunManifest("simulate", sys.argv[1:], args.config, cfg.seed, code_version(), []).finish(out, started)
    return EXIT_OK


# ------------------------------------------------------------------- train

def _validator(val_dir: Optional[str]):
    if not val_dir:
        return None
    val = load_dataset(val_dir)
    return lambda m: evaluate(model_fn(m), val, aggregation="center").psnr


def cmd_train(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    dataset_dir = Path(args.dataset)
    _check_skip(cfg, dataset_dir, args.skip is not None)
    view = load_training_view(dataset_dir)
    channels = 1 if view[0].I_t0.ndim == 2 else view[0].I_t0.shape[2]
    if channels != cfg.model.channels:
        cfg = replace(cfg, model=replace(cfg.model, channels=channels))
    out = prepare_out(Path(args.out), args.force)
    dump_config(cfg, out / "config.yaml")
    resume = None
    if args.resume:
        model, resume = resume_state(args.resume)
    else:
        model = build_variant(cfg.model.variant, cfg.model, cfg.seed).model
    torch.set_num_threads(max(1, args.threads))
    try:
        result = train(model, view, cfg.train, out_dir=out, validate=_validator(args.val_dataset),
                       resume=resume, progress=True)
    except TrainingDiverged as exc:
        logger.error("%s; last good checkpoint: %s", exc, exc.checkpoint)
        RunManifest("train", sys.argv[1:], args.config, cfg.seed, code_version(),
                    [str(dataset_dir)]).finish(out, started)
        return EXIT_DIVERGED
    logger.info("final loss %.5f; %d checkpoints", result.log[-1]["total"], len(result.checkpoints))
    inputs = [str(dataset_dir)] + ([args.resume] if args.resume else [])
    RunManifest("train", sys.argv[1:], args.config, cfg.seed, code_version(), inputs).finish(out, started)
    return EXIT_OK


# -------------------------------------------------------------------- eval

def _model_for(name: str, cfg: RunConfig, dataset):
    """(label, model_fn, model or None) for a checkpoint path or sentinel."""
    if name == "oracle":
        return "oracle", oracle_fn(dataset), None
    if name == "blend":
        return "blend", time_blend_fn, None
    if name == "repeat":
        return "repeat", repeat_left_fn, None
    if name.startswith("untrained:"):
        variant = name.split(":", 1)[1]
        model = build_variant(variant, cfg.model, cfg.seed).model
        return f"{variant}(untrained)", model_fn(model), model
    model, _ = load_checkpoint(name)
    return model.variant, model_fn(model), model


def _center_flows(model, sample):
    s = sample
    t, _ = s.gt_intermediates[(len(s.gt_intermediates) - 1) // 2]
    with torch.no_grad():
        model.eval()
        res = model(frame_to_torch(s.I_t0), frame_to_torch(s.I_t1), s.t0, s.t1, t, query_for(s.events_full, t))
    return [f[0].double().numpy() for f in res.flows]


def cmd_eval(args) -> int:
    from .plots import write_report_plots

    started = time.time()
    cfg = resolve_config(args)
    dataset_dir = Path(args.dataset)
    _check_skip(cfg, dataset_dir, args.skip is not None)
    dataset = load_dataset(dataset_dir)
    names = list(args.checkpoint or [])
    if not names:
        names = [f"untrained:{cfg.eval.variant}"]
    out = prepare_out(Path(args.out), args.force)
    rows, records, strip, flows, flow_titles = [], [], {}, [], []
    s0 = dataset[0]
    strip["ground truth"] = [f for _, f in s0.gt_intermediates]
    for name in names:
        label, fn, model = _model_for(name, cfg, dataset)
        if args.variant and model is not None and model.variant != args.variant:
            raise ConfigError(f"checkpoint {name} holds variant {model.variant!r}, --variant asked for {args.variant!r}")
        rec = evaluate(fn, dataset, aggregation=cfg.eval.aggregation)
        records.append((label, rec))
        rows.append(rec.summary(variant=label))
        strip[label] = [np.asarray(fn(s0.I_t0, s0.I_t1, s0.events_full, t)) for t, _ in s0.gt_intermediates]
        if model is not None:
            flows += _center_flows(model, s0)
            flow_titles += [f"{label} t->t0", f"{label} t->t1"]
    _write_results(out / "results.csv", records)
    _write_table(out / "table.csv", rows)
    write_summary(out / "summary.json", rows)
    write_report_plots(out, out / "results.csv", strip, [f"t{k + 1}" for k in range(len(s0.gt_intermediates))],
                       flows or None, flow_titles)
    for r in rows:
        logger.info("%-22s psnr %.3f ssim %.4f ie %.3f", r["variant"], r["psnr"], r["ssim"], r["ie"])
    RunManifest("eval", sys.argv[1:], args.config, cfg.seed, code_version(),
                [str(dataset_dir), *names]).finish(out, started)
    return EXIT_OK


def _write_results(path, records: Sequence[tuple[str, EvalRecord]]) -> None:
    tmp = []
    for i, (label, rec) in enumerate(records):
        part = Path(str(path) + f".{i}")
        rec.write_csv(part, variant=label)
        lines = part.read_text().splitlines(keepends=True)
        tmp.extend(lines if i == 0 else lines[1:])
        part.unlink()
    Path(path).write_text("".join(tmp))


def _write_table(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("variant,psnr,ssim,ie\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['psnr']:.4f},{r['ssim']:.5f},{r['ie']:.4f}\n")


# ------------------------------------------------------------------ ablate

def cmd_ablate(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    dataset_dir = Path(args.dataset)
    _check_skip(cfg, dataset_dir, args.skip is not None)
    view = load_training_view(dataset_dir)
    eval_set = load_dataset(args.eval_dataset or dataset_dir)
    out = prepare_out(Path(args.out), args.force)
    dump_config(cfg, out / "config.yaml")
    torch.set_num_threads(max(1, args.threads))
    rows, records = [], []
    for variant in ABLATION_ORDER:
        vdir = out / variant
        vdir.mkdir()
        v = build_variant(variant, cfg.model, cfg.seed)
        try:
            train(v.model, view, cfg.train, out_dir=vdir, progress=True)
        except TrainingDiverged as exc:
            logger.error("%s diverged: %s", variant, exc)
            RunManifest("ablate", sys.argv[1:], args.config, cfg.seed, code_version(),
                        [str(dataset_dir)]).finish(out, started)
            return EXIT_DIVERGED
        rec = evaluate(v.model_fn, eval_set, aggregation=cfg.eval.aggregation)
        records.append((variant, rec))
        rows.append(rec.summary(variant=variant))
        logger.info("%-14s psnr %.3f ssim %.4f ie %.3f", variant, rec.psnr, rec.ssim, rec.ie)
    _write_results(out / "results.csv", records)
    _write_table(out / "ablation.csv", rows)
    write_summary(out / "summary.json", rows)
    RunManifest("ablate", sys.argv[1:], args.config, cfg.seed, code_version(),
                [str(dataset_dir)] + ([args.eval_dataset] if args.eval_dataset else [])).finish(out, started)
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evinterp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--force", action="store_true", help="replace a non-empty output directory")

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--skip", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="unsupervised cycle training")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--val-dataset", help="held-out dataset for per-epoch validation PSNR")
    sp.add_argument("--preset", choices=("paper", "desk"))
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--skip", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score checkpoints on a dataset")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", nargs="+",
                    help=f"checkpoint files or sentinels {SENTINELS}; default: untrained --variant")
    sp.add_argument("--skip", type=int)
    sp.add_argument("--aggregation", choices=("whole", "center"))
    sp.add_argument("--variant", choices=VARIANTS)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and score all four variants")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--eval-dataset", help="scoring dataset (default: the training dataset)")
    sp.add_argument("--preset", choices=("paper", "desk"))
    sp.add_argument("--skip", type=int)
    sp.add_argument("--aggregation", choices=("whole", "center"))
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
