import csv
import math

import numpy as np
import pytest
import torch

from evinterp.evaluation import (
    ABLATION_ORDER,
    VariantSpec,
    build_variant,
    center_index,
    evaluate,
    oracle_fn,
    repeat_left_fn,
)
from evinterp.events import Direction
from evinterp.interp import InterpolationModel, ModelConfig
from evinterp.losses import LossWeights
from evinterp.synthetic import (
    SceneObject,
    SceneSpec,
    Trajectory,
    build_clip,
    make_skip_dataset,
    random_scene,
)
from evinterp.trainer import (
    PAIRS,
    PRESETS,
    TensorCache,
    TrainConfig,
    TrainingDiverged,
    cycle_forward,
    cycle_step,
    direction_of,
    load_checkpoint,
    make_batch,
    resume_state,
    scaled_schedule,
    train,
)

TINY = ModelConfig(base=4, depth=3)


def dataset(seeds, n_frames=9, skip=7, **kw):
    out = []
    for s in seeds:
        clip = build_clip(random_scene(s, n_frames=n_frames, **kw))
        out += make_skip_dataset(clip.gt, clip.events, skip)
    return out


@pytest.fixture(scope="module")
def moving():
    return dataset(range(300, 304))


def views(samples):
    return [s.training_view() for s in samples]


# ------------------------------------------------------------------ schedule

def test_lr_schedule():
    paper = PRESETS["paper"]
    assert paper.lr_at(0) == 1e-4 and paper.lr_at(199) == 1e-4
    assert paper.lr_at(200) == pytest.approx(1e-5) and paper.lr_at(499) == pytest.approx(1e-6)
    desk = PRESETS["desk"]
    assert desk.decay_every == scaled_schedule(desk.epochs)
    assert desk.lr_decay == 0.1


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    cfg = TrainConfig(weights=LossWeights(smooth=0.2))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(KeyError):
        TrainConfig.from_dict({"momentum": 0.9})


# ------------------------------------------------------------------ cycle step

def test_stream_directions_per_role_pair():
    expected_reversed = {("t", "t0"), ("t1", "t"), ("t1", "t0")}
    for src, dst in PAIRS:
        d = direction_of(src, dst)
        assert (d is Direction.REVERSED) == ((src, dst) in expected_reversed)


def test_cycle_forward_routes_streams(moving):
    torch.manual_seed(0)
    model = InterpolationModel(TINY)
    calls = []
    orig = model.estimate_flow

    def spy(events, direction, frames=None):
        calls.append(direction)
        return orig(events, direction, frames)
    model.estimate_flow = spy
    b = make_batch(TensorCache(views(moving[:1])), [(0, 2, 0, 0)], 32)
    cycle_forward(model, b)
    # (t->t0 rev, t->t1 fwd), (t1->t rev, t1->t0 rev), (t0->t fwd, t0->t1 fwd)
    R, F = Direction.REVERSED, Direction.FORWARD
    assert calls == [R, F, R, R, F, F]


def test_cycle_step_static_scene_is_zero():
    spec = random_scene(5, n_frames=9, static=True)
    clip = build_clip(spec)
    samples = make_skip_dataset(clip.gt, clip.events, 7)
    assert len(samples[0].events_full) == 0
    torch.manual_seed(0)
    model = InterpolationModel(TINY)
    b = make_batch(TensorCache(views(samples)), [(0, 3, 0, 0)], None)
    losses, _ = cycle_step(model, b, LossWeights())
    # identity solution; only float32 rounding in the blend remains
    assert all(v < 1e-6 for v in losses.as_floats().values())
    assert losses.as_floats()["warp"] == 0.0 and losses.as_floats()["smooth"] == 0.0


def test_cycle_step_gradients_reach_both_estimators(moving):
    torch.manual_seed(0)
    model = InterpolationModel(TINY)
    with torch.no_grad():
        for m in (model.flow_net_forward, model.flow_net_backward, model.refine_net):
            m.head.weight.normal_(0, 0.01)
    b = make_batch(TensorCache(views(moving)), [(0, 1, 0, 0), (1, 5, 16, 16)], 32)
    losses, grads = cycle_step(model, b, LossWeights())
    assert float(losses.total.detach()) > 0
    for prefix in ("flow_net_forward", "flow_net_backward", "refine_net"):
        assert any(n.startswith(prefix) and g.abs().sum() > 0 for n, g in grads.items())
    parts = losses.as_floats()
    w = LossWeights()
    assert parts["total"] == pytest.approx(w.cycle * parts["cycle"] + w.warp * parts["warp"]
                                           + w.smooth * parts["smooth"] + w.percep * parts["percep"])


# ------------------------------------------------------------------ train loop

def test_train_requires_training_views(moving):
    with pytest.raises(TypeError):
        train(InterpolationModel(TINY), moving, TrainConfig(epochs=1))


def test_train_is_deterministic(moving, tmp_path):
    cfg = TrainConfig(epochs=2, decay_every=1, batch_size=2, lr=1e-3)
    runs = []
    for _ in range(2):
        torch.manual_seed(0)
        runs.append(train(InterpolationModel(TINY), views(moving), cfg).step_losses)
    assert runs[0] == runs[1]


def test_train_writes_log_and_checkpoints(moving, tmp_path):
    cfg = TrainConfig(epochs=3, decay_every=2, batch_size=2, lr=1e-3)
    torch.manual_seed(0)
    res = train(InterpolationModel(TINY), views(moving), cfg, out_dir=tmp_path,
                validate=lambda m: 12.5)
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert float(rows[2]["lr"]) == pytest.approx(1e-4) and float(rows[0]["val_psnr"]) == 12.5
    assert [p.name for p in res.checkpoints] == ["checkpoint_epoch0002.npz", "checkpoint_epoch0003.npz"]
    model, meta = load_checkpoint(res.checkpoints[-1])
    for (k, a), b in zip(model.state_dict().items(), res.model.state_dict().values()):
        assert torch.equal(a, b), k
    assert meta["epoch"] == 3


def test_resume_continues_the_trajectory(moving, tmp_path):
    cfg = TrainConfig(epochs=3, decay_every=10, batch_size=2, lr=1e-3, checkpoint_every=1)
    torch.manual_seed(0)
    full = train(InterpolationModel(TINY), views(moving), cfg, out_dir=tmp_path / "a")
    model, state = resume_state(tmp_path / "a" / "checkpoint_epoch0002.npz")
    rest = train(model, views(moving), cfg, out_dir=tmp_path / "b", resume=state)
    n = len(rest.step_losses)
    np.testing.assert_allclose(rest.step_losses, full.step_losses[-n:], rtol=1e-5)


def test_divergence_raises(moving, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=2, lr=1e-3, checkpoint_every=1)
    torch.manual_seed(0)
    model = InterpolationModel(TINY)
    with torch.no_grad():
        model.refine_net.head.bias.fill_(float("nan"))
    with pytest.raises(TrainingDiverged):
        train(model, views(moving), cfg, out_dir=tmp_path)


def test_training_reduces_loss_on_quadratic_set():
    data = views(dataset(range(400, 416), motion=("quadratic",)))
    cfg = TrainConfig(epochs=12, decay_every=100, batch_size=4, lr=1e-3, weights=LossWeights(smooth=0.05))
    torch.manual_seed(0)
    res = train(InterpolationModel(ModelConfig(base=8, depth=3, flow_scale=10.0)), data, cfg)
    quarter = len(res.step_losses) // 4
    first = np.mean(res.step_losses[:4])
    late = np.mean(res.step_losses[quarter:quarter + 8])
    assert late < first


# ------------------------------------------------------------------ evaluation

def test_center_index():
    assert center_index(7) == 3 and center_index(1) == 0 and center_index(4) == 1


def test_oracle_is_perfect(moving):
    rec = evaluate(oracle_fn(moving), moving)
    assert (rec.psnr, rec.ssim, rec.ie, rec.failures) == (100.0, 1.0, 0.0, 0)


def test_repeat_left_on_static_equals_oracle():
    clip = build_clip(random_scene(8, n_frames=9, static=True))
    ds = make_skip_dataset(clip.gt, clip.events, 7)
    rec = evaluate(repeat_left_fn, ds)
    assert (rec.psnr, rec.ssim, rec.ie) == (100.0, 1.0, 0.0)


def test_repeat_left_error_grows_with_time():
    spec = SceneSpec(width=64, height=64, duration=9 / 240, fps_gt=240, background=0.2,
                     objects=(SceneObject("disk", 10.0, 0.9, trajectory=Trajectory(
                         "linear", (24.0, 32.0), (8 / (8 / 240), 0.0))),))
    clip = build_clip(spec)
    rec = evaluate(repeat_left_fn, make_skip_dataset(clip.gt, clip.events, 7))
    ie = [f.ie for f in rec.frames]
    assert all(a < b for a, b in zip(ie, ie[1:]))


def test_center_equals_whole_for_skip_one():
    ds = dataset([9], skip=1)
    a = evaluate(repeat_left_fn, ds, aggregation="whole")
    b = evaluate(repeat_left_fn, ds, aggregation="center")
    assert (a.psnr, a.ssim, a.ie) == (b.psnr, b.ssim, b.ie)


def test_shape_mismatch_is_recorded(moving, tmp_path):
    rec = evaluate(lambda a, b, e, t: a[:-1], moving[:1])
    assert rec.failures == 7 and not any(f.ok for f in rec.frames)
    assert math.isnan(rec.psnr)
    rec.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 1 + 7 + 1 and "aggregate:whole" in lines[-1]


def test_evaluation_is_pure(moving):
    v = build_variant("full", TINY, seed=1)
    a = evaluate(v.model_fn, moving, aggregation="center")
    b = evaluate(v.model_fn, moving, aggregation="center")
    assert [f.psnr for f in a.frames] == [f.psnr for f in b.frames]


def test_variants_agree_on_static_scenes():
    clip = build_clip(random_scene(12, n_frames=9, static=True))
    ds = make_skip_dataset(clip.gt, clip.events, 7)
    results = {k: evaluate(build_variant(k, TINY, seed=0).model_fn, ds).psnr for k in ABLATION_ORDER}
    assert len(set(results.values())) == 1


def test_variant_spec_validation():
    with pytest.raises(ValueError):
        VariantSpec("cubic")
    assert ABLATION_ORDER[-1] == "full" and set(ABLATION_ORDER) == {
        "full", "linear_motion", "shared_flow", "frames_only"}
