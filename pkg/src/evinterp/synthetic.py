"""Synthetic high frame rate scenes with known motion, plus skip-k sample
construction.

Objects carry smooth sinusoidal textures defined in object coordinates, so a
sub-pixel shift of the object shifts its texture exactly. Edges are
anti-aliased with a one-pixel linear ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .events import EventStream, SimulatorConfig, simulate_events, slice_stream

MOTION_KINDS = ("linear", "quadratic", "circular", "bounce")
SHAPES = ("disk", "square", "textured-patch")


@dataclass(frozen=True)
class Trajectory:
    """Object center as a function of time (pixels, seconds)."""

    kind: str = "linear"
    position: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    acceleration: tuple[float, float] = (0.0, 0.0)
    angular_rate: float = 0.0
    radius: float = 0.0
    phase: float = 0.0
    bounds: Optional[tuple[float, float, float, float]] = None  # x_lo, y_lo, x_hi, y_hi

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "bounce":
            if self.bounds is None:
                raise ValueError("bounce trajectory needs bounds")
            x_lo, y_lo, x_hi, y_hi = self.bounds
            if not (x_lo < x_hi and y_lo < y_hi):
                raise ValueError("empty bounce box")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        p0, v, a = (np.asarray(q, dtype=np.float64) for q in
                    (self.position, self.velocity, self.acceleration))
        tt = t[..., None]
        if self.kind == "linear":
            return p0 + v * tt
        if self.kind == "quadratic":
            return p0 + v * tt + 0.5 * a * tt ** 2
        if self.kind == "circular":
            ang = self.angular_rate * t + self.phase
            return p0 + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        lo = np.array(self.bounds[:2], dtype=np.float64)
        hi = np.array(self.bounds[2:], dtype=np.float64)
        return _reflect(p0 + v * tt, lo, hi)

    def impact_times(self, t_max: float) -> list[float]:
        """Times in [0, t_max] where a bounce trajectory hits a wall."""
        if self.kind != "bounce":
            return []
        out = []
        for axis in range(2):
            v = self.velocity[axis]
            if v == 0:
                continue
            lo, hi = self.bounds[axis], self.bounds[axis + 2]
            span = hi - lo
            first = ((hi if v > 0 else lo) - self.position[axis]) / v
            k = 0
            while first + k * span / abs(v) <= t_max:
                out.append(first + k * span / abs(v))
                k += 1
        return sorted(out)


def _reflect(p, lo, hi):
    span = hi - lo
    u = np.mod(p - lo, 2 * span)
    return lo + np.where(u <= span, u, 2 * span - u)


@dataclass(frozen=True)
class SceneObject:
    shape: str = "disk"
    size: float = 8.0  # radius for disks, half-side for squares
    intensity: float = 0.7
    texture_seed: Optional[int] = None
    texture_contrast: float = 0.2
    trajectory: Trajectory = field(default_factory=Trajectory)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if not self.size > 0:
            raise ValueError("object size must be positive")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    duration: float = 32 / 240
    fps_gt: float = 240.0
    objects: tuple[SceneObject, ...] = ()
    background: float = 0.35
    background_seed: Optional[int] = None
    background_contrast: float = 0.15
    channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scene size must be positive")
        if self.n_frames < 9:
            raise ValueError("scene must hold at least 9 ground-truth frames")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps_gt))

    def frame_times(self, fps: Optional[float] = None) -> np.ndarray:
        """Frame timestamps; with ``fps`` a multiple of fps_gt the ground-truth
        times are a subset."""
        fps = fps or self.fps_gt
        factor = fps / self.fps_gt
        n = (self.n_frames - 1) * int(round(factor)) + 1
        return np.arange(n) / fps


@dataclass
class FrameSequence:
    frames: np.ndarray  # (N, H, W) or (N, H, W, C), values in [0, 1]
    times: np.ndarray

    def __len__(self):
        return len(self.frames)


def _texture(seed: int, n_waves: int = 4, max_freq: float = 0.12):
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(-max_freq, max_freq, size=(n_waves, 2)) * 2 * np.pi
    phases = rng.uniform(0, 2 * np.pi, size=n_waves)
    amps = rng.uniform(0.5, 1.0, size=n_waves)
    amps /= amps.sum()
    tint = rng.uniform(0.8, 1.2, size=3)

    def fn(u, v):
        arg = freqs[:, 0, None, None] * u + freqs[:, 1, None, None] * v + phases[:, None, None]
        return np.tensordot(amps, np.sin(arg), axes=1)

    return fn, tint


def _coverage(obj: SceneObject, dx, dy):
    if obj.shape == "square":
        cx = np.clip(obj.size - np.abs(dx) + 0.5, 0.0, 1.0)
        cy = np.clip(obj.size - np.abs(dy) + 0.5, 0.0, 1.0)
        return cx * cy
    return np.clip(obj.size - np.hypot(dx, dy) + 0.5, 0.0, 1.0)


def _render_frame(spec: SceneSpec, t: float, xx, yy, textures) -> np.ndarray:
    bg_fn, bg_tint = textures[0]
    img = np.full((spec.height, spec.width), spec.background)
    if bg_fn is not None:
        img = img + spec.background_contrast * bg_fn(xx, yy)
    img = np.repeat(img[..., None], spec.channels, axis=-1)
    if spec.channels == 3 and bg_fn is not None:
        img = img * bg_tint
    for obj, (fn, tint) in zip(spec.objects, textures[1:]):
        cx, cy = obj.trajectory(t)
        dx, dy = xx - cx, yy - cy
        alpha = _coverage(obj, dx, dy)[..., None]
        val = np.full(dx.shape, obj.intensity)
        if fn is not None:
            val = val + obj.texture_contrast * fn(dx, dy)
        val = np.repeat(val[..., None], spec.channels, axis=-1)
        if spec.channels == 3:
            val = val * tint
        img = img * (1 - alpha) + val * alpha
    img = np.clip(img, 0.0, 1.0)
    return img[..., 0] if spec.channels == 1 else img


def render(spec: SceneSpec, fps: Optional[float] = None) -> FrameSequence:
    """Render the scene at ``fps`` (default: the ground-truth rate)."""
    times = spec.frame_times(fps)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    textures = [_texture(spec.background_seed) if spec.background_seed is not None else (None, None)]
    for obj in spec.objects:
        seed = obj.texture_seed
        if obj.shape == "textured-patch" and seed is None:
            seed = spec.seed
        textures.append(_texture(seed) if seed is not None else (None, None))
    frames = np.stack([_render_frame(spec, t, xx, yy, textures) for t in times])
    return FrameSequence(frames, times)


@dataclass
class Clip:
    """Ground-truth frames with events simulated at a finer frame rate."""

    gt: FrameSequence
    events: EventStream
    spec: SceneSpec


def build_clip(spec: SceneSpec, sim: SimulatorConfig = SimulatorConfig(),
               oversample: int = 2) -> Clip:
    gt = render(spec)
    fine = render(spec, spec.fps_gt * oversample) if oversample > 1 else gt
    events = simulate_events(fine.frames, fine.times, sim)
    return Clip(gt, events, spec)


@dataclass
class InterpolationSample:
    I_t0: np.ndarray
    I_t1: np.ndarray
    t0: float
    t1: float
    gt_intermediates: list  # [(time, frame)]
    events_full: EventStream

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError("sample window must have positive length")
        for t, _ in self.gt_intermediates:
            if not self.t0 < t < self.t1:
                raise ValueError(f"intermediate time {t} outside ({self.t0}, {self.t1})")
        if self.events_full.window != (self.t0, self.t1):
            raise ValueError("events must cover exactly the sample window")

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.gt_intermediates]

    @property
    def skip(self) -> int:
        return len(self.gt_intermediates)

    def training_view(self) -> "TrainingSample":
        return TrainingSample(self.I_t0, self.I_t1, self.t0, self.t1,
                              tuple(self.times), self.events_full)


@dataclass(frozen=True)
class TrainingSample:
    """What the unsupervised trainer may see: no ground-truth intermediates,
    only the times at which they would sit."""

    I_t0: np.ndarray
    I_t1: np.ndarray
    t0: float
    t1: float
    times: tuple[float, ...]
    events_full: EventStream


def make_skip_dataset(frames: FrameSequence, events: EventStream, skip: int,
                      stride: Optional[int] = None) -> list[InterpolationSample]:
    """Cut windows of skip+2 frames: endpoints are inputs, the interior
    frames are held-out ground truth."""
    if skip < 1:
        raise ValueError("skip must be at least 1")
    if len(frames) < skip + 2:
        raise ValueError(f"{len(frames)} frames cannot hold a skip-{skip} window")
    stride = stride or skip + 1
    samples = []
    for start in range(0, len(frames) - skip - 1, stride):
        end = start + skip + 1
        t0, t1 = float(frames.times[start]), float(frames.times[end])
        gts = [(float(frames.times[i]), frames.frames[i]) for i in range(start + 1, end)]
        samples.append(InterpolationSample(frames.frames[start], frames.frames[end], t0, t1,
                                           gts, slice_stream(events, t0, t1)))
    return samples


# ---------------------------------------------------------------- random scenes

def random_trajectory(kind: str, rng: np.random.Generator, width: int, height: int,
                      duration: float, speed: float) -> Trajectory:
    """Draw a trajectory of the given family that stays inside the frame.

    ``speed`` is the typical displacement in pixels per ground-truth window of
    ``duration``.
    """
    margin = 10.0
    lo = np.array([margin, margin])
    hi = np.array([width - margin, height - margin])
    for _ in range(200):
        p0 = rng.uniform(lo, hi)
        ang = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.cos(ang), np.sin(ang)])
        if kind == "linear":
            traj = Trajectory("linear", tuple(p0), tuple(direction * speed / duration))
        elif kind == "quadratic":
            # decelerate through a turning point inside the clip
            turn = rng.uniform(0.3, 0.7) * duration
            v = direction * 2 * speed / duration
            a = -v / turn
            ortho = np.array([-direction[1], direction[0]]) * rng.uniform(-0.5, 0.5) * speed / duration
            traj = Trajectory("quadratic", tuple(p0), tuple(v + ortho), tuple(a))
        elif kind == "circular":
            r = rng.uniform(0.3, 0.6) * speed
            traj = Trajectory("circular", tuple(p0), angular_rate=rng.choice([-1, 1]) * 2.5 * np.pi / duration,
                              radius=r, phase=rng.uniform(0, 2 * np.pi))
        elif kind == "bounce":
            box = (lo[0] + 4, lo[1] + 4, hi[0] - 4, hi[1] - 4)
            traj = Trajectory("bounce", tuple(p0), tuple(direction * 2.5 * speed / duration), bounds=box)
        else:
            raise ValueError(f"unknown trajectory kind {kind!r}")
        pts = traj(np.linspace(0, duration, 64))
        if np.all((pts >= lo - 1) & (pts <= hi + 1)):
            return traj
    raise RuntimeError("could not place a trajectory inside the frame")


def random_scene(seed: int, motion: Sequence[str] = ("quadratic", "bounce"), *, width: int = 64,
                 height: int = 64, n_objects: tuple[int, int] = (1, 3), fps_gt: float = 240.0,
                 n_frames: int = 9, window_frames: int = 8, speed: float = 8.0,
                 channels: int = 1, static: bool = False) -> SceneSpec:
    """Random textured objects over a textured static background.

    ``speed`` is the displacement scale (pixels) per window of
    ``window_frames`` ground-truth frames.
    """
    rng = np.random.default_rng(seed)
    duration = n_frames / fps_gt
    window = window_frames / fps_gt
    objs = []
    for i in range(int(rng.integers(n_objects[0], n_objects[1] + 1))):
        kind = str(rng.choice(list(motion)))
        if static:
            traj = Trajectory("linear", tuple(rng.uniform(16, [width - 16, height - 16])))
        else:
            traj = random_trajectory(kind, rng, width, height, window, speed)
        shape = str(rng.choice(["disk", "square", "textured-patch"]))
        objs.append(SceneObject(shape=shape, size=float(rng.uniform(5, 9)),
                                intensity=float(rng.uniform(0.45, 0.85)),
                                texture_seed=int(rng.integers(1 << 30)),
                                texture_contrast=float(rng.uniform(0.1, 0.25)),
                                trajectory=traj))
    return SceneSpec(width=width, height=height, duration=duration, fps_gt=fps_gt,
                     objects=tuple(objs), background=float(rng.uniform(0.2, 0.4)),
                     background_seed=int(rng.integers(1 << 30)),
                     background_contrast=float(rng.uniform(0.05, 0.15)),
                     channels=channels, seed=seed)


def with_duration(spec: SceneSpec, n_frames: int) -> SceneSpec:
    return replace(spec, duration=n_frames / spec.fps_gt)
