"""The interpolation function: event-driven flow estimation, flow refinement
with visibility, and the visibility-weighted blend of warped inputs.

One application of the model takes two frames A and B sitting at times a and
b and produces the frame at a target time s. The event inputs are the
directed streams "from s to a" and "from s to b"; a stream that runs
backwards in time is a reversed stream and goes through the backward flow
estimator. The same call covers plain interpolation (a < s < b) and the
reconstruction passes of cycle training, where s lies outside [a, b].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .events import Direction, EventStream, EventTensor, concat, reverse_stream, tensorize
from .networks import UNet
from .warp import warp

VARIANTS = ("full", "linear_motion", "shared_flow", "frames_only")
BLEND_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    channels: int = 1
    base: int = 12
    depth: int = 4
    # network outputs are multiplied by this to give flow in pixels
    flow_scale: float = 10.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.channels < 1 or self.base < 1 or self.depth < 1:
            raise ValueError("channels, base and depth must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EventInput:
    """Batched event tensor (B, 4, H, W) and the direction of its stream."""

    data: torch.Tensor
    direction: Direction

    @classmethod
    def from_tensors(cls, tensors: list[EventTensor], dtype=torch.float32) -> "EventInput":
        dirs = {t.direction for t in tensors}
        if len(dirs) != 1:
            raise ValueError("a batch must not mix stream directions")
        data = torch.from_numpy(np.stack([t.data for t in tensors])).to(dtype)
        return cls(data, dirs.pop())


@dataclass
class Query:
    """Event inputs for one application of the model with frames at a, b and
    target s. ``a_to_b``/``b_to_a`` are only consumed by the linear-motion and
    frames-only variants."""

    to_a: EventInput
    to_b: EventInput
    a_to_b: Optional[EventInput] = None
    b_to_a: Optional[EventInput] = None


@dataclass
class SynthesisResult:
    frame: torch.Tensor
    flows: tuple[torch.Tensor, torch.Tensor]
    visibilities: tuple[torch.Tensor, torch.Tensor]
    warped: tuple[torch.Tensor, torch.Tensor]
    Z: torch.Tensor
    initial_flows: Optional[tuple[torch.Tensor, torch.Tensor]] = None
    residuals: Optional[tuple[torch.Tensor, torch.Tensor]] = None


def _as_time(value, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(value, dtype=like.dtype, device=like.device)
    return t.reshape(-1, 1, 1, 1) if t.ndim else t


def blend(warped_a, warped_b, vis_a, vis_b, time_a, time_b, target) -> SynthesisResult:
    """Visibility-weighted blend for frames at arbitrary times.

    Each frame is weighted by the distance from the target to the *other*
    frame, normalized by the frame gap; for a < s < b this is exactly
    (b - s) V_a and (s - a) V_b. Where the normalized weight sum drops below
    BLEND_EPS the output falls back to the visibility-free time blend.
    """
    ta, tb, s = (_as_time(v, warped_a) for v in (time_a, time_b, target))
    gap = (tb - ta).abs()
    if torch.any(gap == 0):
        raise ValueError("input frames must sit at distinct times")
    wa = (s - tb).abs() / gap
    wb = (s - ta).abs() / gap
    z = wa * vis_a + wb * vis_b
    num = wa * vis_a * warped_a + wb * vis_b * warped_b
    plain = (wa * warped_a + wb * warped_b) / (wa + wb)
    ok = z >= BLEND_EPS
    frame = torch.where(ok, num / z.clamp_min(BLEND_EPS), plain)
    return SynthesisResult(frame, (None, None), (vis_a, vis_b), (warped_a, warped_b), z * gap)


def synthesize(warped0, warped1, V0, V1, t0, t, t1) -> SynthesisResult:
    """Blend of two warped inputs at a target time strictly inside (t0, t1)."""
    t0_, t_, t1_ = (torch.as_tensor(v, dtype=torch.float64) for v in (t0, t, t1))
    bad = ~((t0_ < t_) & (t_ < t1_))
    if torch.any(bad):
        raise ValueError(f"target time {t} is not inside ({t0}, {t1})")
    if warped0.shape != warped1.shape:
        raise ValueError("warped frames differ in shape")
    return blend(warped0, warped1, V0, V1, t0, t1, t)


class InterpolationModel(nn.Module):
    """Two flow estimators (forward / reversed streams), one shared refiner.

    Variants reshape the flow stage only:
      full           separate estimators per stream direction
      shared_flow    one estimator for both directions
      linear_motion  flows between the input frames, scaled to the target
                     time by the linear-motion proportions
      frames_only    one estimator on both frames plus the event tensor,
                     predicting both inter-frame flows, then linear proportions
    """

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        c, v = config.channels, config.variant
        unet = lambda cin, cout: UNet(cin, cout, config.base, config.depth)  # noqa: E731
        if v == "frames_only":
            self.flow_net_pair = unet(2 * c + 4, 4)
        else:
            flow_in = 4 + (2 * c if v == "linear_motion" else 0)
            self.flow_net_forward = unet(flow_in, 2)
            if v != "shared_flow":
                self.flow_net_backward = unet(flow_in, 2)
        self.refine_net = unet(2 * c + 2 + 4, 3)

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def min_size(self) -> int:
        return self.refine_net.min_size

    def flow_net(self, direction: Direction) -> nn.Module:
        if self.variant == "frames_only":
            raise ValueError("the frames-only variant has no per-direction estimator")
        if self.variant == "shared_flow" or direction is Direction.FORWARD:
            return self.flow_net_forward
        return self.flow_net_backward

    def estimate_flow(self, events, direction: Direction, frames: Optional[torch.Tensor] = None):
        """Flow from an event tensor through the estimator for ``direction``.

        ``events`` is an EventInput or EventTensor whose own direction must
        match. Frames are appended for the linear-motion variant only.
        """
        if isinstance(events, EventTensor):
            events = EventInput.from_tensors([events], self._dtype())
        if events.direction is not direction:
            raise ValueError(f"{events.direction.value} stream routed to the {direction.value} estimator")
        x = events.data
        if self.variant == "linear_motion":
            if frames is None:
                raise ValueError("linear-motion estimator needs the input frames")
            x = torch.cat([x, frames], dim=1)
        return self.config.flow_scale * self.flow_net(direction)(x)

    def refine(self, warped, frame, flow, events):
        """Residual flow and visibility in [0, 1] from (warped, frame, flow, events).

        Inputs may carry a leading batch axis holding several directions at
        once; the same parameters serve all of them.
        """
        data = events.data if isinstance(events, EventInput) else events
        shapes = {tuple(a.shape[-2:]) for a in (warped, frame, flow, data)}
        if len(shapes) != 1:
            raise ValueError(f"refiner inputs disagree in resolution: {shapes}")
        out = self.refine_net(torch.cat([warped, frame, flow, data], dim=1))
        return self.config.flow_scale * out[:, :2], torch.sigmoid(out[:, 2:3])

    def _dtype(self):
        return next(self.parameters()).dtype

    def _initial_flows(self, frame_a, frame_b, time_a, time_b, target, q: Query):
        v = self.variant
        if v in ("full", "shared_flow"):
            return (self.estimate_flow(q.to_a, q.to_a.direction),
                    self.estimate_flow(q.to_b, q.to_b.direction))
        if q.a_to_b is None or q.b_to_a is None:
            raise ValueError(f"variant {v} needs the inter-frame event streams")
        if v == "linear_motion":
            f_ab = self.estimate_flow(q.a_to_b, q.a_to_b.direction, torch.cat([frame_a, frame_b], 1))
            f_ba = self.estimate_flow(q.b_to_a, q.b_to_a.direction, torch.cat([frame_b, frame_a], 1))
        else:
            out = self.config.flow_scale * self.flow_net_pair(
                torch.cat([frame_a, frame_b, q.a_to_b.data], dim=1))
            f_ab, f_ba = out[:, :2], out[:, 2:]
        ta, tb, s = (_as_time(x, frame_a) for x in (time_a, time_b, target))
        tau = (s - ta) / (tb - ta)
        f_sa = -(1 - tau) * tau * f_ab + tau ** 2 * f_ba
        f_sb = (1 - tau) ** 2 * f_ab - tau * (1 - tau) * f_ba
        return f_sa, f_sb

    def _refiner_events(self, q: Query) -> torch.Tensor:
        # The linear-motion and frames-only variants never see events tied to
        # the target time; their refiner gets the inter-frame streams that
        # end at each frame instead.
        if self.variant in ("full", "shared_flow"):
            return torch.cat([q.to_a.data, q.to_b.data])
        return torch.cat([q.b_to_a.data, q.a_to_b.data])

    def forward(self, frame_a, frame_b, time_a, time_b, target, q: Query) -> SynthesisResult:
        if frame_a.shape != frame_b.shape:
            raise ValueError("input frames differ in shape")
        f_sa, f_sb = self._initial_flows(frame_a, frame_b, time_a, time_b, target, q)
        n = frame_a.shape[0]
        frames = torch.cat([frame_a, frame_b])
        init = torch.cat([f_sa, f_sb])
        coarse = warp(frames, init)
        delta, vis = self.refine(coarse, frames, init, self._refiner_events(q))
        flows = init + delta
        warped = warp(frames, flows)
        res = blend(warped[:n], warped[n:], vis[:n], vis[n:], time_a, time_b, target)
        res.flows = (flows[:n], flows[n:])
        res.initial_flows = (f_sa, f_sb)
        res.residuals = (delta[:n], delta[n:])
        return res


# ------------------------------------------------------------ stream helpers

def frame_to_torch(frame: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W) or (H, W, C) array -> (1, C, H, W) tensor."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype).unsqueeze(0)


def frame_to_numpy(frame: torch.Tensor) -> np.ndarray:
    arr = frame.detach().cpu().double().numpy()[0]
    return arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)


def interpolate(model: InterpolationModel, I_t0, I_t1, E_rev: EventStream, E_fwd: EventStream,
                t0: float, t: float, t1: float) -> SynthesisResult:
    """Frame at t from I_t0, I_t1, the reversed stream t->t0 and the forward
    stream t->t1. Frames are numpy arrays or (1, C, H, W) tensors."""
    if not t0 < t < t1:
        raise ValueError(f"target time {t} is not inside ({t0}, {t1})")
    if not E_rev.reversed or E_rev.window != (t0, t):
        raise ValueError("E_rev must be the reversed stream on [t0, t]")
    if E_fwd.reversed or E_fwd.window != (t, t1):
        raise ValueError("E_fwd must be the forward stream on [t, t1]")
    dtype = model._dtype()
    a = I_t0 if torch.is_tensor(I_t0) else frame_to_torch(I_t0, dtype)
    b = I_t1 if torch.is_tensor(I_t1) else frame_to_torch(I_t1, dtype)
    full = concat([reverse_stream(E_rev), E_fwd])
    q = Query(*(EventInput.from_tensors([tensorize(s)], dtype) for s in
                (E_rev, E_fwd, full, reverse_stream(full))))
    return model(a, b, t0, t1, t, q)
