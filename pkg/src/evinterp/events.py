"""Event data model: streams, slicing, approximate reversal, 4-channel tensors
and a minimal log-intensity threshold-crossing simulator.

Streams store events as parallel numpy arrays (x, y, t, p). Within equal
timestamps events are ordered by (y, x, p) so every stream has one canonical
order.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class Direction(str, enum.Enum):
    FORWARD = "forward"
    REVERSED = "reversed"


class Event(NamedTuple):
    x: int
    y: int
    t: float
    p: int


def _canonical_order(x, y, t, p) -> np.ndarray:
    # lexsort sorts by the last key first
    return np.lexsort((p, x, y, t))


@dataclass(frozen=True, eq=False)
class EventStream:
    """Events inside the window [t_start, t_end] of a width x height sensor.

    A reversed stream keeps a handle on the forward stream it came from, so
    reversing it again hands back that exact object (reversal is an
    involution without floating point drift).
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    t_start: float
    t_end: float
    width: int
    height: int
    direction: Direction = Direction.FORWARD
    _source: Optional["EventStream"] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event arrays must have equal length")
        if self.t_end < self.t_start:
            raise ValueError(f"window end {self.t_end} precedes start {self.t_start}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor size must be positive")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise ValueError("event timestamps must be non-decreasing")
            if self.t[0] < self.t_start or self.t[-1] > self.t_end:
                raise ValueError("event timestamps fall outside the stream window")
            if not np.all((self.p == 1) | (self.p == -1)):
                raise ValueError("polarity must be +1 or -1")
            if self.x.min() < 0 or self.y.min() < 0:
                raise ValueError("negative pixel coordinate")
            if self.x.max() >= self.width or self.y.max() >= self.height:
                raise ValueError("pixel coordinate outside the sensor")
        for arr in (self.x, self.y, self.t, self.p):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, x, y, t, p, t_start, t_end, width, height) -> "EventStream":
        """Build a forward stream from unsorted arrays (sorted canonically here)."""
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        p = np.asarray(p, dtype=np.int8)
        order = _canonical_order(x, y, t, p)
        return cls(x[order], y[order], t[order], p[order],
                   float(t_start), float(t_end), int(width), int(height))

    @classmethod
    def from_events(cls, events: Sequence, t_start, t_end, width, height) -> "EventStream":
        if len(events) == 0:
            return cls.empty(t_start, t_end, width, height)
        x, y, t, p = zip(*events)
        return cls.from_arrays(x, y, t, p, t_start, t_end, width, height)

    @classmethod
    def empty(cls, t_start, t_end, width, height) -> "EventStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float64),
                   np.zeros(0, np.int8), float(t_start), float(t_end), int(width), int(height))

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    @property
    def events(self) -> list[Event]:
        return list(self)

    @property
    def window(self) -> tuple[float, float]:
        return (self.t_start, self.t_end)

    @property
    def reversed(self) -> bool:
        return self.direction is Direction.REVERSED

    def same_events(self, other: "EventStream") -> bool:
        """Event-for-event equality of content and window, ignoring direction."""
        return (self.window == other.window
                and (self.width, self.height) == (other.width, other.height)
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.t, other.t) and np.array_equal(self.p, other.p))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.direction == other.direction and self.same_events(other)

    __hash__ = None

    def slice(self, a: float, b: float) -> "EventStream":
        return slice_stream(self, a, b)

    def count(self, polarity: int) -> int:
        return int(np.count_nonzero(self.p == polarity))


def concat(streams: Sequence[EventStream]) -> EventStream:
    """Join forward streams on adjacent windows into one stream."""
    if not streams:
        raise ValueError("nothing to concatenate")
    first = streams[0]
    for prev, nxt in zip(streams, streams[1:]):
        if prev.t_end != nxt.t_start:
            raise ValueError("windows are not adjacent")
    return EventStream(np.concatenate([s.x for s in streams]),
                       np.concatenate([s.y for s in streams]),
                       np.concatenate([s.t for s in streams]),
                       np.concatenate([s.p for s in streams]),
                       first.t_start, streams[-1].t_end, first.width, first.height)


def slice_stream(stream: EventStream, a: float, b: float) -> EventStream:
    """Forward sub-stream on [a, b].

    Membership is half-open, a < t <= b, so adjacent slices partition the
    events; events sitting exactly on the stream's own start are kept by any
    slice that begins there. Zero-width slices are always empty.
    """
    if stream.reversed:
        raise ValueError("only forward streams can be sliced; reverse the slice instead")
    if a > b:
        raise ValueError(f"slice start {a} is after its end {b}")
    if a < stream.t_start or b > stream.t_end:
        raise ValueError(f"slice [{a}, {b}] exceeds window {stream.window}")
    if a == b:
        return EventStream.empty(a, b, stream.width, stream.height)
    side = "left" if a == stream.t_start else "right"
    lo = np.searchsorted(stream.t, a, side=side)
    hi = np.searchsorted(stream.t, b, side="right")
    sl = np.s_[lo:hi]
    return EventStream(stream.x[sl], stream.y[sl], stream.t[sl], stream.p[sl],
                       float(a), float(b), stream.width, stream.height)


def reverse_stream(stream: EventStream) -> EventStream:
    """Approximate time reversal: t -> t_start + t_end - t and p -> -p.

    The window keeps its bounds; the result is tagged reversed. Reversing a
    reversed stream returns the forward stream it was built from.
    """
    if stream.reversed:
        if stream._source is not None:
            return stream._source
        logger.warning("reversing a reversed stream without a source; timestamps may drift")
    a, b = stream.t_start, stream.t_end
    x, y, p = stream.x[::-1], stream.y[::-1], -stream.p[::-1]
    t = np.clip((a + b) - stream.t[::-1], a, b)
    order = _canonical_order(x, y, t, p)
    direction = Direction.FORWARD if stream.reversed else Direction.REVERSED
    return EventStream(x[order], y[order], t[order], p[order].astype(np.int8), a, b,
                       stream.width, stream.height, direction,
                       _source=None if stream.reversed else stream)


def directed(stream: EventStream, src: float, dst: float) -> EventStream:
    """Stream "from src to dst": the forward slice when src <= dst, otherwise
    the reversed slice of [dst, src]."""
    if src <= dst:
        return slice_stream(stream, src, dst)
    return reverse_stream(slice_stream(stream, dst, src))


@dataclass(frozen=True, eq=False)
class EventTensor:
    """4 x H x W encoding: positive count, negative count, latest positive
    timestamp and latest negative timestamp (both normalized to the window)."""

    data: np.ndarray
    window: tuple[float, float]
    direction: Direction = Direction.FORWARD

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def tensorize(stream: EventStream) -> EventTensor:
    h, w = stream.height, stream.width
    data = np.zeros((4, h, w), dtype=np.float64)
    span = stream.t_end - stream.t_start
    if len(stream) and span > 0:
        flat = stream.y * w + stream.x
        rel = (stream.t - stream.t_start) / span
        for k, pol in enumerate((1, -1)):
            sel = stream.p == pol
            if not np.any(sel):
                continue
            data[k].reshape(-1)[:] = np.bincount(flat[sel], minlength=h * w)
            latest = np.zeros(h * w)
            np.maximum.at(latest, flat[sel], rel[sel])
            data[2 + k].reshape(-1)[:] = latest
    return EventTensor(data, stream.window, stream.direction)


@dataclass(frozen=True)
class SimulatorConfig:
    threshold: float = 0.2
    epsilon: float = 1e-3
    refractory: float = 0.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("contrast threshold must be positive")
        if self.epsilon < 0 or self.refractory < 0:
            raise ValueError("epsilon and refractory must be non-negative")


def luminance(frames: np.ndarray) -> np.ndarray:
    if frames.ndim == 4:
        if frames.shape[-1] == 1:
            return frames[..., 0]
        return frames[..., :3] @ np.array([0.299, 0.587, 0.114])
    return frames


def simulate_events(frames: np.ndarray, timestamps: Sequence[float],
                    cfg: SimulatorConfig = SimulatorConfig()) -> EventStream:
    """Emit events whenever the linearly interpolated log intensity of a pixel
    crosses its reference level by one threshold.

    The reference of each pixel is kept as ``L0 + m * threshold`` with an
    integer level counter ``m``, so the number of events over a monotone clip
    is exactly ``floor(|L_end - L0| / threshold)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    times = np.asarray(timestamps, dtype=np.float64)
    if frames.ndim not in (3, 4):
        raise ValueError("frames must be (N, H, W) or (N, H, W, C)")
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    if len(times) != len(frames):
        raise ValueError("one timestamp per frame required")
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    lum = luminance(frames)
    h, w = lum.shape[1:]
    tau = cfg.threshold
    logs = np.log(lum + cfg.epsilon)
    base = logs[0]
    level = np.zeros((h, w), dtype=np.int64)
    chunks = []
    for k in range(len(frames) - 1):
        la, lb = logs[k], logs[k + 1]
        rel = (lb - base) / tau
        up, down = np.floor(rel).astype(np.int64), np.ceil(rel).astype(np.int64)
        new = np.where(up > level, up, np.where(down < level, down, level))
        n = new - level
        count = np.abs(n)
        if count.max(initial=0) > 0:
            ta, tb = times[k], times[k + 1]
            yy, xx = np.nonzero(count)
            nsel, lsel = n[yy, xx], level[yy, xx]
            dl = (lb - la)[yy, xx]
            for j in range(1, count.max() + 1):
                keep = np.abs(nsel) >= j
                if not np.any(keep):
                    break
                sgn = np.sign(nsel[keep])
                crossing = base[yy[keep], xx[keep]] + (lsel[keep] + sgn * j) * tau
                frac = (crossing - la[yy[keep], xx[keep]]) / dl[keep]
                t = ta + np.clip(frac, 0.0, 1.0) * (tb - ta)
                chunks.append((xx[keep], yy[keep], t, sgn.astype(np.int8)))
        level = new
    if not chunks:
        return EventStream.empty(times[0], times[-1], w, h)
    x, y, t, p = (np.concatenate(c) for c in zip(*chunks))
    if cfg.refractory > 0:
        x, y, t, p = _apply_refractory(x, y, t, p, cfg.refractory)
    return EventStream.from_arrays(x, y, t, p, times[0], times[-1], w, h)


def _apply_refractory(x, y, t, p, period):
    order = np.lexsort((t, y, x))
    x, y, t, p = x[order], y[order], t[order], p[order]
    keep = np.ones(len(t), dtype=bool)
    last_pix, last_t = None, -np.inf
    for i in range(len(t)):
        pix = (x[i], y[i])
        if pix != last_pix:
            last_pix, last_t = pix, t[i]
            continue
        if t[i] - last_t < period:
            keep[i] = False
        else:
            last_t = t[i]
    return x[keep], y[keep], t[keep], p[keep]
