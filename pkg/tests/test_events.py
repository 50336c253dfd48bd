import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evinterp.events import (
    Direction,
    EventStream,
    SimulatorConfig,
    concat,
    directed,
    reverse_stream,
    simulate_events,
    slice_stream,
    tensorize,
)


def random_stream(rng, n=None, width=8, height=6, t_start=0.0, t_end=1.0):
    n = rng.integers(0, 40) if n is None else n
    return EventStream.from_arrays(rng.integers(0, width, n), rng.integers(0, height, n),
                                   rng.uniform(t_start, t_end, n), rng.choice([-1, 1], n),
                                   t_start, t_end, width, height)


@st.composite
def streams(draw, max_events=30):
    width = draw(st.integers(1, 10))
    height = draw(st.integers(1, 10))
    t_start = draw(st.floats(0, 100, allow_nan=False))
    span = draw(st.floats(1e-3, 10, allow_nan=False))
    n = draw(st.integers(0, max_events))
    xs = draw(st.lists(st.integers(0, width - 1), min_size=n, max_size=n))
    ys = draw(st.lists(st.integers(0, height - 1), min_size=n, max_size=n))
    ts = draw(st.lists(st.floats(t_start, t_start + span), min_size=n, max_size=n))
    ps = draw(st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n))
    return EventStream.from_arrays(xs, ys, ts, ps, t_start, t_start + span, width, height)


# ------------------------------------------------------------------ stream type

def test_stream_rejects_bad_polarity():
    with pytest.raises(ValueError, match="polarity"):
        EventStream.from_arrays([0], [0], [0.5], [0], 0, 1, 2, 2)


def test_stream_rejects_out_of_window_and_out_of_sensor():
    with pytest.raises(ValueError, match="window"):
        EventStream.from_arrays([0], [0], [1.5], [1], 0, 1, 2, 2)
    with pytest.raises(ValueError, match="sensor"):
        EventStream.from_arrays([2], [0], [0.5], [1], 0, 1, 2, 2)


def test_ties_are_ordered_by_y_x_p():
    s = EventStream.from_events([(3, 1, 0.5, 1), (1, 2, 0.5, -1), (1, 1, 0.5, 1), (1, 1, 0.5, -1)],
                                0, 1, 4, 4)
    assert s.events == [(1, 1, 0.5, -1), (1, 1, 0.5, 1), (3, 1, 0.5, 1), (1, 2, 0.5, -1)]


# ------------------------------------------------------------------ slicing

def test_slice_full_window_is_identity():
    s = random_stream(np.random.default_rng(0), 25)
    assert slice_stream(s, 0.0, 1.0) == s


def test_slice_empty_interval():
    s = random_stream(np.random.default_rng(1), 25)
    out = slice_stream(s, 0.4, 0.4)
    assert len(out) == 0 and out.window == (0.4, 0.4)


def test_slice_example():
    s = EventStream.from_events([(0, 0, 0.1, 1), (0, 0, 0.5, 1), (0, 0, 0.9, -1)], 0, 1, 1, 1)
    out = slice_stream(s, 0.3, 0.95)
    assert [e.t for e in out] == [0.5, 0.9]
    assert out.window == (0.3, 0.95)


def test_slice_rejects_reversed_interval_and_reversed_stream():
    s = random_stream(np.random.default_rng(2), 5)
    with pytest.raises(ValueError):
        slice_stream(s, 0.8, 0.2)
    with pytest.raises(ValueError):
        slice_stream(reverse_stream(s), 0.1, 0.2)


@settings(max_examples=200, deadline=None)
@given(streams(), st.floats(0, 1), st.floats(0, 1))
def test_slice_concatenation(s, u, v):
    a = s.t_start
    span = s.t_end - s.t_start
    b, c = sorted((a + u * span, a + v * span))
    c = min(c, s.t_end)
    whole = slice_stream(s, a, c)
    joined = concat([slice_stream(s, a, b), slice_stream(s, b, c)])
    assert whole == joined


# ------------------------------------------------------------------ reversal

def test_reverse_empty():
    s = EventStream.empty(0, 1, 3, 3)
    r = reverse_stream(s)
    assert len(r) == 0 and r.direction is Direction.REVERSED


def test_reverse_example():
    s = EventStream.from_events([(1, 1, 0.2, 1), (2, 3, 0.7, -1)], 0, 1, 4, 4)
    r = reverse_stream(s)
    assert [(e.x, e.y, e.p) for e in r] == [(2, 3, 1), (1, 1, -1)]
    assert [e.t for e in r] == pytest.approx([0.3, 0.8])
    assert r.window == (0, 1) and r.reversed


@settings(max_examples=300, deadline=None)
@given(streams())
def test_reverse_involution_and_polarity_flip(s):
    r = reverse_stream(s)
    assert reverse_stream(r) == s
    assert r.count(1) == s.count(-1) and r.count(-1) == s.count(1)
    assert np.all(np.diff(r.t) >= 0)
    assert np.all((r.t >= s.t_start) & (r.t <= s.t_end))


def test_reverse_timestamps_mirror_window():
    s = random_stream(np.random.default_rng(3), 50, t_start=2.0, t_end=5.0)
    r = reverse_stream(s)
    assert sorted(r.t) == pytest.approx(sorted(7.0 - s.t))


def test_directed_picks_direction():
    s = random_stream(np.random.default_rng(4), 40)
    fwd = directed(s, 0.2, 0.7)
    back = directed(s, 0.7, 0.2)
    assert not fwd.reversed and back.reversed
    assert fwd.window == back.window == (0.2, 0.7)
    assert reverse_stream(back) == fwd


# ------------------------------------------------------------------ tensorize

def test_tensorize_empty():
    t = tensorize(EventStream.empty(0, 1, 5, 3))
    assert t.shape == (4, 3, 5) and not t.data.any()


def test_tensorize_example():
    s = EventStream.from_events([(1, 1, 0.2, 1), (1, 1, 0.8, 1)], 0, 1, 3, 3)
    d = tensorize(s).data
    assert d[0, 1, 1] == 2 and d[2, 1, 1] == 0.8
    assert d[1, 1, 1] == 0 and d[3, 1, 1] == 0


def test_tensorize_zero_width_window_is_zero():
    s = EventStream.from_events([(0, 0, 0.5, 1)], 0.5, 0.5, 2, 2)
    assert not tensorize(s).data.any()


@settings(max_examples=200, deadline=None)
@given(streams())
def test_tensorize_invariants(s):
    d = tensorize(s).data
    assert d[0].sum() + d[1].sum() == len(s)
    assert d[0].sum() == s.count(1)
    for count, stamp in ((d[0], d[2]), (d[1], d[3])):
        assert np.all(stamp[count == 0] == 0)
        assert np.all((stamp >= 0) & (stamp <= 1))


def test_tensorize_keeps_direction():
    s = random_stream(np.random.default_rng(5), 10)
    assert tensorize(reverse_stream(s)).direction is Direction.REVERSED


# ------------------------------------------------------------------ simulator

def ramp_video(delta_l, cfg=SimulatorConfig()):
    i0 = 0.5
    i1 = (i0 + cfg.epsilon) * math.exp(delta_l) - cfg.epsilon
    return np.array([[[i0]], [[i1]]])


def test_constant_video_is_silent():
    frames = np.full((5, 4, 4), 0.3)
    assert len(simulate_events(frames, np.arange(5.0))) == 0


def test_single_pixel_ramp_crossings():
    cfg = SimulatorConfig(threshold=0.2)
    s = simulate_events(ramp_video(2.5 * cfg.threshold, cfg), [0.0, 1.0], cfg)
    assert [e.p for e in s] == [1, 1]
    assert [e.t for e in s] == pytest.approx([0.4, 0.8])


def test_darkening_video_is_all_negative():
    frames = np.linspace(0.9, 0.1, 6)[:, None, None] * np.ones((6, 3, 3))
    s = simulate_events(frames, np.arange(6.0))
    assert len(s) > 0 and np.all(s.p == -1)


def test_simulator_rejects_bad_input():
    with pytest.raises(ValueError):
        simulate_events(np.zeros((2, 3, 3)), [0.0, 0.0])
    with pytest.raises(ValueError):
        simulate_events(np.zeros((1, 3, 3)), [0.0])
    with pytest.raises(ValueError):
        simulate_events(np.zeros((3, 3, 3)), [0.0, 1.0])
    with pytest.raises(ValueError):
        SimulatorConfig(threshold=0)


def test_simulator_reference_tracks_reversals():
    # up 1.5 thresholds then back down to the start: one up event, one down event
    cfg = SimulatorConfig(threshold=0.2)
    i0 = 0.5
    up = (i0 + cfg.epsilon) * math.exp(0.3) - cfg.epsilon
    frames = np.array([i0, up, i0])[:, None, None]
    s = simulate_events(frames, [0.0, 1.0, 2.0], cfg)
    assert [e.p for e in s] == [1, -1]


def test_simulator_refractory_drops_events():
    cfg = SimulatorConfig(threshold=0.1, refractory=0.5)
    s0 = simulate_events(ramp_video(1.0), [0.0, 1.0], SimulatorConfig(threshold=0.1))
    s1 = simulate_events(ramp_video(1.0), [0.0, 1.0], cfg)
    assert len(s1) < len(s0)
    assert np.all(np.diff(s1.t) >= 0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.floats(0.05, 0.5), st.booleans())
def test_simulator_monotone_count(levels, tau, rising):
    levels = sorted(levels, reverse=not rising)
    frames = np.array(levels)[:, None, None]
    cfg = SimulatorConfig(threshold=tau)
    s = simulate_events(frames, np.arange(len(levels), dtype=float), cfg)
    dl = np.log(frames[-1, 0, 0] + cfg.epsilon) - np.log(frames[0, 0, 0] + cfg.epsilon)
    assert len(s) == math.floor(abs(dl) / tau)


def test_rgb_uses_luminance():
    gray = np.linspace(0.2, 0.8, 4)[:, None, None] * np.ones((4, 2, 2))
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    a = simulate_events(gray, np.arange(4.0))
    b = simulate_events(rgb, np.arange(4.0))
    assert a.same_events(b)
