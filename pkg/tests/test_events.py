import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evdecomp.errors import InputError
from evdecomp.events import (ContrastThresholds, Event, EventStream, Frame, FrameSequence,
                             integrate_events, integrate_pixel, log_intensity, simulate_events,
                             window_mask)

TH = ContrastThresholds(0.2, 0.2)


def stream_of(rows, w=4, h=4, t_begin=None, t_end=None):
    rows = sorted(rows)
    return EventStream([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
                       [r[3] for r in rows], w, h, t_begin, t_end)


def ramp_frames(total_log, n=2, pixels=(1, 1), base=0.1, eps=1e-3):
    # log intensity ramps linearly by total_log over [0, 1]
    t = np.linspace(0.0, 1.0, n)
    lvl = np.log(base + eps) + total_log * t
    vals = np.exp(lvl) - eps
    return FrameSequence(np.broadcast_to(vals[:, None, None], (n,) + pixels).copy(), t)


class TestTypes:
    def test_event_rejects_bad_polarity(self):
        with pytest.raises(InputError):
            Event(0, 0, 0.0, 0)

    def test_stream_must_be_sorted(self):
        with pytest.raises(InputError):
            EventStream([0.2, 0.1], [0, 0], [0, 0], [1, 1], 2, 2)

    def test_stream_rejects_out_of_bounds(self):
        with pytest.raises(InputError):
            EventStream([0.1], [2], [0], [1], 2, 2)

    def test_stream_rejects_events_outside_span(self):
        with pytest.raises(InputError):
            EventStream([0.5], [0], [0], [1], 2, 2, t_begin=0.0, t_end=0.4)

    def test_stream_is_immutable(self):
        s = stream_of([(0.1, 0, 0, 1)])
        with pytest.raises(AttributeError):
            s.width = 3
        with pytest.raises(ValueError):
            s.t[0] = 1.0

    def test_from_events_round_trip(self):
        evs = [Event(1, 2, 0.1, 1), Event(0, 0, 0.3, -1)]
        s = EventStream.from_events(evs, 4, 4)
        assert list(s) == evs

    def test_frame_validation(self):
        with pytest.raises(InputError):
            Frame(np.full((2, 2), -0.1))
        with pytest.raises(InputError):
            Frame(np.full((2, 2), np.nan))
        with pytest.raises(InputError):
            Frame(np.zeros((2, 2, 2)))

    def test_frame_luminance(self):
        f = Frame(np.ones((2, 3, 3)) * [0.2, 0.4, 0.6])
        assert f.channels == 3 and f.shape == (2, 3)
        assert np.allclose(f.luminance(), 0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6)


class TestWindows:
    def test_half_open(self):
        t = np.array([0.0, 0.5, 1.0])
        assert window_mask(t, 0.0, 0.5).tolist() == [True, False, False]
        assert window_mask(t, 0.5, 1.0).tolist() == [False, True, False]

    def test_last_window_closes_at_stream_end(self):
        t = np.array([0.0, 0.5, 1.0])
        assert window_mask(t, 0.5, 1.0, t_end=1.0).tolist() == [False, True, True]

    def test_adjacent_windows_partition(self, rng):
        t = np.sort(rng.uniform(0, 1, 200))
        t[-1] = 1.0
        s = EventStream(t, rng.integers(0, 4, 200), rng.integers(0, 4, 200),
                        rng.choice([-1, 1], 200), 4, 4, 0.0, 1.0)
        edges = np.linspace(0, 1, 7)
        total = sum(s.mask(a, b).sum() for a, b in zip(edges[:-1], edges[1:]))
        assert total == len(s)


class TestIntegratePixel:
    def test_empty_window(self):
        s = stream_of([(0.1, 0, 0, 1)])
        assert integrate_pixel(s, 1, 1, 0.0, 1.0, TH) == 0.0

    def test_three_up_one_down(self):
        s = stream_of([(0.1, 2, 1, 1), (0.2, 2, 1, 1), (0.3, 2, 1, -1), (0.4, 2, 1, 1)])
        assert integrate_pixel(s, 2, 1, 0.0, 1.0, TH) == pytest.approx(0.4, abs=1e-15)

    def test_asymmetric_thresholds(self):
        s = stream_of([(0.1, 0, 0, 1), (0.2, 0, 0, 1), (0.3, 0, 0, -1), (0.4, 0, 0, -1),
                       (0.5, 0, 0, -1)])
        v = integrate_pixel(s, 0, 0, 0.0, 1.0, ContrastThresholds(0.25, 0.20))
        assert v == pytest.approx(-0.10, abs=1e-15)

    def test_errors(self):
        s = stream_of([(0.1, 0, 0, 1)])
        with pytest.raises(InputError):
            integrate_pixel(s, 4, 0, 0.0, 1.0, TH)
        with pytest.raises(InputError):
            integrate_pixel(s, 0, 0, 1.0, 0.0, TH)

    def test_matches_dense_integration(self, rng):
        n = 300
        s = EventStream(np.sort(rng.uniform(0, 1, n)), rng.integers(0, 4, n),
                        rng.integers(0, 4, n), rng.choice([-1, 1], n), 4, 4, 0.0, 1.0)
        dense = integrate_events(s, 0.2, 0.7, TH)
        for y in range(4):
            for x in range(4):
                assert dense[y, x] == integrate_pixel(s, x, y, 0.2, 0.7, TH)


class TestSimulator:
    def test_constant_video_is_silent(self):
        f = FrameSequence(np.full((3, 5, 5), 0.4), [0.0, 0.5, 1.0])
        assert len(simulate_events(f, TH)) == 0

    def test_linear_ramp_crossing_times(self):
        s = simulate_events(ramp_frames(0.75), ContrastThresholds(0.2, 0.2))
        assert s.p.tolist() == [1, 1, 1]
        assert np.allclose(s.t, [0.2 / 0.75, 0.4 / 0.75, 0.6 / 0.75], atol=1e-12)

    def test_brightening_emits_only_positive(self):
        s = simulate_events(ramp_frames(1.3, n=5, pixels=(2, 3)), TH)
        assert len(s) > 0 and np.all(s.p == 1)

    def test_rejects_bad_input(self):
        with pytest.raises(InputError):
            simulate_events(FrameSequence(np.ones((2, 2, 2)), [0.0, 0.0]), TH)
        with pytest.raises(InputError):
            simulate_events(FrameSequence(np.ones((1, 2, 2)), [0.0]), TH)
        with pytest.raises(InputError):
            simulate_events(FrameSequence(np.ones((2, 2, 2, 3)), [0.0, 1.0]), TH)

    def test_simultaneous_events_in_row_major_order(self):
        vals = np.stack([np.full((2, 2), 0.1), np.full((2, 2), 0.5)])
        s = simulate_events(FrameSequence(vals, [0.0, 1.0]), TH)
        first = s.t == s.t[0]
        idx = s.y[first] * 2 + s.x[first]
        assert idx.tolist() == [0, 1, 2, 3]

    def test_deterministic(self, scene_data):
        frames, stream = scene_data["translating_gaussian"]
        again = simulate_events(frames, TH)
        for a in ("t", "x", "y", "p"):
            assert np.array_equal(getattr(again, a), getattr(stream, a))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    def test_round_trip_within_one_threshold(self, seed, c_pos, c_neg):
        rng = np.random.default_rng(seed)
        vals = rng.uniform(0.02, 1.0, (6, 3, 4))
        frames = FrameSequence(vals, np.cumsum(rng.uniform(0.01, 0.2, 6)))
        th = ContrastThresholds(c_pos, c_neg)
        s = simulate_events(frames, th)
        change = log_intensity(vals[-1]) - log_intensity(vals[0])
        e = integrate_events(s, s.t_begin, s.t_end, th)
        assert np.all(np.abs(change - e) < max(c_pos, c_neg))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.8))
    def test_halving_thresholds_never_loses_events(self, seed, c):
        rng = np.random.default_rng(seed)
        vals = rng.uniform(0.02, 1.0, (5, 3, 3))
        frames = FrameSequence(vals, np.arange(5.0))
        a = simulate_events(frames, ContrastThresholds(c, c))
        b = simulate_events(frames, ContrastThresholds(c / 2, c / 2))
        ca = np.bincount(a.y * 3 + a.x, minlength=9)
        cb = np.bincount(b.y * 3 + b.x, minlength=9)
        assert np.all(cb >= ca)
