import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import dead_time_ref, detector_ref
from spadrng.source import (
    AFTERPULSE,
    LINOSPAD_CODES,
    TRUE,
    ArrayConfig,
    DetectorModel,
    PhotonEventStream,
    SimConfig,
    TdcProfile,
    _poisson_ticks,
    apply_detector,
    default_pixel_rates,
    gen_poisson_arrivals,
    make_rng,
    merge_streams,
    neighbor_crosstalk,
    simulate_array,
)


def stream(ts, n_ticks=None, tick=1e-9):
    ts = np.asarray(ts, dtype=np.int64)
    return PhotonEventStream(ts, tick, int(n_ticks or (ts.max() + 1 if ts.size else 0)))


class TestSimConfig:
    @pytest.mark.parametrize(
        "kwargs, field",
        [
            (dict(photon_rate=0, duration=1, tick=1e-9), "photon_rate"),
            (dict(photon_rate=1e3, duration=-1, tick=1e-9), "duration"),
            (dict(photon_rate=1e3, duration=1, tick=0), "tick"),
            (dict(photon_rate=2e9, duration=1, tick=1e-9), "photon_rate"),
        ],
    )
    def test_rejects(self, kwargs, field):
        with pytest.raises(ValueError, match=field):
            SimConfig(**kwargs)

    def test_n_ticks_tolerates_float_noise(self):
        assert SimConfig(1e3, 10.0, 1e-9).n_ticks == 10_000_000_000


class TestPoisson:
    def test_zero_duration_is_empty(self):
        s = gen_poisson_arrivals(SimConfig(1e5, 0.0, 1e-9))
        assert len(s) == 0 and s.n_ticks == 0

    def test_deterministic(self):
        a = gen_poisson_arrivals(SimConfig(2e5, 0.05, 1e-9, seed=3))
        b = gen_poisson_arrivals(SimConfig(2e5, 0.05, 1e-9, seed=3))
        c = gen_poisson_arrivals(SimConfig(2e5, 0.05, 1e-9, seed=4))
        assert np.array_equal(a.events, b.events)
        assert not np.array_equal(a.events[:50], c.events[:50])

    def test_count_and_gaps(self):
        s = gen_poisson_arrivals(SimConfig(2e5, 1.0, 1e-9, seed=1))
        # count within 5 sigma of the mean
        assert abs(len(s) - 2e5) < 5 * math.sqrt(2e5)
        gaps = np.diff(s.events) * 1e-9
        assert stats.kstest(gaps, "expon", args=(0, 1 / 2e5)).pvalue > 1e-3
        assert s.events[0] >= 1 and s.events[-1] <= s.n_ticks

    def test_per_tick_occupancy(self):
        # each tick holds an arrival with probability 1 - exp(-rate*tick)
        rng = np.random.default_rng(0)
        t = _poisson_ticks(0.3, 1.0, 200_000, rng)
        p = -math.expm1(-0.3)
        assert abs(t.size / 200_000 - p) < 5 * math.sqrt(p * (1 - p) / 200_000)


class TestDetector:
    def test_spec_example(self):
        out = apply_detector(stream([0, 1, 5], 10), DetectorModel(3, 1), seed=0)
        assert out.events.tolist() == [0, 5]

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            (dict(dead_time=5, pulse_width=0), "pulse_width"),
            (dict(dead_time=5, pulse_width=5), "pulse_width"),
            (dict(dead_time=5, pulse_width=1, afterpulse_prob=0.1, afterpulse_window=3), "afterpulse_window"),
            (dict(dead_time=5, pulse_width=1, afterpulse_window=9, afterpulse_prob=1.0), "afterpulse_prob"),
            (dict(dead_time=5, pulse_width=1, dark_rate=-1.0), "dark_rate"),
        ],
    )
    def test_rejects(self, kwargs, field):
        with pytest.raises(ValueError, match=field):
            DetectorModel(**kwargs)

    @given(st.lists(st.integers(1, 400), max_size=60, unique=True), st.integers(2, 30))
    def test_dead_time_matches_sequential_filter(self, ts, dead):
        ts = sorted(ts)
        out = apply_detector(stream(ts, 401), DetectorModel(dead, 1), seed=0)
        assert out.events.tolist() == dead_time_ref(ts, dead)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.integers(1, 3000), min_size=1, max_size=80, unique=True),
        st.integers(2, 40),
        st.integers(0, 60),
        st.floats(0.05, 0.9),
        st.integers(0, 2**32),
    )
    def test_afterpulses_match_event_driven_reference(self, ts, dead, extra, prob, seed):
        ts = sorted(ts)
        window = dead + 1 + extra
        n_ticks = 3100
        model = DetectorModel(dead, 1, prob, window)
        out = apply_detector(stream(ts, n_ticks), model, seed)
        rng = make_rng(seed, 1)
        spawn = rng.random(len(ts)) < prob
        offsets = rng.integers(dead + 1, window + 1, size=len(ts))
        ref_t, ref_k = detector_ref(ts, spawn, offsets, dead, n_ticks)
        assert out.events.tolist() == ref_t
        assert (out.truth_labels == AFTERPULSE).astype(int).tolist() == ref_k

    def test_afterpulse_fraction_and_spacing(self):
        src = gen_poisson_arrivals(SimConfig(1e5, 0.5, 1e-9, seed=2))
        out = apply_detector(src, DetectorModel(30, 5, 0.2, 180), seed=2)
        assert np.diff(out.events).min() >= 30
        counts = out.label_counts()
        frac = counts["afterpulse"] / counts["true"]
        # a few afterpulses are lost to dead time behind a later photon
        assert 0.17 < frac < 0.2

    def test_dark_counts_add_rate(self):
        src = stream([], 10**9)
        out = apply_detector(src, DetectorModel(30, 5, dark_rate=1e3), seed=5)
        assert abs(len(out) - 1000) < 5 * math.sqrt(1000)
        assert set(out.truth_labels.tolist()) <= {TRUE}

    def test_merge_keeps_first_on_tie(self):
        a = PhotonEventStream(np.array([1, 5]), 1e-9, 10, np.array([0, 0]))
        b = PhotonEventStream(np.array([5, 7]), 1e-9, 10, np.array([2, 2]))
        m = merge_streams([a, b])
        assert m.events.tolist() == [1, 5, 7]
        assert m.truth_labels.tolist() == [0, 0, 2]

    def test_stream_rejects_unsorted(self):
        with pytest.raises(ValueError, match="increasing"):
            stream([3, 3])


class TestTdcProfile:
    def test_nonlinear_profile(self):
        p = TdcProfile.nonlinear(6.8)
        assert p.entropy == pytest.approx(6.8, abs=1e-9)
        assert p.missing_codes == frozenset(range(8))
        assert p.bin_weights.max() < 4 / LINOSPAD_CODES

    def test_uniform_entropy(self):
        assert TdcProfile.uniform().entropy == pytest.approx(math.log2(140))

    @pytest.mark.parametrize("w", [np.ones(139) / 139, np.full(140, 1 / 139)])
    def test_rejects(self, w):
        with pytest.raises(ValueError, match="bin_weights"):
            TdcProfile(w)


class TestArray:
    def test_pixel_rates(self):
        r = default_pixel_rates(390e3)
        assert len(r) == 64 and np.mean(r) == pytest.approx(390e3)
        assert r[5] > r[4] and r[0] > r[63]

    def test_crosstalk_map_shape(self):
        m = neighbor_crosstalk(4, (0.1, 0.05))
        assert m == (((1, 0.1), (2, 0.05)), ((2, 0.1), (3, 0.05)), ((3, 0.1),), ())

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            (dict(n_tdc=48), "n_tdc"),
            (dict(per_pixel_rate=(1.0,) * 3), "per_pixel_rate"),
            (dict(frame_time=1.0), "frame_time"),
            (dict(frame_time=1e-9), "frame_time"),
        ],
    )
    def test_config_rejects(self, kwargs, field):
        base = dict(per_pixel_rate=(1e5,) * kwargs.get("n_tdc", 64), detector=DetectorModel(2240, 56))
        base.update(kwargs)
        with pytest.raises(ValueError, match=field):
            ArrayConfig(**base)

    def small_array(self, rate, **kw):
        return ArrayConfig(
            per_pixel_rate=(rate,) * 4, detector=DetectorModel(2240, 56), n_pixels=16, n_tdc=4, **kw
        )

    def test_frames_and_codes(self):
        arr = self.small_array(3e5, tdc_profile=TdcProfile.nonlinear())
        fs = simulate_array(arr, SimConfig(1.0, 20 * 320e-6, arr.tick, seed=1))
        assert len(fs) == 20 and fs.n_pixels == 4 and fs.frame_cycles == 128000
        assert fs.coarse.min() >= 0 and fs.coarse.max() < 128000
        assert not set(fs.fine.tolist()) & set(range(8))
        frame = fs[3]
        assert frame.frame_index == 3 and len(frame.coarse) == 4
        # about rate * frame_time tags per pixel and frame, minus dead-time losses
        assert 90 < fs.coarse.size / (20 * 4) < 100

    def test_buffer_cap_and_saturation(self):
        # 400 kcps over 320 us averages 128 tags; a 100-tag buffer fills every frame
        arr = self.small_array(4e5, buffer_cap=100)
        fs = simulate_array(arr, SimConfig(1.0, 5 * 320e-6, arr.tick, seed=2))
        assert all(fr.counts().max() <= 100 for fr in fs)
        assert fs.saturated.all()

    def test_crosstalk_injects_coincidences(self):
        arr = self.small_array(3e5, crosstalk_map=neighbor_crosstalk(4, (0.3,)))
        fs = simulate_array(arr, SimConfig(1.0, 10 * 320e-6, arr.tick, seed=3))
        clean = self.small_array(3e5)
        fs0 = simulate_array(clean, SimConfig(1.0, 10 * 320e-6, clean.tick, seed=3))
        # pixel 0 has no source of crosstalk, so it is unchanged
        assert np.array_equal(fs.pixel_tags(0)[1], fs0.pixel_tags(0)[1])
        assert not np.array_equal(fs.pixel_tags(1)[1], fs0.pixel_tags(1)[1])
