"""Photon arrival, detector and SPAD-array simulation on an integer tick grid.

All event times are integer multiples of a configured tick. A stream of
``n`` ticks covers the half-open time interval ``(0, n * tick]``; an event at
tick ``t`` happened during ``((t - 1) * tick, t * tick]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

TRUE = 0
AFTERPULSE = 1
CROSSTALK = 2
LABEL_NAMES = ("true", "afterpulse", "crosstalk")

# LinoSPAD TDC: 400 MHz clock split into 140 codes.
LINOSPAD_CLOCK = 2.5e-9
LINOSPAD_CODES = 140
LINOSPAD_TICK = LINOSPAD_CLOCK / LINOSPAD_CODES
# The timestamp buffer counts at most 2**28 sub-resolution bins.
MAX_FRAME_TICKS = 2**28


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *keys]))


def n_ticks_for(duration: float, tick: float) -> int:
    # tolerate float noise such as 10 / 1e-9 = 9999999999.999998
    return int(math.floor(duration / tick + 1e-6))


@dataclass(frozen=True)
class SimConfig:
    photon_rate: float  # events / s
    duration: float  # s
    tick: float  # s
    seed: int = 0

    def __post_init__(self):
        if not self.photon_rate > 0:
            raise ValueError(f"photon_rate: must be > 0, got {self.photon_rate}")
        if not self.duration >= 0:
            raise ValueError(f"duration: must be >= 0, got {self.duration}")
        if not self.tick > 0:
            raise ValueError(f"tick: must be > 0, got {self.tick}")
        if self.photon_rate * self.tick >= 1:
            raise ValueError(
                f"photon_rate * tick = {self.photon_rate * self.tick:g} >= 1: "
                "source saturates the tick grid"
            )

    @property
    def n_ticks(self) -> int:
        return n_ticks_for(self.duration, self.tick)


@dataclass(frozen=True)
class DetectorModel:
    """SPAD non-idealities. Times are in ticks of the stream being filtered."""

    dead_time: int
    pulse_width: int
    afterpulse_prob: float = 0.0
    afterpulse_window: int = 0
    dark_rate: float = 0.0  # events / s

    def __post_init__(self):
        if self.pulse_width < 1:
            raise ValueError(f"pulse_width: must be >= 1 tick, got {self.pulse_width}")
        if not self.pulse_width < self.dead_time:
            raise ValueError(
                f"pulse_width: must be < dead_time ({self.dead_time}), got {self.pulse_width}"
            )
        if self.afterpulse_prob > 0 and self.afterpulse_window < self.dead_time:
            raise ValueError(
                f"afterpulse_window: must be >= dead_time ({self.dead_time}), "
                f"got {self.afterpulse_window}"
            )
        if not 0.0 <= self.afterpulse_prob < 1.0:
            raise ValueError(f"afterpulse_prob: must be in [0, 1), got {self.afterpulse_prob}")
        if self.dark_rate < 0:
            raise ValueError(f"dark_rate: must be >= 0, got {self.dark_rate}")


@dataclass(frozen=True, eq=False)
class PhotonEventStream:
    events: np.ndarray  # int64 ticks, strictly increasing
    tick: float
    n_ticks: int  # span covered by the stream
    truth_labels: np.ndarray | None = None  # int8, TRUE / AFTERPULSE / CROSSTALK

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=np.int64)
        object.__setattr__(self, "events", ev)
        if ev.size > 1 and np.any(np.diff(ev) <= 0):
            raise ValueError("events: timestamps must be strictly increasing")
        if self.truth_labels is not None:
            lab = np.asarray(self.truth_labels, dtype=np.int8)
            if lab.shape != ev.shape:
                raise ValueError("truth_labels: length must match events")
            object.__setattr__(self, "truth_labels", lab)

    def __len__(self) -> int:
        return int(self.events.size)

    @property
    def duration(self) -> float:
        return self.n_ticks * self.tick

    @property
    def rate(self) -> float:
        return len(self) / self.duration if self.n_ticks else 0.0

    def label_counts(self) -> dict[str, int]:
        if self.truth_labels is None:
            return {}
        counts = np.bincount(self.truth_labels, minlength=3)
        return {name: int(c) for name, c in zip(LABEL_NAMES, counts)}


def _poisson_ticks(rate: float, tick: float, n_ticks: int, rng: np.random.Generator) -> np.ndarray:
    """Poisson arrivals quantized to ticks (at most one per tick).

    Gaps are ceil(Exponential), i.e. geometric with success probability
    1 - exp(-rate * tick), so each tick independently holds an arrival with
    that probability.
    """
    if n_ticks <= 0 or rate <= 0:
        return np.empty(0, dtype=np.int64)
    p = -math.expm1(-rate * tick)
    expected = n_ticks * p
    chunk = int(expected + 6.0 * math.sqrt(expected) + 64)
    parts = []
    last = 0
    while last <= n_ticks:
        t = last + np.cumsum(rng.geometric(p, size=chunk), dtype=np.int64)
        parts.append(t)
        last = int(t[-1])
    out = np.concatenate(parts)
    return out[: np.searchsorted(out, n_ticks, side="right")]


def gen_poisson_arrivals(cfg: SimConfig) -> PhotonEventStream:
    """Ideal Poissonian source over ``cfg.duration``; deterministic given ``cfg.seed``."""
    rng = make_rng(cfg.seed, 0)
    events = _poisson_ticks(cfg.photon_rate, cfg.tick, cfg.n_ticks, rng)
    return PhotonEventStream(
        events, cfg.tick, cfg.n_ticks, np.full(events.size, TRUE, dtype=np.int8)
    )


def _resolve_dead_time(t, parent, dead_time):
    """Accept/reject sorted candidates under non-paralyzable dead time.

    Afterpulse candidates (``parent >= 0``) only exist if their parent was
    accepted. A candidate at least ``dead_time`` after its predecessor is
    accepted whatever happened before, so only clusters of closely spaced
    candidates need the sequential walk.
    """
    n = t.size
    accepted = np.zeros(n, dtype=bool)
    if n == 0:
        return accepted
    isolated = np.empty(n, dtype=bool)
    isolated[0] = True
    isolated[1:] = np.diff(t) >= dead_time
    primary = parent < 0
    accepted[isolated & primary] = True

    starts = np.flatnonzero(isolated)
    ends = np.append(starts[1:], n)
    for s, e in zip(starts[ends - starts > 1].tolist(), ends[ends - starts > 1].tolist()):
        last = None
        for k in range(s, e):
            p = parent[k]
            if p >= 0 and not accepted[p]:
                continue
            tk = t[k]
            if last is None or tk - last >= dead_time:
                accepted[k] = True
                last = tk
    lone_ap = isolated & ~primary
    accepted[lone_ap] = accepted[parent[lone_ap]]
    return accepted


def apply_detector(stream: PhotonEventStream, model: DetectorModel, seed: int) -> PhotonEventStream:
    """Pass arrivals through a SPAD: dark counts, dead time and afterpulsing.

    Dark counts are merged into the arrivals first. Every accepted
    non-afterpulse event spawns one afterpulse with probability
    ``afterpulse_prob`` at a uniform offset in ``(dead_time,
    afterpulse_window]``; afterpulses are themselves subject to dead time.
    """
    rng = make_rng(seed, 1)
    labels = stream.truth_labels
    if labels is None:
        labels = np.full(len(stream), TRUE, dtype=np.int8)
    times, labs = stream.events, labels
    if model.dark_rate > 0:
        dark = _poisson_ticks(model.dark_rate, stream.tick, stream.n_ticks, rng)
        times = np.concatenate([times, dark])
        labs = np.concatenate([labs, np.full(dark.size, TRUE, dtype=np.int8)])
        order = np.argsort(times, kind="stable")
        times, labs = times[order], labs[order]

    n = times.size
    window = model.afterpulse_window - model.dead_time
    if model.afterpulse_prob > 0 and window > 0 and n:
        spawn = rng.random(n) < model.afterpulse_prob
        offsets = rng.integers(model.dead_time + 1, model.afterpulse_window + 1, size=n)
        ap_parent = np.flatnonzero(spawn)
        ap_t = times[ap_parent] + offsets[ap_parent]
        keep = ap_t <= stream.n_ticks
        ap_parent, ap_t = ap_parent[keep], ap_t[keep]
    else:
        ap_parent = np.empty(0, dtype=np.int64)
        ap_t = np.empty(0, dtype=np.int64)

    cand_t = np.concatenate([times, ap_t])
    cand_parent = np.concatenate([np.full(n, -1, dtype=np.int64), ap_parent])
    cand_lab = np.concatenate([labs, np.full(ap_t.size, AFTERPULSE, dtype=np.int8)])
    order = np.argsort(cand_t, kind="stable")
    # parents index the primary block, which keeps its positions under the sort
    # only if we remap; do it explicitly
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    cand_t, cand_lab = cand_t[order], cand_lab[order]
    par = cand_parent[order]
    par = np.where(par >= 0, rank[np.maximum(par, 0)], -1)

    acc = _resolve_dead_time(cand_t, par, model.dead_time)
    return PhotonEventStream(cand_t[acc], stream.tick, stream.n_ticks, cand_lab[acc])


def merge_streams(streams: Sequence[PhotonEventStream]) -> PhotonEventStream:
    """Union of streams sharing a tick grid; coincident ticks keep the first stream's event."""
    first = streams[0]
    times = np.concatenate([s.events for s in streams])
    labs = np.concatenate(
        [
            s.truth_labels if s.truth_labels is not None else np.zeros(len(s), np.int8)
            for s in streams
        ]
    )
    order = np.argsort(times, kind="stable")
    times, labs = times[order], labs[order]
    keep = np.ones(times.size, dtype=bool)
    keep[1:] = np.diff(times) > 0
    return PhotonEventStream(times[keep], first.tick, first.n_ticks, labs[keep])


# ---------------------------------------------------------------------------
# SPAD array


@dataclass(frozen=True, eq=False)
class TdcProfile:
    bin_weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.bin_weights, dtype=float)
        object.__setattr__(self, "bin_weights", w)
        if w.shape != (LINOSPAD_CODES,):
            raise ValueError(f"bin_weights: need exactly {LINOSPAD_CODES} codes, got {w.shape}")
        if np.any(w < 0):
            raise ValueError("bin_weights: must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"bin_weights: must sum to 1, got {w.sum()!r}")

    @property
    def missing_codes(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.bin_weights == 0).tolist())

    @property
    def entropy(self) -> float:
        w = self.bin_weights[self.bin_weights > 0]
        return float(-(w * np.log2(w)).sum())

    @classmethod
    def from_counts(cls, counts) -> "TdcProfile":
        c = np.asarray(counts, dtype=float)
        w = c / c.sum()
        # absorb rounding so the sum is 1 to the last ulp
        w[np.argmax(w)] += 1.0 - w.sum()
        return cls(w)

    @classmethod
    def uniform(cls) -> "TdcProfile":
        return cls.from_counts(np.ones(LINOSPAD_CODES))

    @classmethod
    def nonlinear(cls, target_entropy: float = 6.8, missing: int = 8) -> "TdcProfile":
        """Deterministic FPGA-like code density with empty low codes.

        Widths follow a carry-chain pattern (period 4 within 35 blocks) plus a
        few wide bins; the modulation depth is solved so that the code
        entropy equals ``target_entropy`` bits.
        """
        from scipy.optimize import brentq

        c = np.arange(LINOSPAD_CODES)
        shape = (
            0.9 * np.cos(2 * np.pi * c / 4 + 0.4)
            + 0.5 * np.sin(2 * np.pi * c / 35 + 1.0)
            + 0.3 * np.cos(2 * np.pi * c / 140)
        )
        shape[[23, 61, 62, 97, 118]] += 1.5
        live = c >= missing

        def entropy_at(depth):
            w = np.where(live, np.exp(depth * shape), 0.0)
            w /= w.sum()
            nz = w[w > 0]
            return -(nz * np.log2(nz)).sum() - target_entropy

        if entropy_at(0.0) < 0:
            raise ValueError(f"target_entropy {target_entropy} unreachable with {missing} missing codes")
        depth = brentq(entropy_at, 0.0, 20.0, xtol=1e-14)
        return cls.from_counts(np.where(live, np.exp(depth * shape), 0.0))


def default_pixel_rates(mean_rate: float, n: int = 64, outliers=(5, 22, 40, 57)) -> tuple[float, ...]:
    """Descending efficiency trend with a few hot pixels, scaled to ``mean_rate``."""
    shape = 1.3 - 0.6 * np.arange(n) / max(n - 1, 1)
    for i in outliers:
        if i < n:
            shape[i] *= 2.0
    return tuple(float(r) for r in mean_rate * shape / shape.mean())


def neighbor_crosstalk(n: int, probs=(0.02, 0.015)) -> tuple[tuple[tuple[int, float], ...], ...]:
    """One-directional injection from pixel i into i+1, i+2, ... with ``probs``."""
    return tuple(
        tuple((i + d, p) for d, p in enumerate(probs, start=1) if i + d < n) for i in range(n)
    )


@dataclass(frozen=True, eq=False)
class ArrayConfig:
    per_pixel_rate: tuple[float, ...]  # events / s, one per active (TDC-served) pixel
    detector: DetectorModel  # in TDC sub-resolution ticks
    tdc_profile: TdcProfile = field(default_factory=TdcProfile.uniform)
    crosstalk_map: tuple = ()  # per pixel: ((neighbor, probability), ...)
    n_pixels: int = 256
    n_tdc: int = 64
    frame_time: float = 320e-6  # s
    buffer_cap: int = 512
    clock_period: float = LINOSPAD_CLOCK
    crosstalk_jitter: int = 3  # ticks, uniform +-

    def __post_init__(self):
        object.__setattr__(self, "per_pixel_rate", tuple(float(r) for r in self.per_pixel_rate))
        if self.n_pixels % self.n_tdc:
            raise ValueError(f"n_tdc: {self.n_tdc} does not divide n_pixels {self.n_pixels}")
        if len(self.per_pixel_rate) != self.n_tdc:
            raise ValueError(
                f"per_pixel_rate: need {self.n_tdc} rates (one per TDC), got {len(self.per_pixel_rate)}"
            )
        if any(r < 0 for r in self.per_pixel_rate):
            raise ValueError("per_pixel_rate: rates must be >= 0")
        if self.crosstalk_map and len(self.crosstalk_map) != self.n_tdc:
            raise ValueError(f"crosstalk_map: need {self.n_tdc} entries or none")
        for src, links in enumerate(self.crosstalk_map):
            for dst, p in links:
                if not (0 <= dst < self.n_tdc and dst != src and 0 <= p <= 1):
                    raise ValueError(f"crosstalk_map[{src}]: bad link ({dst}, {p})")
        if self.buffer_cap < 1:
            raise ValueError("buffer_cap: must be >= 1")
        if self.frame_ticks > MAX_FRAME_TICKS:
            raise ValueError(
                f"frame_time: {self.frame_time} s exceeds the {MAX_FRAME_TICKS * self.tick * 1e3:.2f} ms "
                "timestamp range"
            )
        if self.frame_ticks % LINOSPAD_CODES:
            raise ValueError("frame_time: must be a whole number of clock cycles")

    @property
    def tick(self) -> float:
        return self.clock_period / LINOSPAD_CODES

    @property
    def frame_ticks(self) -> int:
        return int(round(self.frame_time / self.tick))

    @property
    def frame_cycles(self) -> int:
        return self.frame_ticks // LINOSPAD_CODES

    @property
    def n_active(self) -> int:
        return self.n_tdc


@dataclass(frozen=True, eq=False)
class TagFrame:
    frame_index: int
    coarse: tuple[np.ndarray, ...]  # per pixel, clock-cycle index within the frame
    fine: tuple[np.ndarray, ...]  # per pixel, TDC code 0..139
    saturated_pixels: frozenset[int] = frozenset()

    @property
    def n_pixels(self) -> int:
        return len(self.coarse)

    def counts(self) -> np.ndarray:
        return np.array([c.size for c in self.coarse])


class FrameSet(Sequence):
    """Frames stored as flat tag arrays; indexing yields :class:`TagFrame` views."""

    def __init__(self, frame, pixel, coarse, fine, saturated, n_pixels, frame_cycles, clock_period=LINOSPAD_CLOCK):
        self.frame = np.asarray(frame, dtype=np.int64)
        self.pixel = np.asarray(pixel, dtype=np.int64)
        self.coarse = np.asarray(coarse, dtype=np.int64)
        self.fine = np.asarray(fine, dtype=np.int64)
        self.saturated = np.asarray(saturated, dtype=bool)  # (n_frames, n_pixels)
        self.n_pixels = int(n_pixels)
        self.frame_cycles = int(frame_cycles)
        self.clock_period = float(clock_period)
        order = np.lexsort((self.coarse, self.pixel, self.frame))
        if np.any(order != np.arange(order.size)):
            self.frame, self.pixel = self.frame[order], self.pixel[order]
            self.coarse, self.fine = self.coarse[order], self.fine[order]
        key = self.frame * self.n_pixels + self.pixel
        self._bounds = np.searchsorted(key, np.arange(len(self) * self.n_pixels + 1))

    @property
    def frame_time(self) -> float:
        return self.frame_cycles * self.clock_period

    def __len__(self) -> int:
        return int(self.saturated.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        b = self._bounds[i * self.n_pixels : (i + 1) * self.n_pixels + 1]
        return TagFrame(
            i,
            tuple(self.coarse[b[p] : b[p + 1]] for p in range(self.n_pixels)),
            tuple(self.fine[b[p] : b[p + 1]] for p in range(self.n_pixels)),
            frozenset(np.flatnonzero(self.saturated[i]).tolist()),
        )

    def __iter__(self) -> Iterator[TagFrame]:
        for i in range(len(self)):
            yield self[i]

    def pixel_tags(self, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(frame, coarse, fine) of every tag of pixel ``p``, in time order."""
        sel = self.pixel == p
        return self.frame[sel], self.coarse[sel], self.fine[sel]

    @classmethod
    def from_frames(cls, frames: Sequence[TagFrame], frame_cycles: int, clock_period=LINOSPAD_CLOCK) -> "FrameSet":
        n_pix = frames[0].n_pixels if len(frames) else 0
        f, p, c, fi = [], [], [], []
        sat = np.zeros((len(frames), n_pix), dtype=bool)
        for k, fr in enumerate(frames):
            for q in range(n_pix):
                m = fr.coarse[q].size
                f.append(np.full(m, k))
                p.append(np.full(m, q))
                c.append(fr.coarse[q])
                fi.append(fr.fine[q])
            sat[k, list(fr.saturated_pixels)] = True
        cat = lambda xs: np.concatenate(xs) if xs else np.empty(0, np.int64)  # noqa: E731
        return cls(cat(f), cat(p), cat(c), cat(fi), sat, n_pix, frame_cycles, clock_period)


def simulate_array(array: ArrayConfig, sim: SimConfig) -> FrameSet:
    """Simulate ``floor(sim.duration / frame_time)`` back-to-back frames.

    ``sim.photon_rate`` is ignored in favour of ``array.per_pixel_rate``; the
    tick is the TDC sub-resolution. Each pixel draws from its own generator
    keyed by ``(seed, pixel)`` so pixels can be simulated in any order.
    Crosstalk: an accepted primary detection of pixel i injects a fake event
    into each listed neighbour with the listed probability, at the same time
    up to ``crosstalk_jitter`` ticks.
    """
    n_frames = int(math.floor(sim.duration / array.frame_time + 1e-9))
    span = n_frames * array.frame_ticks
    tick = array.tick
    n = array.n_active

    raw = []
    first_pass = []
    for p in range(n):
        t = _poisson_ticks(array.per_pixel_rate[p], tick, span, make_rng(sim.seed, 2, p))
        s = PhotonEventStream(t, tick, span, np.full(t.size, TRUE, np.int8))
        raw.append(s)
        if array.crosstalk_map:
            first_pass.append(apply_detector(s, array.detector, _pixel_seed(sim.seed, p)))

    injected: list[list[np.ndarray]] = [[] for _ in range(n)]
    for src, links in enumerate(array.crosstalk_map):
        det = first_pass[src]
        origin = det.events[det.truth_labels == TRUE]
        for dst, prob in links:
            rng = make_rng(sim.seed, 3, src, dst)
            hit = origin[rng.random(origin.size) < prob]
            j = rng.integers(-array.crosstalk_jitter, array.crosstalk_jitter + 1, size=hit.size)
            injected[dst].append(np.clip(hit + j, 1, span))

    frame = []
    pixel = []
    coarse = []
    fine = []
    saturated = np.zeros((n_frames, n), dtype=bool)
    cdf = np.cumsum(array.tdc_profile.bin_weights)
    for p in range(n):
        s = raw[p]
        if injected[p]:
            xt = np.unique(np.concatenate(injected[p]))
            s = merge_streams(
                [s, PhotonEventStream(xt, tick, span, np.full(xt.size, CROSSTALK, np.int8))]
            )
        det = apply_detector(s, array.detector, _pixel_seed(sim.seed, p))
        t0 = det.events - 1  # tick t covers ((t-1), t]
        fr = t0 // array.frame_ticks
        cyc = (t0 % array.frame_ticks) // LINOSPAD_CODES
        # the buffer keeps the first buffer_cap tags of each frame; a frame
        # whose buffer filled is flagged, so readers can infer it from the count
        start = np.searchsorted(fr, fr, side="left")
        rank = np.arange(fr.size) - start
        keep = rank < array.buffer_cap
        full = np.unique(fr[rank == array.buffer_cap - 1])
        saturated[full, p] = True
        fr, cyc = fr[keep], cyc[keep]
        u = make_rng(sim.seed, 4, p).random(fr.size)
        code = np.minimum(np.searchsorted(cdf, u, side="right"), LINOSPAD_CODES - 1)
        frame.append(fr)
        pixel.append(np.full(fr.size, p))
        coarse.append(cyc)
        fine.append(code)
    cat = lambda xs: np.concatenate(xs) if xs else np.empty(0, np.int64)  # noqa: E731
    return FrameSet(
        cat(frame), cat(pixel), cat(coarse), cat(fine), saturated, n, array.frame_cycles, array.clock_period
    )


def _pixel_seed(seed: int, p: int) -> int:
    return int(make_rng(seed, 5, p).integers(0, 2**63))
