"""Clock sampling of detector events into binary sequences."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .source import LINOSPAD_CODES, FrameSet, PhotonEventStream


@dataclass(frozen=True, eq=False)
class SampledBitStream:
    """Binary sequence of ``length`` samples stored as the sorted positions of its 1s.

    Raw detector samples are >99% zeros, so positions are far smaller than
    the bits themselves; :meth:`to_bits` and :meth:`packed` give dense views.
    """

    length: int
    ones: np.ndarray  # int64, strictly increasing, all < length
    sample_period: float = 0.0  # seconds; 0 when not clock-derived
    origin: dict = field(default_factory=dict)

    def __post_init__(self):
        ones = np.asarray(self.ones, dtype=np.int64)
        object.__setattr__(self, "ones", ones)
        object.__setattr__(self, "length", int(self.length))
        if ones.size:
            if ones[0] < 0 or ones[-1] >= self.length:
                raise ValueError("ones: positions out of range")
            if ones.size > 1 and np.any(np.diff(ones) <= 0):
                raise ValueError("ones: positions must be strictly increasing")

    def __len__(self) -> int:
        return self.length

    @property
    def n_ones(self) -> int:
        return int(self.ones.size)

    @property
    def p1(self) -> float:
        return self.n_ones / self.length if self.length else 0.0

    def to_bits(self) -> np.ndarray:
        bits = np.zeros(self.length, dtype=np.uint8)
        bits[self.ones] = 1
        return bits

    def packed(self) -> bytes:
        return np.packbits(self.to_bits(), bitorder="little").tobytes()

    @classmethod
    def from_bits(cls, bits, sample_period: float = 0.0, origin: dict | None = None) -> "SampledBitStream":
        b = np.asarray(bits)
        if b.ndim != 1:
            raise ValueError("bits: expected a 1-D sequence")
        return cls(b.size, np.flatnonzero(b), sample_period, dict(origin or {}))

    @classmethod
    def from_string(cls, s: str) -> "SampledBitStream":
        return cls.from_bits(np.frombuffer(s.encode(), dtype=np.uint8) - ord("0"))

    def __str__(self) -> str:
        return "".join(map(str, self.to_bits().tolist()))


def as_stream(bits) -> SampledBitStream:
    if isinstance(bits, SampledBitStream):
        return bits
    if isinstance(bits, str):
        return SampledBitStream.from_string(bits)
    return SampledBitStream.from_bits(np.asarray(bits, dtype=np.uint8))


def concat(streams: Sequence[SampledBitStream]) -> SampledBitStream:
    offsets = np.cumsum([0] + [s.length for s in streams])
    ones = [s.ones + off for s, off in zip(streams, offsets[:-1])]
    period = streams[0].sample_period if streams else 0.0
    return SampledBitStream(
        int(offsets[-1]), np.concatenate(ones) if ones else np.empty(0, np.int64), period
    )


def sample_events(events: PhotonEventStream, sample_period: int, pulse_width: int) -> SampledBitStream:
    """Clock the detector output: bit j is 1 iff a rising edge happened in ((j)T, (j+1)T].

    Each event drives the line high for ``pulse_width`` ticks; an event
    arriving while the line is still high adds no edge. Output length is
    ``floor(n_ticks / sample_period)``.
    """
    if pulse_width < 1:
        raise ValueError(f"pulse_width: must be >= 1 tick, got {pulse_width}")
    if sample_period < 1:
        raise ValueError(f"sample_period: must be >= 1 tick, got {sample_period}")
    if pulse_width >= sample_period:
        warnings.warn(
            f"pulse_width ({pulse_width}) >= sample_period ({sample_period}): "
            "a pulse can hide the edge of its successor",
            stacklevel=2,
        )
    t = events.events
    length = events.n_ticks // sample_period
    if t.size:
        edge = np.ones(t.size, dtype=bool)
        edge[1:] = np.diff(t) >= pulse_width
        t = t[edge]
    idx = np.unique((t - 1) // sample_period)
    idx = idx[(idx >= 0) & (idx < length)]
    return SampledBitStream(
        length,
        idx,
        sample_period * events.tick,
        {"tick": events.tick, "n_ticks": events.n_ticks, "n_events": len(events)},
    )


@dataclass(frozen=True, eq=False)
class CoarseFineView:
    """Per-pixel clock-sampled streams and TDC code sequences.

    ``coarse[p]`` concatenates every frame of pixel ``p`` (``frame_cycles``
    bits each, frames being back to back); ``fine[p]`` lists the codes of the
    same tags in arrival order.
    """

    coarse: tuple[SampledBitStream, ...]
    fine: tuple[np.ndarray, ...]
    frame_cycles: int
    n_frames: int

    @property
    def n_pixels(self) -> int:
        return len(self.coarse)


def split_coarse_fine(frames: FrameSet) -> CoarseFineView:
    """Separate each tag into its clock-cycle bit and its TDC code.

    A frame in which a pixel's buffer filled is cut after its last tag: later
    cycles were not observed and must not read as zeros.
    """
    C = frames.frame_cycles
    coarse, fine = [], []
    for p in range(frames.n_pixels):
        fr, cyc, code = frames.pixel_tags(p)
        pos = fr * C + cyc
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            bad = int(fr[np.flatnonzero(np.diff(pos) <= 0)[0]])
            raise ValueError(f"frame {bad}, pixel {p}: two tags in one clock cycle")
        if np.any((cyc < 0) | (cyc >= C)):
            raise ValueError(f"pixel {p}: coarse index outside the frame")
        if np.any((code < 0) | (code >= LINOSPAD_CODES)):
            raise ValueError(f"pixel {p}: fine code outside 0..{LINOSPAD_CODES - 1}")
        stream = SampledBitStream(len(frames) * C, pos, frames.clock_period, {"pixel": p})
        sat = np.flatnonzero(frames.saturated[:, p])
        if sat.size:
            stream = _cut_saturated(stream, fr, cyc, sat, C)
        coarse.append(stream)
        fine.append(code.copy())
    return CoarseFineView(tuple(coarse), tuple(fine), C, len(frames))


def _cut_saturated(stream, fr, cyc, sat_frames, C):
    drop_lo, drop_hi = [], []
    for f in sat_frames:
        last = cyc[fr == f].max() if np.any(fr == f) else -1
        drop_lo.append(f * C + last + 1)
        drop_hi.append((f + 1) * C)
    return delete_ranges(stream, np.array(drop_lo), np.array(drop_hi))


def delete_ranges(stream: SampledBitStream, lo, hi) -> SampledBitStream:
    """Remove samples in disjoint sorted ranges ``[lo[i], hi[i])`` that hold no 1s."""
    lo, hi = np.asarray(lo, np.int64), np.asarray(hi, np.int64)
    widths = hi - lo
    removed_before = np.concatenate([[0], np.cumsum(widths)])
    k = np.searchsorted(lo, stream.ones, side="right")
    ones = stream.ones - removed_before[k]
    return SampledBitStream(stream.length - int(widths.sum()), ones, stream.sample_period, stream.origin)
