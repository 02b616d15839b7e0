"""Removal of detector-induced correlations before extraction."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .sampling import SampledBitStream, as_stream
from .source import LINOSPAD_CODES, FrameSet


@dataclass(frozen=True, eq=False)
class InterarrivalHistogram:
    """Gap counts between consecutive 1s, with a geometric (discrete exponential) tail fit.

    ``counts[g]`` is the number of gaps of exactly ``g`` samples. Each pooled
    stream gets its own maximum-likelihood fit over gaps ``>= fit_from`` and
    ``expected(g)`` sums the fits extrapolated back, so pixels with
    different rates do not bend the reference curve.
    """

    counts: np.ndarray
    total_events: int
    fit_from: int
    n_tail: np.ndarray  # per pooled stream
    success_probs: np.ndarray  # per pooled stream, per-sample probability

    @property
    def success_prob(self) -> float:
        """Tail-weighted mean of the fitted per-sample probabilities."""
        return float(np.average(self.success_probs, weights=self.n_tail))

    @property
    def rate(self) -> float:
        """Fitted exponential rate in events per sample period."""
        return float(-np.log1p(-self.success_prob))

    @property
    def floor(self) -> int:
        """Shortest observed gap."""
        nz = np.flatnonzero(self.counts)
        return int(nz[0]) if nz.size else 0

    def expected(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        q = self.success_probs.reshape((-1,) + (1,) * g.ndim)
        n = self.n_tail.reshape(q.shape)
        return (n * q * np.exp((g - self.fit_from) * np.log1p(-q))).sum(axis=0)

    def count(self, g: int) -> int:
        return int(self.counts[g]) if 0 <= g < self.counts.size else 0

    def to_csv(self, max_gap: int | None = None) -> str:
        top = self.counts.size if max_gap is None else min(max_gap + 1, self.counts.size)
        g = np.arange(1, top)
        exp = self.expected(g)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gap", "count", "expected"])
        for k, e in zip(g.tolist(), exp.tolist()):
            w.writerow([k, int(self.counts[k]), f"{e:.6g}"])
        return buf.getvalue()


def _streams(bits) -> list[SampledBitStream]:
    if isinstance(bits, (list, tuple)):
        return [as_stream(b) for b in bits]
    return [as_stream(bits)]


def _gaps(streams: Iterable[SampledBitStream]) -> tuple[np.ndarray, int]:
    parts, total = [], 0
    for s in streams:
        total += s.n_ones
        if s.n_ones > 1:
            parts.append(np.diff(s.ones))
    return (np.concatenate(parts) if parts else np.empty(0, np.int64)), total


def interarrival_histogram(bits, fit_from: int = 128) -> InterarrivalHistogram:
    """Histogram of gaps between consecutive 1s; ``bits`` may be one stream or a list to pool."""
    streams = _streams(bits)
    gaps, total = _gaps(streams)
    if gaps.size == 0:
        raise ValueError("need at least two 1s to form an interarrival gap")
    n_tail, probs = [], []
    for s in streams:
        if s.n_ones < 2:
            continue
        tail = np.diff(s.ones)
        tail = tail[tail >= fit_from]
        if tail.size:
            n_tail.append(tail.size)
            probs.append(1.0 / (1.0 + (tail - fit_from).mean()))
    if not n_tail:
        raise ValueError(f"no gaps >= fit_from={fit_from}; cannot fit the exponential tail")
    return InterarrivalHistogram(
        np.bincount(gaps), total, fit_from, np.array(n_tail, dtype=float), np.array(probs)
    )


def estimate_cutoff(
    hist: InterarrivalHistogram,
    band: tuple[float, float] = (0.9, 1.1),
    run: int = 3,
    max_search: int | None = None,
) -> int:
    """First gap from which ``run`` consecutive bins agree with the fitted exponential.

    Agreement means observed/expected inside ``band``. The result is never
    below the shortest observed gap (the dead-time floor).
    """
    lo, hi = band
    top = hist.fit_from if max_search is None else max_search
    start = max(hist.floor, 1)
    g = np.arange(start, top + run)
    exp = hist.expected(g)
    obs = np.array([hist.count(int(k)) for k in g], dtype=float)
    ratio = np.divide(obs, exp, out=np.zeros_like(obs), where=exp > 0)
    ok = (ratio >= lo) & (ratio <= hi)
    for k in range(min(top - start + 1, ok.size - run + 1)):
        if ok[k : k + run].all():
            return int(g[k])
    sample = ", ".join(f"{int(a)}:{r:.2f}" for a, r in list(zip(g, ratio))[:40])
    raise ValueError(
        f"no stable cross-point with the exponential fit in gaps {start}..{top} "
        f"(band {band}, run {run}); observed/expected ratios: {sample}"
    )


def remove_guard(bits, guard: int) -> SampledBitStream:
    """Delete the ``guard`` samples that follow every 1 of the input.

    Windows are taken from every original 1, including 1s that are
    themselves deleted; deleted samples vanish (the stream gets shorter).
    """
    if guard < 0:
        raise ValueError(f"guard: must be >= 0, got {guard}")
    s = as_stream(bits)
    P = s.ones
    if guard == 0 or P.size == 0:
        return s
    nxt = np.append(P[1:], s.length)
    # samples deleted after each 1: up to the next 1 (inclusive) or the end
    d = np.minimum(guard, nxt - P)
    d[-1] = min(guard, s.length - 1 - int(P[-1]))
    survive = np.ones(P.size, dtype=bool)
    survive[1:] = np.diff(P) > guard
    shift = np.concatenate([[0], np.cumsum(d)[:-1]])
    return SampledBitStream(
        s.length - int(d.sum()), P[survive] - shift[survive], s.sample_period, s.origin
    )


@dataclass
class ConditioningReport:
    guard_cycles: int | None = None
    cutoff: int | None = None
    samples_in: int = 0
    samples_out: int = 0
    events_in: int = 0
    events_out: int = 0
    fraction_samples_removed: float = 0.0
    fraction_events_lost: float = 0.0
    effective_sample_rate: float | None = None  # Hz, when the clock is known
    pixels_kept: list[int] = field(default_factory=list)
    pixels_discarded: list[int] = field(default_factory=list)

    def __post_init__(self):
        for name in ("fraction_samples_removed", "fraction_events_lost"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}: {v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def guard_report(before: Sequence[SampledBitStream], after: Sequence[SampledBitStream], guard, cutoff=None) -> ConditioningReport:
    s_in = sum(s.length for s in before)
    s_out = sum(s.length for s in after)
    e_in = sum(s.n_ones for s in before)
    e_out = sum(s.n_ones for s in after)
    period = before[0].sample_period if before else 0.0
    eff = None
    if period > 0 and s_in:
        eff = s_out / (s_in * period)
    return ConditioningReport(
        guard_cycles=int(guard),
        cutoff=None if cutoff is None else int(cutoff),
        samples_in=s_in,
        samples_out=s_out,
        events_in=e_in,
        events_out=e_out,
        fraction_samples_removed=(s_in - s_out) / s_in if s_in else 0.0,
        fraction_events_lost=(e_in - e_out) / e_in if e_in else 0.0,
        effective_sample_rate=eff,
    )


def ks_exponential(bits, shift: int = 1) -> tuple[float, float]:
    """KS distance and p-value of the 1-to-1 gaps against a fitted geometric law starting at ``shift``.

    The distance is evaluated on the integer support, where both CDFs
    jump; the continuous-case p-value is conservative for discrete data.
    """
    gaps, _ = _gaps(_streams(bits))
    if gaps.size < 2:
        raise ValueError("need at least three 1s for a KS test")
    n = gaps.size
    q = 1.0 / (1.0 + (gaps - shift).mean())
    counts = np.bincount(gaps)
    k = np.arange(counts.size)
    emp = np.cumsum(counts) / n
    model = np.where(k >= shift, -np.expm1((k - shift + 1) * np.log1p(-q)), 0.0)
    d = float(np.abs(emp - model).max())
    return d, float(stats.kstwo.sf(d, n))


# ---------------------------------------------------------------------------
# crosstalk


@dataclass(frozen=True, eq=False)
class CoincidenceMatrix:
    pairs: tuple[tuple[int, int], ...]
    excess: np.ndarray  # coincidence probability above the accidental level, per pair


def pixel_times(frames: FrameSet, p: int) -> np.ndarray:
    fr, cyc, code = frames.pixel_tags(p)
    return (fr * frames.frame_cycles + cyc) * LINOSPAD_CODES + code


def coincidences(frames: FrameSet, window: int = 280, max_distance: int = 2) -> CoincidenceMatrix:
    """Excess probability that a pixel fires within ``window`` ticks of a neighbour.

    Neighbours are pixels at most ``max_distance`` apart in the line. For
    each ordered pair the accidental rate ``1 - exp(-rho (2w + 1))`` is
    subtracted; the pair keeps the larger of its two directions.
    """
    n = frames.n_pixels
    span = len(frames) * frames.frame_cycles * LINOSPAD_CODES
    times = [pixel_times(frames, p) for p in range(n)]
    density = [t.size / span if span else 0.0 for t in times]

    def directed(a, b):
        ta, tb = times[a], times[b]
        if ta.size == 0 or tb.size == 0:
            return 0.0
        idx = np.searchsorted(tb, ta - window, side="left")
        hit = (idx < tb.size) & (tb[np.minimum(idx, tb.size - 1)] <= ta + window)
        accidental = -np.expm1(-density[b] * (2 * window + 1))
        return hit.mean() - accidental

    pairs, excess = [], []
    for a in range(n):
        for b in range(a + 1, min(n, a + max_distance + 1)):
            pairs.append((a, b))
            excess.append(max(directed(a, b), directed(b, a)))
    return CoincidenceMatrix(tuple(pairs), np.array(excess))


def cull_pixels(
    frames: FrameSet, window: int = 280, threshold: float = 0.005, max_distance: int = 2
) -> tuple[frozenset[int], ConditioningReport]:
    """Drop the pixels needed so that no kept neighbour pair shows crosstalk.

    Pairs whose excess coincidence probability exceeds ``threshold`` form a
    conflict graph; pixels are kept greedily lowest conflict degree first,
    each keep discarding its conflicting neighbours.
    """
    if len(frames) < 2:
        raise ValueError("cull_pixels needs at least two frames")
    n = frames.n_pixels
    cm = coincidences(frames, window, max_distance)
    adj: list[set[int]] = [set() for _ in range(n)]
    for (a, b), e in zip(cm.pairs, cm.excess):
        if e > threshold:
            adj[a].add(b)
            adj[b].add(a)
    alive = set(range(n))
    kept = []
    while alive:
        v = min(alive, key=lambda u: (len(adj[u] & alive), u))
        kept.append(v)
        alive -= adj[v] | {v}
    kept_set = frozenset(kept)
    dropped = sorted(set(range(n)) - kept_set)
    counts = np.bincount(frames.pixel, minlength=n)
    total = int(counts.sum())
    lost = int(counts[dropped].sum()) if dropped else 0
    report = ConditioningReport(
        events_in=total,
        events_out=total - lost,
        fraction_events_lost=lost / total if total else 0.0,
        pixels_kept=sorted(kept_set),
        pixels_discarded=dropped,
    )
    return kept_set, report
