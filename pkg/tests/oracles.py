"""Slow, literal reference implementations used to check the vectorized code."""
from __future__ import annotations

import math

import numpy as np


def dead_time_ref(events, dead_time):
    """Non-paralyzable filter: keep an event iff ``dead_time`` ticks passed since the last kept one."""
    kept, last = [], None
    for t in events:
        if last is None or t - last >= dead_time:
            kept.append(t)
            last = t
    return kept


def sample_ref(events, n_ticks, sample_period, pulse_width):
    """Signal line on a half-tick grid, latched on rising edges.

    An event at tick e drives half-ticks 2e .. 2e + 2 pulse_width - 2 high,
    so a pulse ending exactly where the next begins still shows a low gap.
    """
    level = np.zeros(2 * n_ticks + 2 * pulse_width + 2, dtype=bool)
    for t in events:
        level[2 * t : 2 * t + 2 * pulse_width - 1] = True
    bits = [0] * (n_ticks // sample_period)
    for h in range(1, level.size):
        if level[h] and not level[h - 1]:
            j = (h // 2 - 1) // sample_period
            if 0 <= j < len(bits):
                bits[j] = 1
    return bits


def guard_ref(bits, guard):
    """Drop the ``guard`` samples after every 1 of the original sequence."""
    dead = set()
    for i, b in enumerate(bits):
        if b:
            dead.update(range(i + 1, i + 1 + guard))
    return [b for i, b in enumerate(bits) if i not in dead]


def von_neumann_ref(bits):
    out = []
    for i in range(0, len(bits) - 1, 2):
        a, b = bits[i], bits[i + 1]
        if a != b:
            out.append(1 if (a, b) == (1, 0) else 0)
    return out


def peres_ref(bits, depth=32):
    """Textbook recursion: N(s) || Psi(U(s)) || Psi(V(s))."""
    if depth == 0 or len(bits) < 2:
        return []
    n, u, v = [], [], []
    for i in range(0, len(bits) - 1, 2):
        a, b = bits[i], bits[i + 1]
        u.append(a ^ b)
        if a != b:
            n.append(1 if a == 1 else 0)
        else:
            v.append(a)
    return n + peres_ref(u, depth - 1) + peres_ref(v, depth - 1)


def zhou_bruck_ref(symbols, alphabet_size, depth=32):
    b = max(1, math.ceil(math.log2(alphabet_size)))
    groups = {}
    for s in symbols:
        code = format(int(s), f"0{b}b")
        for i in range(b):
            groups.setdefault((i, code[:i]), []).append(int(code[i]))
    out = []
    for key in sorted(groups, key=lambda k: (k[0], int(k[1] or "0", 2))):
        out += peres_ref(groups[key], depth)
    return out


def autocorr_ref(bits, max_lag):
    x = np.asarray(bits, dtype=float)
    m = x.mean()
    d = x - m
    den = (d * d).sum()
    return [float((d[:-k] * d[k:]).sum() / den) for k in range(1, max_lag + 1)]


def diff_ref(times):
    out = []
    i = 0
    while i + 2 < len(times):
        d1 = times[i + 1] - times[i]
        d2 = times[i + 2] - times[i + 1]
        if d1 != d2:
            out.append(0 if d1 > d2 else 1)
        i += 2
    return out


def odeven_ref(times, tau, n_ticks):
    counts = [0] * (n_ticks // tau)
    for t in times:
        w = (t - 1) // tau
        if 0 <= w < len(counts):
            counts[w] += 1
    return [c % 2 for c in counts]


def detector_ref(times, spawn, offsets, dead_time, n_ticks):
    """Event-driven detector: a heap of pending arrivals, afterpulses queued on acceptance.

    Returns (accepted times, is_afterpulse flags). At equal ticks a primary
    arrival is processed before an afterpulse.
    """
    import heapq

    heap = [(int(t), 0, i) for i, t in enumerate(times)]
    heapq.heapify(heap)
    out, kind, last = [], [], None
    while heap:
        t, k, i = heapq.heappop(heap)
        if last is not None and t - last < dead_time:
            continue
        out.append(t)
        kind.append(k)
        last = t
        if k == 0 and spawn[i]:
            ta = t + int(offsets[i])
            if ta <= n_ticks:
                heapq.heappush(heap, (ta, 1, i))
    return out, kind
