"""Randomness extractors: von Neumann, Peres, Zhou-Bruck, and two timing protocols.

Pair convention everywhere: ``01 -> 0``, ``10 -> 1``, ``00``/``11`` discarded;
an odd trailing element is dropped at every recursion level.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .sampling import SampledBitStream, as_stream
from .source import PhotonEventStream

DEFAULT_DEPTH = 32
# output order is encoded as a base-3 path key in an int64
MAX_DEPTH = 40


@dataclass
class ExtractorStats:
    input_length: int
    output_length: int
    depth: int = 0  # deepest recursion level that produced output
    n_branch: int = 0  # bits from the top-level von Neumann step
    u_branch: int = 0  # bits from the XOR sub-sequence subtree
    v_branch: int = 0  # bits from the equal-pairs sub-sequence subtree

    def __post_init__(self):
        if self.output_length > self.input_length:
            raise ValueError("output_length exceeds input_length")

    @property
    def yield_ratio(self) -> float:
        return self.output_length / self.input_length if self.input_length else 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass(frozen=True, eq=False)
class SymbolStream:
    symbols: np.ndarray
    alphabet_size: int

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.int64)
        object.__setattr__(self, "symbols", s)
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size: must be >= 1")
        if s.size and (s.min() < 0 or s.max() >= self.alphabet_size):
            bad = s[(s < 0) | (s >= self.alphabet_size)][0]
            raise ValueError(f"symbol {bad} outside [0, {self.alphabet_size})")

    def __len__(self) -> int:
        return int(self.symbols.size)


def von_neumann(bits) -> np.ndarray:
    """Classic pairwise debiasing."""
    if isinstance(bits, SampledBitStream):
        out, _ = _peres_batch(np.array([bits.length]), np.zeros(bits.n_ones, np.int64), bits.ones, 1)
        return out[0]
    b = as_stream(bits).to_bits() if isinstance(bits, str) else np.asarray(bits, dtype=np.uint8)
    m = b.size // 2 * 2
    first, second = b[0:m:2], b[1:m:2]
    return first[first != second].copy()


def _peres_batch(lengths, root_of_one, ones, max_depth):
    """Peres extractor over many independent sequences at once.

    Sequence ``r`` has ``lengths[r]`` bits with 1s at ``ones[root_of_one == r]``
    (sorted by root, then position). The recursion runs level by level over
    all live nodes; every emitted bit carries its node's path (U=1, V=2 in
    base 3) so a final stable sort restores the N || U-subtree || V-subtree
    order. Constant nodes produce nothing and are pruned.

    Returns (list of per-root outputs, per-root stats array with columns
    depth, n, u, v).
    """
    if not 1 <= max_depth <= MAX_DEPTH:
        raise ValueError(f"max_depth: must be in 1..{MAX_DEPTH}, got {max_depth}")
    lengths = np.asarray(lengths, dtype=np.int64)
    n_roots = lengths.size
    node_len = lengths.copy()
    node_root = np.arange(n_roots, dtype=np.int64)
    node_key = np.zeros(n_roots, dtype=np.int64)
    node_id = np.asarray(root_of_one, dtype=np.int64)
    pos = np.asarray(ones, dtype=np.int64)
    node_len, node_root, node_key, node_id, pos = _prune(node_len, node_root, node_key, node_id, pos)

    out_key, out_root, out_bit, out_depth = [], [], [], []
    depth = 0
    while node_len.size:
        depth += 1
        pair = pos >> 1
        half = node_len >> 1
        valid = pair < half[node_id]
        nid, pr, pp = node_id[valid], pair[valid], pos[valid]
        if nid.size == 0:
            break
        new = np.empty(nid.size, dtype=bool)
        new[0] = True
        new[1:] = (nid[1:] != nid[:-1]) | (pr[1:] != pr[:-1])
        starts = np.flatnonzero(new)
        cnt = np.diff(np.append(starts, nid.size))
        rec_node, rec_pair, rec_odd = nid[starts], pr[starts], pp[starts] & 1
        single = cnt == 1

        sn = rec_node[single]
        out_key.append(node_key[sn])
        out_root.append(node_root[sn])
        out_bit.append((rec_odd[single] == 0).astype(np.uint8))
        out_depth.append(np.full(sn.size, depth, dtype=np.int16))
        if depth == max_depth:
            break

        n_nodes = node_len.size
        n_single = np.bincount(sn, minlength=n_nodes)
        cs = np.cumsum(single) - single
        first = np.searchsorted(rec_node, rec_node, side="left")
        before = cs - cs[first]
        dbl = ~single

        place = 3 ** (max_depth - 1 - depth)
        child_len = np.empty(2 * n_nodes, dtype=np.int64)
        child_len[0::2] = half
        child_len[1::2] = half - n_single
        child_root = np.repeat(node_root, 2)
        child_key = np.repeat(node_key, 2)
        child_key[0::2] += place
        child_key[1::2] += 2 * place
        c_id = np.concatenate([2 * sn, 2 * rec_node[dbl] + 1])
        c_pos = np.concatenate([rec_pair[single], rec_pair[dbl] - before[dbl]])
        order = np.argsort(c_id, kind="stable")
        node_len, node_root, node_key, node_id, pos = _prune(
            child_len, child_root, child_key, c_id[order], c_pos[order]
        )

    stats = np.zeros((n_roots, 4), dtype=np.int64)
    if not out_bit:
        return [np.empty(0, np.uint8) for _ in range(n_roots)], stats
    key = np.concatenate(out_key)
    root = np.concatenate(out_root)
    bit = np.concatenate(out_bit)
    dep = np.concatenate(out_depth)
    order = np.lexsort((key, root))
    key, root, bit, dep = key[order], root[order], bit[order], dep[order]

    bounds = np.searchsorted(root, np.arange(n_roots + 1))
    if max_depth > 1:
        top = key // 3 ** (max_depth - 2)
    else:
        top = np.zeros_like(key)
    for j, br in enumerate((0, 1, 2)):
        stats[:, 1 + j] = np.bincount(root[top == br], minlength=n_roots)
    nonempty = np.flatnonzero(bounds[1:] > bounds[:-1])
    stats[nonempty, 0] = np.maximum.reduceat(dep, bounds[nonempty])
    return [bit[bounds[r] : bounds[r + 1]] for r in range(n_roots)], stats


def _prune(node_len, node_root, node_key, node_id, pos):
    """Drop nodes shorter than two bits or without both symbols; renumber the rest."""
    ones = np.bincount(node_id, minlength=node_len.size)
    live = (node_len >= 2) & (ones > 0) & (ones < node_len)
    remap = np.cumsum(live) - 1
    keep = live[node_id]
    return node_len[live], node_root[live], node_key[live], remap[node_id[keep]], pos[keep]


def peres(bits, max_depth: int = DEFAULT_DEPTH) -> tuple[np.ndarray, ExtractorStats]:
    """Iterated von Neumann extraction: Psi(s) = N(s) || Psi(U(s)) || Psi(V(s)).

    U(s) XORs each pair, V(s) keeps one bit of every equal pair. With
    ``max_depth=1`` this is plain von Neumann.
    """
    s = as_stream(bits)
    out, st = _peres_batch(np.array([s.length]), np.zeros(s.n_ones, np.int64), s.ones, max_depth)
    d, n, u, v = (int(x) for x in st[0])
    return out[0], ExtractorStats(s.length, int(out[0].size), d, n, u, v)


def peres_many(sequences, max_depth: int = DEFAULT_DEPTH) -> list[np.ndarray]:
    """Run :func:`peres` independently on each sequence in one vectorized pass."""
    streams = [as_stream(b) for b in sequences]
    lengths = np.array([s.length for s in streams], dtype=np.int64)
    root = np.concatenate([np.full(s.n_ones, k, np.int64) for k, s in enumerate(streams)] or [np.empty(0, np.int64)])
    ones = np.concatenate([s.ones for s in streams] or [np.empty(0, np.int64)])
    out, _ = _peres_batch(lengths, root, ones, max_depth)
    return out


def code_width(alphabet_size: int) -> int:
    return max(1, math.ceil(math.log2(alphabet_size)))


def zhou_bruck_groups(symbols: SymbolStream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary sub-sequences of a symbol stream.

    Position i (MSB first) of every b-bit code is routed to the group of its
    (i-1)-bit prefix. Groups are numbered position-major, prefix ascending:
    group ``2**(i-1) - 1 + prefix``. Returns (group lengths, group of each 1,
    position of each 1 within its group), sorted by group then position.
    """
    b = code_width(symbols.alphabet_size)
    if b > 24:
        raise ValueError("alphabet too large for prefix grouping")
    s = symbols.symbols
    n = s.size
    groups = np.empty(n * b, dtype=np.int64)
    values = np.empty(n * b, dtype=np.uint8)
    for i in range(1, b + 1):
        sl = slice((i - 1) * n, i * n)
        groups[sl] = (1 << (i - 1)) - 1 + (s >> (b - i + 1))
        values[sl] = (s >> (b - i)) & 1
    order = np.argsort(groups, kind="stable")
    groups, values = groups[order], values[order]
    n_groups = (1 << b) - 1
    lengths = np.bincount(groups, minlength=n_groups)
    start = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    idx = np.arange(groups.size) - start[groups]
    one = values == 1
    return lengths, groups[one], idx[one]


def zhou_bruck(symbols, max_depth: int = DEFAULT_DEPTH, alphabet_size: int | None = None) -> tuple[np.ndarray, ExtractorStats]:
    """Unbiased bits from i.i.d. symbols over a finite alphabet.

    Every prefix-grouped binary sub-sequence is i.i.d. (though biased), so
    Peres is applied to each and the outputs are concatenated in group
    order.
    """
    if not isinstance(symbols, SymbolStream):
        if alphabet_size is None:
            raise ValueError("alphabet_size is required for a bare symbol array")
        symbols = SymbolStream(symbols, alphabet_size)
    if symbols.alphabet_size < 2:
        raise ValueError("alphabet_size: must be >= 2")
    lengths, grp, pos = zhou_bruck_groups(symbols)
    outs, st = _peres_batch(lengths, grp, pos, max_depth)
    out = np.concatenate(outs) if outs else np.empty(0, np.uint8)
    # compare against the symbol count's bit budget, not the symbol count
    stats = ExtractorStats(
        int(lengths.sum()),
        int(out.size),
        int(st[:, 0].max()) if st.size else 0,
        int(st[:, 1].sum()),
        int(st[:, 2].sum()),
        int(st[:, 3].sum()),
    )
    return out, stats


# ---------------------------------------------------------------------------
# timing protocols


def _times(events) -> np.ndarray:
    if isinstance(events, PhotonEventStream):
        return events.events
    if isinstance(events, SampledBitStream):
        return events.ones
    return np.asarray(events, dtype=np.int64)


def protocol_diff(events) -> np.ndarray:
    """Compare two consecutive interarrival times per bit; intervals chain end to start.

    ``dT1 > dT2 -> 0``, ``dT1 < dT2 -> 1``, ties give no bit.
    """
    t = _times(events)
    k = (t.size - 1) // 2
    if k <= 0:
        return np.empty(0, np.uint8)
    t0, t1, t2 = t[0 : 2 * k : 2], t[1 : 2 * k : 2], t[2 : 2 * k + 1 : 2]
    d1, d2 = t1 - t0, t2 - t1
    keep = d1 != d2
    return (d1[keep] < d2[keep]).astype(np.uint8)


def protocol_odeven(events, tau: int, n_ticks: int | None = None) -> np.ndarray:
    """Parity of the detection count in consecutive windows of ``tau`` ticks.

    Window k covers ticks ``(k tau, (k+1) tau]``. ``n_ticks`` defaults to the
    stream span.
    """
    if tau <= 0:
        raise ValueError(f"tau: must be > 0, got {tau}")
    t = _times(events)
    if n_ticks is None:
        if isinstance(events, PhotonEventStream):
            n_ticks = events.n_ticks
        elif isinstance(events, SampledBitStream):
            n_ticks = events.length
        else:
            raise ValueError("n_ticks is required for bare timestamp arrays")
    n_win = n_ticks // tau
    w = (t - 1) // tau if not isinstance(events, SampledBitStream) else t // tau
    w = w[(w >= 0) & (w < n_win)]
    return (np.bincount(w, minlength=n_win) & 1).astype(np.uint8)


def odeven_bias(mean_count: float) -> float:
    """|Pr[1] - 1/2| for a Poisson count with the given mean."""
    return math.exp(-2.0 * mean_count) / 2.0
