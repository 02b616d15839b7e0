"""Little-endian binary formats for event streams, tag frames and packed bits.

Events  ``QRNGEVT1`` | u64 tick [fs] | u64 count | count x u64 tick index
Labels  ``QRNGLBL1`` | u64 count | count x u8 (0 true, 1 afterpulse, 2 crosstalk)
Tags    ``QRNGTAG1`` | u64 frame_time [fs] | u32 n_pixels |
        per frame, per pixel: u16 count, count x (u32 coarse, u8 fine)
Bits    ``QRNGBIT1`` | u64 sample_period [fs] | u64 bit count | LSB-first packed bytes
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .sampling import SampledBitStream, as_stream
from .source import LINOSPAD_CLOCK, FrameSet, PhotonEventStream

EVENT_MAGIC = b"QRNGEVT1"
LABEL_MAGIC = b"QRNGLBL1"
TAG_MAGIC = b"QRNGTAG1"
BIT_MAGIC = b"QRNGBIT1"

_EVT_HEAD = struct.Struct("<8sQQ")
_LBL_HEAD = struct.Struct("<8sQ")
_TAG_HEAD = struct.Struct("<8sQI")
_BIT_HEAD = struct.Struct("<8sQQ")

FS = 1e-15


class FormatError(ValueError):
    pass


def _to_fs(seconds: float) -> int:
    return int(round(seconds / FS))


def _read_header(data: bytes, head: struct.Struct, magic: bytes, path) -> tuple:
    if len(data) < head.size:
        raise FormatError(f"{path}: too short for a {magic.decode()} header ({len(data)} bytes)")
    fields = head.unpack_from(data)
    if fields[0] != magic:
        raise FormatError(f"{path}: bad magic {fields[0]!r}, expected {magic!r}")
    return fields[1:]


def labels_path(path) -> Path:
    return Path(str(path) + ".labels")


def write_events(path, stream: PhotonEventStream, labels: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(_EVT_HEAD.pack(EVENT_MAGIC, _to_fs(stream.tick), len(stream)))
        fh.write(stream.events.astype("<u8").tobytes())
    if labels and stream.truth_labels is not None:
        with open(labels_path(path), "wb") as fh:
            fh.write(_LBL_HEAD.pack(LABEL_MAGIC, len(stream)))
            fh.write(stream.truth_labels.astype("u1").tobytes())


def read_events(path, n_ticks: int | None = None) -> PhotonEventStream:
    """Read an event file (and its ``.labels`` sidecar when present).

    The format carries no span; ``n_ticks`` defaults to the last timestamp.
    """
    data = Path(path).read_bytes()
    tick_fs, count = _read_header(data, _EVT_HEAD, EVENT_MAGIC, path)
    body = data[_EVT_HEAD.size :]
    if len(body) != 8 * count:
        raise FormatError(f"{path}: header says {count} events, body holds {len(body) / 8:g}")
    events = np.frombuffer(body, dtype="<u8").astype(np.int64)
    labels = None
    lp = labels_path(path)
    if lp.exists():
        ldata = lp.read_bytes()
        (lcount,) = _read_header(ldata, _LBL_HEAD, LABEL_MAGIC, lp)
        if lcount != count or len(ldata) - _LBL_HEAD.size != count:
            raise FormatError(f"{lp}: label count does not match {path}")
        labels = np.frombuffer(ldata[_LBL_HEAD.size :], dtype="u1").astype(np.int8)
    span = int(events[-1]) if n_ticks is None and count else int(n_ticks or 0)
    return PhotonEventStream(events, tick_fs * FS, span, labels)


def write_tags(path, frames: FrameSet) -> None:
    n_blocks = len(frames) * frames.n_pixels
    counts = np.diff(frames._bounds[: n_blocks + 1]) if n_blocks else np.zeros(0, np.int64)
    if counts.size and counts.max() > 0xFFFF:
        raise FormatError("more than 65535 tags in one frame/pixel block")
    # byte offset of each block: 2 bytes per count plus 5 per preceding tag
    tag_before = np.concatenate([[0], np.cumsum(counts)[:-1]]) if n_blocks else counts
    block_off = 2 * np.arange(n_blocks) + 5 * tag_before
    buf = np.zeros(2 * n_blocks + 5 * int(counts.sum()), dtype=np.uint8)
    buf[block_off] = counts & 0xFF
    buf[block_off + 1] = counts >> 8
    if frames.coarse.size:
        block = np.repeat(np.arange(n_blocks), counts)
        j = np.arange(frames.coarse.size) - tag_before[block]
        at = block_off[block] + 2 + 5 * j
        c = frames.coarse.astype("<u4")
        for b in range(4):
            buf[at + b] = (c >> (8 * b)) & 0xFF
        buf[at + 4] = frames.fine.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_TAG_HEAD.pack(TAG_MAGIC, _to_fs(frames.frame_time), frames.n_pixels))
        fh.write(buf.tobytes())


def read_tags(path, buffer_cap: int = 512, clock_period: float = LINOSPAD_CLOCK) -> FrameSet:
    """Read a tag file; a block holding ``buffer_cap`` tags is marked saturated."""
    data = Path(path).read_bytes()
    frame_fs, n_pix = _read_header(data, _TAG_HEAD, TAG_MAGIC, path)
    cycles = frame_fs * FS / clock_period
    if n_pix == 0 or abs(cycles - round(cycles)) > 1e-6:
        raise FormatError(f"{path}: frame_time {frame_fs} fs is not a whole number of clock cycles")
    body = np.frombuffer(data, dtype=np.uint8, offset=_TAG_HEAD.size)
    counts, offs = [], []
    at, end = 0, body.size
    while at < end:
        if at + 2 > end:
            raise FormatError(f"{path}: truncated block header at byte {_TAG_HEAD.size + at}")
        c = int(body[at]) | int(body[at + 1]) << 8
        offs.append(at + 2)
        counts.append(c)
        at += 2 + 5 * c
    if at != end:
        raise FormatError(f"{path}: truncated tag block")
    if len(counts) % n_pix:
        raise FormatError(f"{path}: {len(counts)} blocks is not a whole number of {n_pix}-pixel frames")
    counts = np.array(counts, dtype=np.int64)
    offs = np.array(offs, dtype=np.int64)
    block = np.repeat(np.arange(counts.size), counts)
    j = np.arange(block.size) - np.repeat(np.cumsum(counts) - counts, counts)
    at = offs[block] + 5 * j
    coarse = np.zeros(block.size, dtype=np.int64)
    for b in range(4):
        coarse |= body[at + b].astype(np.int64) << (8 * b)
    fine = body[at + 4].astype(np.int64)
    n_frames = counts.size // n_pix
    sat = (counts >= buffer_cap).reshape(n_frames, n_pix)
    return FrameSet(block // n_pix, block % n_pix, coarse, fine, sat, n_pix, int(round(cycles)), clock_period)


def write_bits(path, bits, sample_period: float | None = None) -> None:
    s = as_stream(bits)
    period = s.sample_period if sample_period is None else sample_period
    buf = np.zeros((s.length + 7) // 8, dtype=np.uint8)
    if s.n_ones:
        np.bitwise_or.at(buf, s.ones >> 3, (1 << (s.ones & 7)).astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(_BIT_HEAD.pack(BIT_MAGIC, _to_fs(period), s.length))
        fh.write(buf.tobytes())


def read_bits(path, chunk: int = 1 << 24) -> SampledBitStream:
    """Read a packed-bit file into positions of 1s, unpacking ``chunk`` bytes at a time."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        period_fs, n = _read_header(fh.read(_BIT_HEAD.size), _BIT_HEAD, BIT_MAGIC, path)
        nbytes = (n + 7) // 8
        if size - _BIT_HEAD.size != nbytes:
            raise FormatError(f"{path}: header says {n} bits, body holds {size - _BIT_HEAD.size} bytes")
        parts = []
        done = 0
        while done < nbytes:
            raw = np.frombuffer(fh.read(min(chunk, nbytes - done)), dtype=np.uint8)
            parts.append(np.flatnonzero(np.unpackbits(raw, bitorder="little")) + 8 * done)
            done += raw.size
    ones = np.concatenate(parts) if parts else np.empty(0, np.int64)
    if ones.size and ones[-1] >= n:
        raise FormatError(f"{path}: padding bits are set")
    return SampledBitStream(int(n), ones, period_fs * FS)
