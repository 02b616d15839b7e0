import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spadrng.formats import (
    FormatError,
    labels_path,
    read_bits,
    read_events,
    read_tags,
    write_bits,
    write_events,
    write_tags,
)
from spadrng.sampling import SampledBitStream
from spadrng.source import FrameSet, PhotonEventStream


class TestBits:
    @settings(max_examples=60)
    @given(st.lists(st.integers(0, 1), max_size=200), st.sampled_from([0.0, 1e-8, 2.5e-9]))
    def test_round_trip(self, tmp_path_factory, bits, period):
        path = tmp_path_factory.mktemp("b") / "x.bin"
        write_bits(path, np.array(bits, dtype=np.uint8), period)
        back = read_bits(path, chunk=3)
        assert back.to_bits().tolist() == bits
        assert back.sample_period == pytest.approx(period, abs=1e-15)

    def test_layout(self, tmp_path):
        path = tmp_path / "x.bin"
        write_bits(path, SampledBitStream.from_string("1000000011"), 1e-8)
        data = path.read_bytes()
        magic, fs, n = struct.unpack_from("<8sQQ", data)
        assert (magic, fs, n) == (b"QRNGBIT1", 10_000_000, 10)
        assert data[24:] == bytes([0b00000001, 0b00000011])

    def test_sparse_long_stream(self, tmp_path):
        s = SampledBitStream(10**8, np.array([0, 12345, 10**8 - 1]))
        write_bits(tmp_path / "big.bin", s)
        back = read_bits(tmp_path / "big.bin")
        assert back.length == 10**8 and back.ones.tolist() == [0, 12345, 10**8 - 1]

    @pytest.mark.parametrize(
        "data, msg",
        [
            (b"x", "too short"),
            (b"QRNGXXX1" + bytes(16), "bad magic"),
            (struct.pack("<8sQQ", b"QRNGBIT1", 0, 17) + bytes(2), "body holds"),
            (struct.pack("<8sQQ", b"QRNGBIT1", 0, 3) + bytes([0xF0]), "padding"),
        ],
    )
    def test_malformed(self, tmp_path, data, msg):
        path = tmp_path / "bad.bin"
        path.write_bytes(data)
        with pytest.raises(FormatError, match=msg):
            read_bits(path)


class TestEvents:
    def test_round_trip_with_labels(self, tmp_path):
        s = PhotonEventStream(np.array([3, 40, 2**40]), 1e-9, 2**41, np.array([0, 1, 0]))
        write_events(tmp_path / "e.bin", s)
        assert labels_path(tmp_path / "e.bin").exists()
        back = read_events(tmp_path / "e.bin", n_ticks=2**41)
        assert back.events.tolist() == [3, 40, 2**40]
        assert back.truth_labels.tolist() == [0, 1, 0]
        assert back.tick == pytest.approx(1e-9) and back.n_ticks == 2**41

    def test_empty(self, tmp_path):
        write_events(tmp_path / "e.bin", PhotonEventStream(np.array([], np.int64), 1e-9, 0))
        assert len(read_events(tmp_path / "e.bin")) == 0
        assert (tmp_path / "e.bin").stat().st_size == 24

    def test_truncated(self, tmp_path):
        (tmp_path / "e.bin").write_bytes(struct.pack("<8sQQ", b"QRNGEVT1", 10**6, 2) + bytes(8))
        with pytest.raises(FormatError, match="2 events"):
            read_events(tmp_path / "e.bin")


def frameset():
    frame = [0, 0, 0, 1, 1]
    pixel = [0, 0, 2, 1, 2]
    coarse = [5, 127999, 3, 70000, 1]
    fine = [8, 139, 0, 55, 77]
    sat = np.zeros((2, 3), bool)
    sat[0, 0] = True
    return FrameSet(frame, pixel, coarse, fine, sat, 3, 128000)


class TestTags:
    def test_round_trip_infers_saturation(self, tmp_path):
        fs = frameset()
        write_tags(tmp_path / "t.bin", fs)
        back = read_tags(tmp_path / "t.bin", buffer_cap=2)
        for name in ("frame", "pixel", "coarse", "fine", "saturated"):
            assert np.array_equal(getattr(back, name), getattr(fs, name)), name
        assert back.frame_time == pytest.approx(320e-6)

    def test_layout(self, tmp_path):
        write_tags(tmp_path / "t.bin", frameset())
        data = (tmp_path / "t.bin").read_bytes()
        assert struct.unpack_from("<8sQI", data) == (b"QRNGTAG1", 320_000_000_000, 3)
        body = data[20:]
        assert struct.unpack_from("<H", body) == (2,)
        assert struct.unpack_from("<IB", body, 2) == (5, 8)
        # 2 frames x 3 pixels count headers, then 5 tags of 5 bytes
        assert len(body) == 2 * 6 + 5 * 5

    def test_truncated(self, tmp_path):
        write_tags(tmp_path / "t.bin", frameset())
        data = (tmp_path / "t.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(data[:-3])
        with pytest.raises(FormatError, match="truncated"):
            read_tags(tmp_path / "t.bin")

    def test_partial_frame(self, tmp_path):
        write_tags(tmp_path / "t.bin", frameset())
        data = (tmp_path / "t.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(data + bytes(2))
        with pytest.raises(FormatError, match="whole number"):
            read_tags(tmp_path / "t.bin")
