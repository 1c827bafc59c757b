"""File format round-trips and hand-authored byte fixtures."""

import json
import struct

import numpy as np
import pytest

from duofuse import fileio
from duofuse.fileio import FileFormatError, WeightStore
from duofuse.frame import DisparityMap, FlowField, Frame


class TestPng:
    @pytest.mark.parametrize("bit_depth", [8, 16])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_round_trip_identical(self, tmp_path, bit_depth, channels):
        rng = np.random.default_rng(bit_depth + channels)
        peak = (1 << bit_depth) - 1
        quantized = rng.integers(0, peak + 1, size=(7, 5, channels)) / peak
        frame = Frame(quantized)
        p = tmp_path / "img.png"
        fileio.save_image(p, frame, bit_depth)
        back = fileio.load_image(p)
        np.testing.assert_array_equal(back.data, frame.data)

    def test_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(3)
        frame = Frame(rng.random((6, 6, 3)))
        p = tmp_path / "img.png"
        fileio.save_image(p, frame, 16)
        back = fileio.load_image(p)
        assert np.max(np.abs(back.data - frame.data)) <= 0.5 / 65535

    def test_rejects_two_channel(self, tmp_path):
        with pytest.raises(ValueError):
            fileio.save_image(tmp_path / "x.png", FlowField.zero(2, 2))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileFormatError):
            fileio.load_image(tmp_path / "nope.png")


class TestFlo:
    def test_hand_authored_single_pixel_fixture(self, tmp_path):
        # magic PIEH as little-endian float 202021.25, then w=1, h=1, (u, v)
        p = tmp_path / "one.flo"
        with open(p, "wb") as f:
            f.write(b"PIEH")
            f.write(struct.pack("<ii", 1, 1))
            f.write(struct.pack("<ff", 1.5, -2.0))
        flow = fileio.load_flow(p)
        assert flow.shape == (1, 1, 2)
        assert flow.data[0, 0, 0] == 1.5
        assert flow.data[0, 0, 1] == -2.0

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        flow = FlowField(rng.standard_normal((5, 9, 2)).astype(np.float32))
        p = tmp_path / "f.flo"
        fileio.save_flow(p, flow)
        back = fileio.load_flow(p)
        np.testing.assert_array_equal(back.data.astype(np.float32),
                                      flow.data.astype(np.float32))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.flo"
        p.write_bytes(b"JUNK" + struct.pack("<ii", 1, 1) + struct.pack("<ff", 0, 0))
        with pytest.raises(FileFormatError, match="magic"):
            fileio.load_flow(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.flo"
        p.write_bytes(b"PIEH" + struct.pack("<ii", 2, 2) + struct.pack("<f", 0.0))
        with pytest.raises(FileFormatError, match="truncated"):
            fileio.load_flow(p)

    def test_sentinel_rejected(self, tmp_path):
        p = tmp_path / "sent.flo"
        p.write_bytes(b"PIEH" + struct.pack("<ii", 1, 1) + struct.pack("<ff", 1e10, 0.0))
        with pytest.raises(FileFormatError, match="sentinel"):
            fileio.load_flow(p)


class TestPfm:
    def test_hand_authored_negative_scale_fixture(self, tmp_path):
        # 2x2 little-endian, rows stored bottom-up: file rows (3,4),(1,2)
        p = tmp_path / "d.pfm"
        with open(p, "wb") as f:
            f.write(b"Pf\n2 2\n-1.0\n")
            f.write(struct.pack("<ffff", 3.0, 4.0, 1.0, 2.0))
        d = fileio.load_pfm(p)
        np.testing.assert_array_equal(d.data[:, :, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_big_endian_positive_scale(self, tmp_path):
        p = tmp_path / "be.pfm"
        with open(p, "wb") as f:
            f.write(b"Pf\n2 1\n1.0\n")
            f.write(struct.pack(">ff", 5.0, 6.0))
        d = fileio.load_pfm(p)
        np.testing.assert_array_equal(d.data[0, :, 0], [5.0, 6.0])

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        d = DisparityMap(rng.standard_normal((6, 4, 1)).astype(np.float32))
        p = tmp_path / "rt.pfm"
        fileio.save_pfm(p, d)
        back = fileio.load_pfm(p)
        np.testing.assert_array_equal(back.data.astype(np.float32),
                                      d.data.astype(np.float32))

    def test_color_pfm_rejected(self, tmp_path):
        p = tmp_path / "c.pfm"
        p.write_bytes(b"PF\n1 1\n-1.0\n" + struct.pack("<fff", 0, 0, 0))
        with pytest.raises(FileFormatError, match="grayscale"):
            fileio.load_pfm(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.pfm"
        p.write_bytes(b"Pf\n3 3\n-1.0\n" + struct.pack("<f", 0.0))
        with pytest.raises(FileFormatError, match="truncated"):
            fileio.load_pfm(p)


class TestWeightStore:
    def test_round_trip_multi_dtype(self, tmp_path):
        rng = np.random.default_rng(6)
        store = WeightStore()
        store["fusion_lsr/enc0/weight"] = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        store["fusion_lsr/enc0/bias"] = rng.standard_normal(4)
        store["fusion_hsr/grid/slope"] = rng.random(8).astype(np.float32)
        p = tmp_path / "w.duow"
        store.save(p)
        back = WeightStore.load(p)
        assert back.names() == store.names()
        for name, arr in store.items():
            got = back[name]
            assert got.dtype == arr.dtype
            np.testing.assert_array_equal(got, arr)

    def test_manifest_is_first_line_json(self, tmp_path):
        store = WeightStore({"a/w": np.zeros((2, 2), dtype=np.float32)})
        p = tmp_path / "w.duow"
        store.save(p)
        first = p.read_bytes().split(b"\n", 1)[0]
        manifest = json.loads(first)
        assert manifest["format"] == fileio.WEIGHTS_FORMAT
        assert manifest["entries"]["a/w"]["shape"] == [2, 2]

    def test_rejects_nonfinite(self):
        store = WeightStore()
        with pytest.raises(ValueError):
            store["x"] = np.array([np.nan])

    def test_bad_format_marker(self, tmp_path):
        p = tmp_path / "bad.duow"
        p.write_bytes(b'{"format":"something-else","entries":{}}\n')
        with pytest.raises(FileFormatError, match="format"):
            WeightStore.load(p)

    def test_truncated_payload(self, tmp_path):
        store = WeightStore({"a": np.ones(8, dtype=np.float64)})
        p = tmp_path / "w.duow"
        store.save(p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(FileFormatError, match="truncated"):
            WeightStore.load(p)

    def test_missing_parameter_keyerror(self):
        with pytest.raises(KeyError):
            WeightStore()["nope"]


class TestFrameSequences:
    def test_save_load_sequence(self, tmp_path):
        rng = np.random.default_rng(7)
        frames = [Frame(np.round(rng.random((4, 4, 3)) * 255) / 255) for _ in range(3)]
        fileio.save_frame_sequence(tmp_path / "seq", frames)
        back = fileio.load_frame_sequence(tmp_path / "seq")
        assert len(back) == 3
        for a, b in zip(frames, back):
            np.testing.assert_array_equal(a.data, b.data)

    def test_zero_padded_names(self, tmp_path):
        fileio.save_frame_sequence(tmp_path / "seq", [Frame.filled(2, 2, 1, 0.5)])
        assert (tmp_path / "seq" / "000000.png").exists()

    def test_empty_dir_raises(self, tmp_path):
        (tmp_path / "seq").mkdir()
        with pytest.raises(FileNotFoundError):
            fileio.load_frame_sequence(tmp_path / "seq")
