"""Tensor file format and PNG frame/mask round trips."""

import io
import struct

import numpy as np
import pytest

from peelnet import opnt
from peelnet.imgio import (
    list_frames,
    load_frame,
    load_mask,
    save_frame,
    save_mask,
)
from peelnet.masks import MaskPlane


class TestOpnt:
    def test_pack_layout(self):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        buf = opnt.pack(arr)
        assert buf[:4] == b"OPNT"
        rank = struct.unpack("<I", buf[4:8])[0]
        assert rank == 2
        assert struct.unpack("<2I", buf[8:16]) == (2, 3)
        payload = np.frombuffer(buf[16:], dtype="<f4")
        assert np.array_equal(payload.reshape(2, 3), arr)

    def test_roundtrip_bytes(self, rng):
        arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
        out = opnt.unpack(opnt.pack(arr))
        assert out.dtype == np.float32
        assert np.array_equal(out, arr)

    def test_roundtrip_file(self, tmp_path, rng):
        arr = rng.standard_normal((2, 7)).astype(np.float32)
        path = tmp_path / "t.opnt"
        opnt.write(path, arr)
        assert np.array_equal(opnt.read(path), arr)

    def test_roundtrip_stream(self, rng):
        arr = rng.standard_normal((4,)).astype(np.float32)
        stream = io.BytesIO()
        opnt.write(stream, arr)
        stream.seek(0)
        assert np.array_equal(opnt.read(stream), arr)

    def test_scalar_rank_zero(self):
        arr = np.float32(2.5)
        out = opnt.unpack(opnt.pack(arr))
        assert out.shape == ()
        assert out == np.float32(2.5)

    def test_float64_input_downcast(self):
        arr = np.array([1.0, 2.0], dtype=np.float64)
        out = opnt.unpack(opnt.pack(arr))
        assert out.dtype == np.float32

    def test_bad_magic_raises(self):
        with pytest.raises(ValueError, match="magic"):
            opnt.unpack(b"XXXX" + b"\x00" * 16)

    def test_truncated_payload_raises(self):
        buf = opnt.pack(np.ones((2, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="truncated"):
            opnt.unpack(buf[:-3])


class TestFramePng:
    def test_save_load_u8_exact(self, tmp_path, rng):
        # values on the 1/255 grid survive the round trip bit-exactly
        q = rng.integers(0, 256, size=(3, 5, 7)).astype(np.float32) / 255.0
        path = tmp_path / "f.png"
        save_frame(path, q)
        out = load_frame(path)
        assert out.dtype == np.float32
        assert out.shape == (3, 5, 7)
        assert np.array_equal(out, q.astype(np.float32))

    def test_save_quantizes_once(self, tmp_path):
        frame = np.full((3, 2, 2), 0.5, dtype=np.float32)
        path = tmp_path / "g.png"
        save_frame(path, frame)
        out = load_frame(path)
        assert np.allclose(out, np.rint(0.5 * 255) / 255.0)

    def test_save_clips_out_of_range(self, tmp_path):
        frame = np.array([[[-0.5]], [[0.5]], [[1.5]]], dtype=np.float32)
        path = tmp_path / "h.png"
        save_frame(path, frame)
        out = load_frame(path)
        assert out[0, 0, 0] == 0.0
        assert out[2, 0, 0] == 1.0

    def test_save_bad_shape_raises(self, tmp_path):
        with pytest.raises(ValueError, match="3,H,W"):
            save_frame(tmp_path / "x.png", np.zeros((5, 5)))

    def test_load_range(self, tmp_path, rng):
        q = rng.integers(0, 256, size=(3, 4, 4)).astype(np.float32) / 255.0
        save_frame(tmp_path / "r.png", q)
        out = load_frame(tmp_path / "r.png")
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestMaskPng:
    def test_roundtrip(self, tmp_path, rng):
        mask = MaskPlane(rng.random((6, 9)) > 0.5)
        path = tmp_path / "m.png"
        save_mask(path, mask)
        assert load_mask(path) == mask

    def test_strict_rejects_grey(self, tmp_path):
        from PIL import Image

        arr = np.array([[0, 128], [255, 7]], dtype=np.uint8)
        path = tmp_path / "grey.png"
        Image.fromarray(arr, mode="L").save(path)
        with pytest.raises(ValueError, match="0/255"):
            load_mask(path, strict=True)

    def test_lenient_thresholds_at_128(self, tmp_path):
        from PIL import Image

        arr = np.array([[0, 127], [128, 255]], dtype=np.uint8)
        path = tmp_path / "grey.png"
        Image.fromarray(arr, mode="L").save(path)
        mask = load_mask(path, strict=False)
        assert np.array_equal(mask.bits, np.array([[False, False], [True, True]]))


class TestListFrames:
    def test_sorted_order(self, tmp_path):
        for name in ("b.png", "a.png", "c.png"):
            save_frame(tmp_path / name, np.zeros((3, 2, 2), dtype=np.float32))
        (tmp_path / "notes.txt").write_text("skip me")
        files = list_frames(tmp_path)
        assert [p.name for p in files] == ["a.png", "b.png", "c.png"]

    def test_missing_directory_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list_frames(tmp_path / "nope")

    def test_empty_directory_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no image"):
            list_frames(tmp_path)
