"""Transport formats: Y4M, PNG sequences, raw planar RGB."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcodec import video_io as V
from nvcodec.errors import DataError


def _smooth_frames(seed, count=2, h=16, w=24, cell=4):
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.2, 0.8, size=(count, 3, h // cell, w // cell))
    return np.kron(coarse, np.ones((cell, cell)))


class TestVideoSequence:
    def test_wraps_and_casts(self):
        seq = V.VideoSequence(np.zeros((2, 3, 8, 8), dtype=np.float32))
        assert seq.frames.dtype == np.float64
        assert len(seq) == 2

    def test_rejects_wrong_layout(self):
        with pytest.raises(DataError, match=r"\(T,3,H,W\)"):
            V.VideoSequence(np.zeros((3, 8, 8)))


class TestColorConversion:
    def test_gray_is_chroma_neutral(self):
        frame = np.full((3, 8, 8), 0.5)
        _, cb, cr = V.rgb_to_ycbcr420(frame)
        assert np.all(cb == 128)
        assert np.all(cr == 128)

    def test_luma_weights(self):
        # BT.601: Y for pure red/green/blue at full scale
        for channel, weight in ((0, 0.299), (1, 0.587), (2, 0.114)):
            frame = np.zeros((3, 2, 2))
            frame[channel] = 1.0
            y, _, _ = V.rgb_to_ycbcr420(frame)
            assert np.all(y == round(16 + 219 * weight))

    def test_odd_extents_rejected(self):
        with pytest.raises(DataError, match="even extents"):
            V.rgb_to_ycbcr420(np.zeros((3, 7, 8)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(16, 235))
    def test_gray_round_trip_is_exact(self, level):
        y = np.full((4, 4), level, dtype=np.uint8)
        c = np.full((2, 2), 128, dtype=np.uint8)
        rgb = V.ycbcr420_to_rgb(y, c, c)
        assert np.allclose(rgb[0], rgb[1]) and np.allclose(rgb[1], rgb[2])
        y2, cb2, cr2 = V.rgb_to_ycbcr420(rgb)
        assert np.array_equal(y2, y)
        assert np.all(cb2 == 128) and np.all(cr2 == 128)


class TestY4M:
    def test_round_trip_metadata_and_content(self, tmp_path):
        frames = _smooth_frames(0)
        path = tmp_path / "clip.y4m"
        V.write_y4m(path, V.VideoSequence(frames, fps=(25, 1)))
        back = V.read_y4m(path)
        assert back.frames.shape == frames.shape
        assert back.fps == (25, 1)
        # 4:2:0 loses chroma detail; smooth content survives to ~1/128
        assert np.abs(back.frames - frames).max() < 0.01

    def test_gray_frame_transport_is_lossless(self, tmp_path):
        gray = np.full((2, 3, 8, 8), 0.4)
        first = tmp_path / "a.y4m"
        second = tmp_path / "b.y4m"
        V.write_y4m(first, V.VideoSequence(gray))
        V.write_y4m(second, V.read_y4m(first))
        assert first.read_bytes() == second.read_bytes()

    def test_bad_signature_names_byte_zero(self, tmp_path):
        path = tmp_path / "bad.y4m"
        path.write_bytes(b"JUNKJUNKJUNK\n")
        with pytest.raises(DataError, match="byte 0"):
            V.read_y4m(path)

    def test_bad_token_names_offset(self, tmp_path):
        path = tmp_path / "bad.y4m"
        path.write_bytes(b"YUV4MPEG2 W8 Hxx F30:1\nFRAME\n" + bytes(96))
        with pytest.raises(DataError, match=r"'Hxx' at byte 13"):
            V.read_y4m(path)

    def test_truncated_frame_names_offset(self, tmp_path):
        frames = _smooth_frames(1, count=2, h=8, w=8)
        path = tmp_path / "t.y4m"
        V.write_y4m(path, V.VideoSequence(frames))
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(DataError, match="truncated at byte"):
            V.read_y4m(path)

    def test_missing_frame_marker(self, tmp_path):
        path = tmp_path / "m.y4m"
        path.write_bytes(b"YUV4MPEG2 W8 H8 F30:1\nNOTAFRAME\n" + bytes(96))
        with pytest.raises(DataError, match="FRAME marker missing at byte 22"):
            V.read_y4m(path)

    def test_unsupported_colorspace(self, tmp_path):
        path = tmp_path / "c.y4m"
        path.write_bytes(b"YUV4MPEG2 W8 H8 F30:1 C444\nFRAME\n" + bytes(192))
        with pytest.raises(DataError, match="C444"):
            V.read_y4m(path)

    def test_no_frames(self, tmp_path):
        path = tmp_path / "e.y4m"
        path.write_bytes(b"YUV4MPEG2 W8 H8 F30:1\n")
        with pytest.raises(DataError, match="no frames"):
            V.read_y4m(path)


class TestPngSequence:
    def test_round_trip(self, tmp_path):
        frames = _smooth_frames(2, count=3)
        V.write_png_dir(tmp_path, V.VideoSequence(frames))
        back = V.read_png_dir(tmp_path)
        assert back.frames.shape == frames.shape
        # 8-bit quantization only
        assert np.abs(back.frames - frames).max() <= 0.5 / 255 + 1e-12

    def test_gap_lists_missing_index(self, tmp_path):
        V.write_png_dir(tmp_path, V.VideoSequence(np.zeros((3, 3, 8, 8))))
        (tmp_path / "frame_0001.png").unlink()
        with pytest.raises(DataError, match=r"missing index 1 \(have 0 then 2\)"):
            V.read_png_dir(tmp_path)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DataError, match="no numbered .png"):
            V.read_png_dir(tmp_path)

    def test_mismatched_extents(self, tmp_path):
        V.write_png_dir(tmp_path, V.VideoSequence(np.zeros((1, 3, 8, 8))))
        V.write_png_dir(tmp_path, V.VideoSequence(np.zeros((1, 3, 16, 16))),
                        prefix="other")
        # other_0000 and frame_0000 collide on index 0; extents disagree
        with pytest.raises(DataError):
            V.read_png_dir(tmp_path)


class TestRawRgb:
    def test_round_trip_with_extents_in_name(self, tmp_path):
        frames = _smooth_frames(3, h=16, w=24)
        path = tmp_path / "clip_24x16.rgb"
        V.write_raw_rgb(path, V.VideoSequence(frames))
        back = V.read_raw_rgb(path)
        assert back.frames.shape == frames.shape
        assert np.abs(back.frames - frames).max() <= 0.5 / 255 + 1e-12

    def test_needs_extents(self, tmp_path):
        path = tmp_path / "clip.rgb"
        path.write_bytes(bytes(3 * 8 * 8))
        with pytest.raises(DataError, match="needs extents"):
            V.read_raw_rgb(path)

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "clip_8x8.rgb"
        path.write_bytes(bytes(100))
        with pytest.raises(DataError, match="not a multiple"):
            V.read_raw_rgb(path)

    def test_explicit_extents_override(self, tmp_path):
        path = tmp_path / "anything.raw"
        path.write_bytes(bytes(3 * 4 * 6))
        back = V.read_raw_rgb(path, width=6, height=4)
        assert back.frames.shape == (1, 3, 4, 6)


class TestIngest:
    def test_dispatch(self, tmp_path):
        frames = _smooth_frames(4, h=8, w=8)
        y4m = tmp_path / "a.y4m"
        V.write_y4m(y4m, V.VideoSequence(frames))
        assert V.ingest(y4m).frames.shape == frames.shape

        pngs = tmp_path / "pngs"
        V.write_png_dir(pngs, V.VideoSequence(frames))
        assert V.ingest(pngs).frames.shape == frames.shape

        raw = tmp_path / "b_8x8.rgb"
        V.write_raw_rgb(raw, V.VideoSequence(frames))
        assert V.ingest(raw).frames.shape == frames.shape

    def test_unknown_extension(self, tmp_path):
        path = tmp_path / "clip.mp4"
        path.write_bytes(b"x")
        with pytest.raises(DataError, match="unsupported video input"):
            V.ingest(path)
