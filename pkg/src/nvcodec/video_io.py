"""Video ingest and export: Y4M, numbered PNG sequences, raw planar RGB.

Frames travel through the codec as (T, 3, H, W) float64 arrays in [0, 1].
Y4M carries 4:2:0 limited-range BT.601; the conversion coefficients live in
this module and nowhere else, so transport stays testable in isolation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

Y4M_SIGNATURE = b"YUV4MPEG2"
_420_FAMILY = {"420", "420jpeg", "420mpeg2", "420paldv"}

# limited-range BT.601: luma spans [16, 235], chroma [16, 240] around 128
_KR, _KG, _KB = 0.299, 0.587, 0.114
_Y_SCALE, _Y_OFFSET = 219.0, 16.0
_C_SCALE, _C_OFFSET = 224.0, 128.0
_CB_NORM = 1.772  # 2 * (1 - KB)
_CR_NORM = 1.402  # 2 * (1 - KR)


@dataclass
class VideoSequence:
    """Frames plus the transport metadata worth round-tripping."""

    frames: np.ndarray
    fps: tuple[int, int] = (30, 1)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise DataError(
                f"frames must be (T,3,H,W), got {self.frames.shape}"
            )

    def __len__(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# color conversion


def rgb_to_ycbcr420(frame: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(3,H,W) RGB in [0,1] -> uint8 (Y, Cb, Cr) planes, chroma at half size.

    Chroma is the mean of each 2x2 block; extents must be even.
    """
    _, h, w = frame.shape
    if h % 2 or w % 2:
        raise DataError(f"4:2:0 needs even extents, got {h}x{w}")
    r, g, b = frame[0], frame[1], frame[2]
    luma = _KR * r + _KG * g + _KB * b
    cb = (b - luma) / _CB_NORM
    cr = (r - luma) / _CR_NORM
    cb = cb.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    cr = cr.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    y_plane = np.clip(np.rint(_Y_OFFSET + _Y_SCALE * luma), 0, 255)
    cb_plane = np.clip(np.rint(_C_OFFSET + _C_SCALE * cb), 0, 255)
    cr_plane = np.clip(np.rint(_C_OFFSET + _C_SCALE * cr), 0, 255)
    return (y_plane.astype(np.uint8), cb_plane.astype(np.uint8),
            cr_plane.astype(np.uint8))


def ycbcr420_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """uint8 planes (chroma half size, nearest-upsampled) -> (3,H,W) in [0,1]."""
    luma = (y.astype(np.float64) - _Y_OFFSET) / _Y_SCALE
    cb_f = (cb.astype(np.float64) - _C_OFFSET) / _C_SCALE
    cr_f = (cr.astype(np.float64) - _C_OFFSET) / _C_SCALE
    cb_full = np.repeat(np.repeat(cb_f, 2, axis=0), 2, axis=1)
    cr_full = np.repeat(np.repeat(cr_f, 2, axis=0), 2, axis=1)
    r = luma + _CR_NORM * cr_full
    b = luma + _CB_NORM * cb_full
    g = (luma - _KR * r - _KB * b) / _KG
    return np.clip(np.stack([r, g, b]), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Y4M


def _parse_y4m_header(blob: bytes) -> tuple[int, int, tuple[int, int], str, int]:
    end = blob.find(b"\n")
    if not blob.startswith(Y4M_SIGNATURE) or end < 0:
        raise DataError("bad Y4M signature at byte 0")
    width = height = 0
    fps = (30, 1)
    colorspace = "420jpeg"
    offset = len(Y4M_SIGNATURE)
    for token in blob[offset:end].split(b" "):
        at = blob.index(token, offset, end) if token else offset
        if not token:
            continue
        tag, value = chr(token[0]), token[1:].decode("ascii", "replace")
        try:
            if tag == "W":
                width = int(value)
            elif tag == "H":
                height = int(value)
            elif tag == "F":
                num, den = value.split(":")
                fps = (int(num), int(den))
            elif tag == "C":
                colorspace = value
            elif tag in ("I", "A", "X"):
                pass
            else:
                raise ValueError
        except ValueError:
            raise DataError(
                f"bad Y4M header token {token.decode('ascii', 'replace')!r} "
                f"at byte {at}"
            ) from None
    if width <= 0 or height <= 0:
        raise DataError(f"Y4M header missing extents before byte {end}")
    if colorspace not in _420_FAMILY:
        raise DataError(f"unsupported Y4M colorspace C{colorspace}")
    return width, height, fps, colorspace, end + 1


def read_y4m(path) -> VideoSequence:
    blob = Path(path).read_bytes()
    width, height, fps, _, offset = _parse_y4m_header(blob)
    if height % 2 or width % 2:
        raise DataError(f"4:2:0 needs even extents, got {height}x{width}")
    y_size = width * height
    c_size = (width // 2) * (height // 2)
    frames = []
    while offset < len(blob):
        end = blob.find(b"\n", offset)
        if not blob.startswith(b"FRAME", offset) or end < 0:
            raise DataError(f"FRAME marker missing at byte {offset}")
        start = end + 1
        need = y_size + 2 * c_size
        if start + need > len(blob):
            raise DataError(
                f"file truncated at byte {len(blob)}: frame {len(frames)} "
                f"needs {need} bytes"
            )
        raw = np.frombuffer(blob, dtype=np.uint8, count=need, offset=start)
        y = raw[:y_size].reshape(height, width)
        cb = raw[y_size : y_size + c_size].reshape(height // 2, width // 2)
        cr = raw[y_size + c_size :].reshape(height // 2, width // 2)
        frames.append(ycbcr420_to_rgb(y, cb, cr))
        offset = start + need
    if not frames:
        raise DataError(f"Y4M stream has no frames after byte {offset}")
    return VideoSequence(np.stack(frames), fps=fps)


def write_y4m(path, sequence: VideoSequence) -> None:
    frames = sequence.frames
    num, den = sequence.fps
    _, _, h, w = frames.shape
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{w} H{h} F{num}:{den} Ip A1:1 C420jpeg\n".encode())
        for frame in frames:
            y, cb, cr = rgb_to_ycbcr420(frame)
            fh.write(b"FRAME\n")
            fh.write(y.tobytes())
            fh.write(cb.tobytes())
            fh.write(cr.tobytes())


# ---------------------------------------------------------------------------
# PNG sequences

_PNG_INDEX = re.compile(r"(\d+)\.png$", re.IGNORECASE)


def read_png_dir(path) -> VideoSequence:
    directory = Path(path)
    indexed = []
    for entry in directory.iterdir() if directory.is_dir() else ():
        match = _PNG_INDEX.search(entry.name)
        if match:
            indexed.append((int(match.group(1)), entry))
    if not indexed:
        raise DataError(f"no numbered .png files in {directory}")
    indexed.sort()
    first = indexed[0][0]
    for pos, (idx, _) in enumerate(indexed):
        if idx != first + pos:
            raise DataError(
                f"PNG sequence in {directory} missing index {first + pos} "
                f"(have {indexed[pos - 1][0]} then {idx})"
            )
    frames = []
    for _, entry in indexed:
        with Image.open(entry) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        frames.append(rgb.transpose(2, 0, 1))
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise DataError(f"PNG frames disagree on extents: {sorted(shapes)}")
    return VideoSequence(np.stack(frames))


def write_png_dir(path, sequence: VideoSequence, prefix: str = "frame") -> list[Path]:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for t, frame in enumerate(sequence.frames):
        img = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        out = directory / f"{prefix}_{t:04d}.png"
        Image.fromarray(img.transpose(1, 2, 0)).save(out)
        written.append(out)
    return written


# ---------------------------------------------------------------------------
# raw planar RGB

_RAW_EXTENTS = re.compile(r"(\d+)x(\d+)")


def read_raw_rgb(path, width: int | None = None, height: int | None = None
                 ) -> VideoSequence:
    """Reads frame-interleaved planar RGB bytes (all R rows, then G, then B).

    Extents come from the arguments or from a WxH token in the file name
    (e.g. ``clip_64x48.rgb``).
    """
    location = Path(path)
    if width is None or height is None:
        match = _RAW_EXTENTS.search(location.name)
        if not match:
            raise DataError(
                f"raw RGB needs extents; none given and no WxH in "
                f"{location.name!r}"
            )
        width, height = int(match.group(1)), int(match.group(2))
    blob = location.read_bytes()
    frame_bytes = 3 * width * height
    if not blob or len(blob) % frame_bytes:
        raise DataError(
            f"raw RGB size {len(blob)} is not a multiple of "
            f"{frame_bytes} ({width}x{height} frames)"
        )
    data = np.frombuffer(blob, dtype=np.uint8)
    frames = data.reshape(-1, 3, height, width).astype(np.float64) / 255.0
    return VideoSequence(frames)


def write_raw_rgb(path, sequence: VideoSequence) -> None:
    data = np.clip(np.rint(sequence.frames * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(data.tobytes())


# ---------------------------------------------------------------------------
# dispatch


def ingest(path, width: int | None = None, height: int | None = None
           ) -> VideoSequence:
    """Loads a video by extension: .y4m, .rgb/.raw, or a directory of PNGs."""
    location = Path(path)
    if location.is_dir():
        return read_png_dir(location)
    suffix = location.suffix.lower()
    if suffix == ".y4m":
        return read_y4m(location)
    if suffix in (".rgb", ".raw"):
        return read_raw_rgb(location, width, height)
    raise DataError(f"unsupported video input {location.name!r} "
                    "(expected .y4m, .rgb, .raw, or a PNG directory)")
