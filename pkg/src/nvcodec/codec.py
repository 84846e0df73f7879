"""Sequence-level coding: GOP scheduling, padding, and the container glue.

Each group of pictures opens with an intra frame that also resets both
recurrent states, so groups decode independently; the following frames are
predicted from the previous reconstruction and carry motion plus residual
segments. Frames are replicate-padded on the right and bottom to the model
stride; the header keeps both true and padded extents so decode can crop.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from . import container as C
from . import intra as IC
from . import inter as P
from . import metrics as M
from . import nn
from . import residual as R
from .config import CodecConfig
from .errors import BitstreamError, DataError
from . import tensor as T

MAX_EXTENT = 65535  # header stores extents as u16


class CodecModels(nn.Module):
    """The three model groups that share one checkpoint."""

    def __init__(self, seed: int = 0):
        self.intra = IC.IntraModel(seed)
        self.inter = P.InterModel(seed + 100)
        self.residual = R.ResidualModel(seed + 200)

    def hash8(self) -> bytes:
        return nn.state_hash(self.state_dict())


def models_from_checkpoint(path) -> CodecModels:
    models = CodecModels(seed=0)
    models.load_state_dict(nn.load_checkpoint(path))
    return models


@dataclass
class FrameStat:
    index: int
    frame_type: str  # "I" or "P"
    byte_count: int
    bpp: float


@dataclass
class EncodeResult:
    blob: bytes
    stats: list[FrameStat]
    recons: np.ndarray  # encoder-side reconstructions, cropped to true extents

    @property
    def total_bits(self) -> int:
        return sum(8 * s.byte_count for s in self.stats)


def _check_sequence(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise DataError(f"sequence must be (T,3,H,W), got {frames.shape}")
    if frames.shape[0] < 1:
        raise DataError("sequence has no frames")
    h, w = frames.shape[2:]
    if h > MAX_EXTENT or w > MAX_EXTENT:
        raise DataError(f"frame {h}x{w} exceeds the {MAX_EXTENT} header limit")
    if not np.all(np.isfinite(frames)):
        raise DataError("sequence contains non-finite values")
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise DataError("sequence values outside [0, 1]")
    return frames


def pad_to_stride(frames: np.ndarray, stride: int = IC.TOTAL_STRIDE) -> np.ndarray:
    """Replicate-pads the bottom/right edges up to a stride multiple."""
    h, w = frames.shape[-2:]
    ph = -h % stride
    pw = -w % stride
    if ph == 0 and pw == 0:
        return frames
    pad = [(0, 0)] * (frames.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(frames, pad, mode="edge")


def encode_sequence(frames: np.ndarray, models: CodecModels,
                    config: CodecConfig | None = None) -> EncodeResult:
    """Codes a (T,3,H,W) sequence into one container."""
    config = config or CodecConfig()
    frames = _check_sequence(frames)
    count, _, height, width = frames.shape
    padded = pad_to_stride(frames)
    ph, pw = padded.shape[2:]
    pixels = float(height * width)

    header = C.ContainerHeader(width, height, pw, ph, config.gop, count,
                               models.hash8())
    records = [header.pack()]
    stats: list[FrameStat] = []
    recons: list[np.ndarray] = []
    ref = None
    temporal_state = None
    residual_state = None
    for t in range(count):
        cur = padded[t]
        if t % config.gop == 0:
            code, recon = IC.intra_encode(cur, models.intra)
            payload = code.to_bytes()
            records.append(C.pack_frame_record(C.FRAME_INTRA, payload))
            temporal_state = models.inter.temporal.initial_state(ph, pw)
            residual_state = models.residual.initial_state(ph, pw)
            kind = "I"
        else:
            flow_code, prediction, temporal_state = models.inter.predict_coded(
                ref, cur, temporal_state
            )
            res_code, recon, residual_state = R.residual_encode(
                cur, prediction, models.residual, residual_state
            )
            payload = C.pack_inter_payload(flow_code.to_bytes(), res_code.to_bytes())
            records.append(C.pack_frame_record(C.FRAME_INTER, payload))
            kind = "P"
        ref = recon
        recons.append(recon[:, :height, :width])
        stats.append(FrameStat(t, kind, len(payload), 8.0 * len(payload) / pixels))
    return EncodeResult(b"".join(records), stats, np.stack(recons))


def _decode_inter_payload(payload: bytes) -> tuple[P.FlowCode, R.ResidualCode]:
    if not payload or payload[0] != C.SEGMENT_FLOW:
        raise BitstreamError("inter payload does not start with a flow segment tag")
    flow_code = P.FlowCode.from_bytes(payload[1:])
    pos = 1 + 8 + len(flow_code.segment)
    if pos >= len(payload) or payload[pos] != C.SEGMENT_RESIDUAL:
        raise BitstreamError("inter payload missing the residual segment tag")
    return flow_code, R.ResidualCode.from_bytes(payload[pos + 1 :])


def _require_shape(label: str, got: tuple[int, ...], want: tuple[int, ...]) -> None:
    # wire shape fields are attacker-controlled; reject before any allocation
    if tuple(got) != want:
        raise BitstreamError(f"{label} shape {tuple(got)} does not match {want}")


def decode_sequence(blob: bytes, models: CodecModels,
                    on_error: str = "raise") -> np.ndarray:
    """Decodes a container back to (T,3,H,W) frames cropped to true extents.

    on_error="raise" propagates the first decode failure; "stop" returns the
    frames decoded before it. Group-opening intra frames reset all recurrent
    state, so a corrupted group never disturbs the groups before it.
    """
    if on_error not in ("raise", "stop"):
        raise DataError(f"on_error must be 'raise' or 'stop', got {on_error!r}")
    header = C.ContainerHeader.unpack(blob)
    own_hash = models.hash8()
    if header.model_hash != own_hash:
        raise BitstreamError(
            f"model hash mismatch: bitstream carries {header.model_hash.hex()}, "
            f"loaded weights hash to {own_hash.hex()}"
        )
    ph, pw = header.padded_height, header.padded_width
    if ph % IC.TOTAL_STRIDE or pw % IC.TOTAL_STRIDE or \
            ph < header.height or pw < header.width:
        raise BitstreamError(f"padded extents {ph}x{pw} are not a valid padding "
                             f"of {header.height}x{header.width}")
    latent_shape = (1, IC.LATENT_CHANNELS, ph // 4, pw // 4)
    hyper_shape = (1, IC.HYPER_CHANNELS, ph // IC.TOTAL_STRIDE, pw // IC.TOTAL_STRIDE)
    flow_shape = (1, P.FLOW_LATENT_CHANNELS, ph // P.FLOW_STRIDE, pw // P.FLOW_STRIDE)

    frames: list[np.ndarray] = []
    ref = None
    temporal_state = None
    residual_state = None
    records = C.iter_frame_records(blob)
    while len(frames) < header.frame_count:
        try:
            try:
                frame_type, payload, _ = next(records)
            except StopIteration:
                raise BitstreamError(
                    f"container ends after {len(frames)} of "
                    f"{header.frame_count} frames"
                ) from None
            if frame_type == C.FRAME_INTRA:
                code = IC.IntraCode.from_bytes(payload)
                _require_shape("intra latent", code.latent_shape, latent_shape)
                _require_shape("intra hyper", code.hyper_shape, hyper_shape)
                recon = IC.intra_decode(code, models.intra)
                temporal_state = models.inter.temporal.initial_state(ph, pw)
                residual_state = models.residual.initial_state(ph, pw)
            else:
                if ref is None:
                    raise BitstreamError("inter frame before any intra frame")
                flow_code, res_code = _decode_inter_payload(payload)
                _require_shape("flow latent", flow_code.latent_shape, flow_shape)
                _require_shape("residual latent", res_code.latent_shape, latent_shape)
                _require_shape("residual hyper", res_code.hyper_shape, hyper_shape)
                _, prediction, temporal_state = models.inter.predict_coded(
                    ref, None, temporal_state, code=flow_code
                )
                recon, residual_state = R.residual_decode(
                    res_code, prediction, models.residual, residual_state
                )
        except (BitstreamError, DataError, T.ShapeMismatchError,
                struct.error, ValueError, IndexError):
            if on_error == "stop":
                break
            raise
        ref = recon
        frames.append(recon[:, : header.height, : header.width])
    return np.stack(frames) if frames else np.zeros(
        (0, 3, header.height, header.width)
    )


def evaluate_coding(frames: np.ndarray, models: CodecModels,
                    config: CodecConfig | None = None
                    ) -> tuple[float, float, bytes]:
    """Encodes, decodes, and scores one sequence; returns (bpp, ms_ssim, blob)."""
    result = encode_sequence(frames, models, config)
    decoded = decode_sequence(result.blob, models)
    count, _, height, width = np.asarray(frames).shape
    bpp = result.total_bits / float(count * height * width)
    quality = float(np.mean([M.ms_ssim(a, b) for a, b in zip(frames, decoded)]))
    return bpp, quality, result.blob


def rd_sweep(frames: np.ndarray, checkpoints: list[CodecModels],
             config: CodecConfig | None = None) -> M.RDCurve:
    """One rate point per model; duplicate rates collapse with a warning."""
    if len(checkpoints) < 4:
        raise DataError(f"sweep needs >= 4 checkpoints, got {len(checkpoints)}")
    points = []
    for models in checkpoints:
        bpp, quality, _ = evaluate_coding(frames, models, config)
        points.append(M.RDPoint(bpp, quality))
    points.sort(key=lambda p: p.rate)
    merged: list[M.RDPoint] = []
    for point in points:
        if merged and point.rate == merged[-1].rate:
            warnings.warn(f"duplicate rate {point.rate:.6f} bpp: merging points")
            mean_q = (merged[-1].ms_ssim + point.ms_ssim) / 2.0
            merged[-1] = M.RDPoint(point.rate, mean_q)
        else:
            merged.append(point)
    return M.RDCurve(merged)
