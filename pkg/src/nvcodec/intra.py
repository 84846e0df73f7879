"""Intra texture codec: analysis/synthesis transforms with GDN, a hyper
autoencoder whose features steer both the entropy model and reconstruction,
and an autoregressive context model over decoded latents.

Bit-exactness contract: the encoder and the decoder run the *same* sequential
per-position parameter routine over the same integer latents, so the (mu,
sigma) streams and CDF tables match exactly within one build. The vectorized
context path exists for training-time rate estimates and causality probes;
it agrees with the sequential path numerically but is never used for coding.

Serialization order of latent symbols: raster scan over spatial positions,
channels innermost at each position.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import entropy as E
from . import nn
from . import rangecoder as RC
from . import tensor as T
from .errors import BitstreamError, DataError
from .tensor import Tensor

LATENT_CHANNELS = 32
HYPER_CHANNELS = 16
FEATURE_CHANNELS = 48
ICN_CHANNELS = 64
CONTEXT_KERNEL = 5
TOTAL_STRIDE = 16  # 4x transform, further 4x hyper


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class FactorizedPrior(nn.Module):
    """Zero-mean Gaussian with one learned scale per channel."""

    def __init__(self, channels: int):
        init = nn.softplus_inverse(1.0 - E.SIGMA_MIN)  # start at sigma 1.0
        self.raw_sigma = nn.Parameter(np.full(channels, init))
        self.channels = channels

    def sigma(self) -> Tensor:
        return T.add(T.softplus(self.raw_sigma), Tensor(E.SIGMA_MIN))

    def params_like(self, latents: Tensor) -> E.GaussianParams:
        n, c, h, w = latents.shape
        sigma = T.mul(T.reshape(self.sigma(), (1, c, 1, 1)), Tensor(np.ones((n, c, h, w))))
        return E.GaussianParams(mu=Tensor(np.zeros((n, c, h, w))), sigma=sigma)

    def sigma_field(self, shape: tuple[int, ...]) -> np.ndarray:
        """Per-element sigma array for table building (no tape)."""
        sig = E.SIGMA_MIN + _softplus_np(self.raw_sigma.data.astype(np.float64))
        return np.broadcast_to(sig.reshape(1, -1, 1, 1), shape).ravel()


class Encoder(nn.Module):
    """Frame to latents, two stride-2 stages, three residual blocks."""

    def __init__(self, rng, in_ch=3, width=LATENT_CHANNELS):
        self.down1 = nn.Conv2d(in_ch, width, 3, rng, stride=2)
        self.gdn1 = nn.GDN(width)
        self.block1 = nn.ResBlock(width, rng, activation="gdn")
        self.down2 = nn.Conv2d(width, width, 3, rng, stride=2)
        self.gdn2 = nn.GDN(width)
        self.block2 = nn.ResBlock(width, rng, activation="gdn")
        self.block3 = nn.ResBlock(width, rng, activation="gdn")

    def __call__(self, x: Tensor) -> Tensor:
        h = self.gdn1(self.down1(x))
        h = self.block1(h)
        h = self.gdn2(self.down2(h))
        h = self.block2(h)
        return self.block3(h)


class Decoder(nn.Module):
    """Fused features back to a frame; mirror of the encoder with IGDN."""

    def __init__(self, rng, in_ch=ICN_CHANNELS, width=LATENT_CHANNELS, out_ch=3):
        self.head = nn.Conv2d(in_ch, width, 3, rng)
        self.block1 = nn.ResBlock(width, rng, activation="gdn")
        self.block2 = nn.ResBlock(width, rng, activation="gdn")
        self.igdn1 = nn.GDN(width, inverse=True)
        self.up1 = nn.ConvTranspose2d(width, width, 4, rng, stride=2, pad=1)
        self.block3 = nn.ResBlock(width, rng, activation="gdn")
        self.igdn2 = nn.GDN(width, inverse=True)
        self.up2 = nn.ConvTranspose2d(width, out_ch, 4, rng, stride=2, pad=1)

    def __call__(self, fused: Tensor) -> Tensor:
        h = self.block2(self.block1(self.head(fused)))
        h = self.up1(self.igdn1(h))
        h = self.block3(h)
        return self.up2(self.igdn2(h))


class HyperEncoder(nn.Module):
    def __init__(self, rng, in_ch=LATENT_CHANNELS, out_ch=HYPER_CHANNELS):
        self.conv1 = nn.Conv2d(in_ch, in_ch, 3, rng, stride=2)
        self.act = nn.PReLU(in_ch)
        self.conv2 = nn.Conv2d(in_ch, out_ch, 3, rng, stride=2)

    def __call__(self, y: Tensor) -> Tensor:
        return self.conv2(self.act(self.conv1(y)))


class HyperDecoder(nn.Module):
    def __init__(self, rng, in_ch=HYPER_CHANNELS, out_ch=FEATURE_CHANNELS):
        self.up1 = nn.ConvTranspose2d(in_ch, 2 * in_ch, 4, rng, stride=2, pad=1)
        self.act = nn.PReLU(2 * in_ch)
        self.up2 = nn.ConvTranspose2d(2 * in_ch, out_ch, 4, rng, stride=2, pad=1)

    def __call__(self, z: Tensor) -> Tensor:
        return self.up2(self.act(self.up1(z)))


class ContextModel(nn.Module):
    """Masked-conv context plus 1x1 aggregation into per-element (mu, sigma).

    ``temporal_ch`` > 0 adds a separate zero-initialized 1x1 branch for a
    recurrent prior; with that branch's weights at zero the model reduces
    exactly to the spatial-only form.
    """

    def __init__(self, rng, latent_ch=LATENT_CHANNELS, feature_ch=FEATURE_CHANNELS,
                 temporal_ch: int = 0):
        self.masked = nn.MaskedConv2d(latent_ch, feature_ch, CONTEXT_KERNEL, rng)
        hidden = 2 * feature_ch
        self.agg1 = nn.Conv2d(2 * feature_ch, hidden, 1, rng, pad=0)
        self.temporal_ch = temporal_ch
        if temporal_ch:
            self.agg1_temporal = nn.Conv2d(temporal_ch, hidden, 1, rng, pad=0, zero_init=True)
        self.act = nn.PReLU(hidden)
        self.agg2 = nn.Conv2d(hidden, 2 * latent_ch, 1, rng, pad=0)
        self.latent_ch = latent_ch

    def _split_params(self, raw: Tensor) -> E.GaussianParams:
        mu, raw_sigma = T.chunk(raw, 2, axis=1)
        sigma = T.add(T.softplus(raw_sigma), Tensor(E.SIGMA_MIN))
        return E.GaussianParams(mu=mu, sigma=sigma)

    def __call__(self, latents: Tensor, hyper_feats: Tensor,
                 temporal_prior: Tensor | None = None) -> E.GaussianParams:
        """Vectorized, teacher-forced path (training / probes)."""
        if latents.shape[2:] != hyper_feats.shape[2:]:
            raise T.ShapeMismatchError(
                f"hyper features {hyper_feats.shape[2:]} not aligned "
                f"with latents {latents.shape[2:]}"
            )
        ctx = self.masked(latents)
        pre = self.agg1(T.concat([ctx, hyper_feats], axis=1))
        if self.temporal_ch:
            if temporal_prior is None:
                raise T.ShapeMismatchError("temporal prior required by this context model")
            pre = T.add(pre, self.agg1_temporal(temporal_prior))
        return self._split_params(self.agg2(self.act(pre)))

    # -- sequential path: exactly what both coder sides execute ------------

    def masked_weight(self) -> np.ndarray:
        return self.masked.weight.data * self.masked.mask()

    def position_params(self, canvas_padded: np.ndarray, hyper_col: np.ndarray,
                        i: int, j: int, temporal_col: np.ndarray | None = None,
                        w_ctx: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(mu, sigma) for all channels at one spatial position.

        ``canvas_padded`` is the integer latent canvas padded by the context
        radius; ``hyper_col`` / ``temporal_col`` are the per-position feature
        columns. Pure numpy so both coder sides share every float operation.
        ``w_ctx`` lets callers hoist the masked-weight product out of loops.
        """
        k = CONTEXT_KERNEL
        patch = canvas_padded[:, i : i + k, j : j + k]
        w = self.masked_weight() if w_ctx is None else w_ctx
        ctx = np.tensordot(w, patch, axes=3) + self.masked.bias.data
        col = np.concatenate([ctx, hyper_col])
        pre = self.agg1.weight.data[:, :, 0, 0] @ col + self.agg1.bias.data
        if self.temporal_ch:
            pre = pre + (self.agg1_temporal.weight.data[:, :, 0, 0] @ temporal_col
                         + self.agg1_temporal.bias.data)
        slope = self.act.slope.data
        act = np.where(pre >= 0, pre, slope * pre)
        raw = self.agg2.weight.data[:, :, 0, 0] @ act + self.agg2.bias.data
        mu = raw[: self.latent_ch]
        sigma = E.SIGMA_MIN + _softplus_np(raw[self.latent_ch :])
        return mu, sigma


class IcnFusion(nn.Module):
    """Two 3x3 convolutions over the concatenated latents and hyper features."""

    def __init__(self, rng, latent_ch=LATENT_CHANNELS, feature_ch=FEATURE_CHANNELS,
                 out_ch=ICN_CHANNELS):
        self.conv1 = nn.Conv2d(latent_ch + feature_ch, out_ch, 3, rng)
        self.act = nn.PReLU(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, rng)

    def __call__(self, latents: Tensor, hyper_feats: Tensor) -> Tensor:
        if latents.shape[2:] != hyper_feats.shape[2:]:
            raise T.ShapeMismatchError(
                f"hyper features {hyper_feats.shape[2:]} not aligned "
                f"with latents {latents.shape[2:]}"
            )
        return self.conv2(self.act(self.conv1(T.concat([latents, hyper_feats], axis=1))))


class IntraModel(nn.Module):
    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(rng)
        self.decoder = Decoder(rng)
        self.hyper_enc = HyperEncoder(rng)
        self.hyper_dec = HyperDecoder(rng)
        self.context = ContextModel(rng)
        self.icn = IcnFusion(rng)
        self.hyper_prior = FactorizedPrior(HYPER_CHANNELS)


def context_predict(model, latents: Tensor, hyper_feats: Tensor,
                    temporal_prior: Tensor | None = None) -> E.GaussianParams:
    """Per-element (mu, sigma); element i sees only raster-earlier latents."""
    return model.context(latents, hyper_feats, temporal_prior)


def icn_fuse(model, latents: Tensor, hyper_feats: Tensor) -> Tensor:
    return model.icn(latents, hyper_feats)


@dataclass
class IntraCode:
    latent_shape: tuple[int, int, int, int]
    hyper_shape: tuple[int, int, int, int]
    hyper_segment: bytes
    latent_segment: bytes

    @property
    def total_bytes(self) -> int:
        return len(self.hyper_segment) + len(self.latent_segment)

    @property
    def rate_bits(self) -> int:
        return 8 * self.total_bytes

    def to_bytes(self) -> bytes:
        head = struct.pack("<8H", *self.latent_shape, *self.hyper_shape)
        return head + self.hyper_segment + self.latent_segment

    @classmethod
    def from_bytes(cls, blob: bytes) -> "IntraCode":
        if len(blob) < 16:
            raise BitstreamError("intra code header truncated")
        values = struct.unpack("<8H", blob[:16])
        pos = 16
        hyper_len = RC.segment_length(blob[pos:])
        hyper_segment = blob[pos : pos + hyper_len]
        pos += hyper_len
        latent_len = RC.segment_length(blob[pos:])
        latent_segment = blob[pos : pos + latent_len]
        if len(latent_segment) < latent_len:
            raise BitstreamError("intra latent segment truncated")
        return cls(tuple(values[:4]), tuple(values[4:]), hyper_segment, latent_segment)


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DataError(f"frame must be (3,H,W), got {frame.shape}")
    h, w = frame.shape[1:]
    if h < TOTAL_STRIDE or w < TOTAL_STRIDE:
        raise DataError(f"frame {h}x{w} smaller than the {TOTAL_STRIDE}px stride chain")
    if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
        raise DataError(f"frame {h}x{w} not divisible by stride {TOTAL_STRIDE}")
    return frame


def _code_hyper(model, z_sym: np.ndarray) -> bytes:
    sigma = model.hyper_prior.sigma_field(z_sym.shape)
    mu = np.zeros_like(sigma)
    tables = E.build_cdf_table(E.GaussianParams(Tensor(mu), Tensor(sigma)))
    return RC.range_encode(z_sym.ravel(), tables)


def _decode_hyper(model, segment: bytes, shape: tuple[int, ...]) -> np.ndarray:
    sigma = model.hyper_prior.sigma_field(shape)
    mu = np.zeros_like(sigma)
    tables = E.build_cdf_table(E.GaussianParams(Tensor(mu), Tensor(sigma)))
    flat = RC.range_decode(segment, tables, int(np.prod(shape)))
    return flat.reshape(shape).astype(np.float64)


def ar_code_latents(context: ContextModel, hyper_feats: np.ndarray,
                    symbols: np.ndarray | None, shape: tuple[int, ...],
                    temporal_prior: np.ndarray | None = None,
                    decoder: RC.RangeDecoder | None = None,
                    param_sink: list | None = None) -> tuple[np.ndarray, bytes | None]:
    """The shared sequential coding loop.

    Encoding: pass integer ``symbols``; returns (symbols, segment bytes).
    Decoding: pass ``decoder``; returns (decoded symbols, None).
    Both sides reveal the canvas one position at a time and compute identical
    parameter streams. ``param_sink`` collects (mu, sigma) pairs for tests.
    """
    n, c, h, w = shape
    if n != 1:
        raise DataError("coding operates on single-frame batches")
    pad = CONTEXT_KERNEL // 2
    canvas = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    encoding = decoder is None
    if encoding:
        if symbols is None:
            raise DataError("encoder needs the symbol tensor")
        symbols = symbols.reshape(c, h, w)
        encoder = RC.RangeEncoder()
    out = np.zeros((c, h, w), dtype=np.int64)
    w_ctx = context.masked_weight()
    for i in range(h):
        for j in range(w):
            mu, sigma = context.position_params(
                canvas, hyper_feats[0, :, i, j], i, j,
                None if temporal_prior is None else temporal_prior[0, :, i, j],
                w_ctx=w_ctx,
            )
            if param_sink is not None:
                param_sink.append((mu.copy(), sigma.copy()))
            tables = E.build_cdf_table(E.GaussianParams(Tensor(mu), Tensor(sigma)))
            if encoding:
                vals = symbols[:, i, j]
                for ch in range(c):
                    idx = int(vals[ch]) - tables.offset
                    if idx < 0 or idx >= tables.symbol_count:
                        raise DataError(f"latent symbol {vals[ch]} out of coder range")
                    row = tables.rows[ch]
                    encoder.encode(int(row[idx]), int(row[idx + 1]))
                out[:, i, j] = vals
            else:
                for ch in range(c):
                    out[ch, i, j] = decoder.decode(tables.rows[ch]) + tables.offset
            canvas[:, i + pad, j + pad] = out[:, i, j]
    if encoding:
        payload = encoder.finish()
        return out, struct.pack("<I", len(payload)) + payload
    return out, None


def intra_encode(frame: np.ndarray, model: IntraModel) -> tuple[IntraCode, np.ndarray]:
    """Code one frame; returns the code and the decoder-identical recon."""
    frame = _check_frame(frame)
    x = Tensor(frame[None].astype(np.float64), dtype=np.float64)
    y = model.encoder(x)
    z = model.hyper_enc(y)
    y_sym = E.clamp_symbols(T.round_half_away(y.data))
    z_sym = E.clamp_symbols(T.round_half_away(z.data))
    hyper_segment = _code_hyper(model, z_sym)
    z_hat = Tensor(z_sym.astype(np.float64))
    hyper_feats = model.hyper_dec(z_hat)
    _, latent_segment = ar_code_latents(
        model.context, hyper_feats.data, y_sym, y.shape
    )
    y_hat = Tensor(y_sym.astype(np.float64))
    fused = model.icn(y_hat, hyper_feats)
    recon = T.clamp(model.decoder(fused), 0.0, 1.0)
    code = IntraCode(tuple(y.shape), tuple(z.shape), hyper_segment, latent_segment)
    return code, recon.data[0]


def intra_decode(code: IntraCode, model: IntraModel) -> np.ndarray:
    """Sequential autoregressive decode; bit-exact with the encoder recon."""
    z_sym = _decode_hyper(model, code.hyper_segment, code.hyper_shape)
    z_hat = Tensor(z_sym.astype(np.float64))
    hyper_feats = model.hyper_dec(z_hat)
    (length,) = struct.unpack("<I", code.latent_segment[:4])
    if len(code.latent_segment) - 4 < length:
        raise BitstreamError("intra latent segment truncated")
    decoder = RC.RangeDecoder(code.latent_segment[4 : 4 + length])
    y_sym, _ = ar_code_latents(
        model.context, hyper_feats.data, None, code.latent_shape, decoder=decoder
    )
    y_hat = Tensor(y_sym[None].astype(np.float64))
    fused = model.icn(y_hat, hyper_feats)
    recon = T.clamp(model.decoder(fused), 0.0, 1.0)
    return recon.data[0]


def soft_clamp(x: Tensor, leak: float = 0.1) -> Tensor:
    """Identity on [0,1], slope ``leak`` outside.

    Training reconstructions use this instead of a hard clamp: early in
    training nearly every output pixel saturates, and a hard clamp would
    zero the distortion gradient there, leaving only the rate term to
    optimize. Coding paths still hard-clamp.
    """
    hard = T.clamp(x, 0.0, 1.0)
    return T.add(T.mul(x, Tensor(leak, dtype=x.data.dtype)),
                 T.mul(hard, Tensor(1.0 - leak, dtype=x.data.dtype)))


def intra_train_forward(model: IntraModel, x: Tensor, rng: np.random.Generator
                        ) -> tuple[Tensor, Tensor]:
    """Noisy-quantized forward pass: (reconstruction, total rate bits)."""
    y = model.encoder(x)
    z = model.hyper_enc(y)
    z_noisy = E.quantize(z, E.QuantizerMode.TRAIN_NOISE, rng)
    y_noisy = E.quantize(y, E.QuantizerMode.TRAIN_NOISE, rng)
    hyper_feats = model.hyper_dec(z_noisy)
    params = model.context(y_noisy, hyper_feats)
    rate_y = E.estimate_rate(y_noisy, params)
    rate_z = E.estimate_rate(z_noisy, model.hyper_prior.params_like(z_noisy))
    fused = model.icn(y_noisy, hyper_feats)
    recon = soft_clamp(model.decoder(fused))
    return recon, T.add(rate_y, rate_z)


def intra_infer_bits(model: IntraModel, frame: np.ndarray) -> int:
    """Actual coded size in bits (for train/infer rate agreement checks)."""
    code, _ = intra_encode(frame, model)
    return code.rate_bits
