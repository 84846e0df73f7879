"""Temporal prediction: pyramid flow estimation, flow compression, motion
compensation, a refinement network, and recurrent high-frequency augmentation.

The decoded flow (not the raw estimate) drives warping on both coder sides,
so the prediction path is identical for encoder and decoder by construction.
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
from .intra import FactorizedPrior
from .tensor import Tensor

FLOW_LATENT_CHANNELS = 8
FLOW_STRIDE = 8
LSTM_HIDDEN = 32


class _PyramidLevel(nn.Module):
    """Five convs predicting a flow update from (warped ref, cur, upflow)."""

    def __init__(self, rng, width=16):
        self.conv1 = nn.Conv2d(8, width, 3, rng)
        self.act1 = nn.PReLU(width)
        self.conv2 = nn.Conv2d(width, width, 3, rng)
        self.act2 = nn.PReLU(width)
        self.conv3 = nn.Conv2d(width, width, 3, rng)
        self.act3 = nn.PReLU(width)
        self.conv4 = nn.Conv2d(width, width, 3, rng)
        self.act4 = nn.PReLU(width)
        self.conv5 = nn.Conv2d(width, 2, 3, rng, zero_init=True)

    def __call__(self, ref: Tensor, cur: Tensor, upflow: Tensor) -> Tensor:
        warped = T.bilinear_warp(ref, upflow)
        h = T.concat([warped, cur, upflow], axis=1)
        h = self.act1(self.conv1(h))
        h = self.act2(self.conv2(h))
        h = self.act3(self.conv3(h))
        h = self.act4(self.conv4(h))
        return T.add(upflow, self.conv5(h))


class FlowEstimator(nn.Module):
    """Two-level coarse-to-fine pyramid; flow in pixels at frame resolution."""

    def __init__(self, rng):
        self.coarse = _PyramidLevel(rng)
        self.fine = _PyramidLevel(rng)

    def __call__(self, ref: Tensor, cur: Tensor) -> Tensor:
        if ref.shape != cur.shape:
            raise T.ShapeMismatchError(f"frame extents differ: {ref.shape} vs {cur.shape}")
        ref_lo = T.avg_pool2d(ref, 2)
        cur_lo = T.avg_pool2d(cur, 2)
        zero = Tensor(np.zeros((ref.shape[0], 2, ref_lo.shape[2], ref_lo.shape[3])))
        flow_lo = self.coarse(ref_lo, cur_lo, zero)
        upflow = T.mul(T.upsample_nearest(flow_lo, 2), Tensor(2.0))
        return self.fine(ref, cur, upflow)


class FlowAutoencoder(nn.Module):
    """Conv encoder to eighth-resolution latents and a mirrored decoder.

    A motion field carries far less information than the frame itself, so
    the latent grid is kept small: every latent position costs a fraction
    of a bit even when it codes zero motion, and a fine grid would dominate
    the inter-frame budget on quiet content.
    """

    def __init__(self, rng, latent_ch=FLOW_LATENT_CHANNELS):
        self.enc1 = nn.Conv2d(2, latent_ch, 3, rng, stride=2)
        self.act1 = nn.PReLU(latent_ch)
        self.enc2 = nn.Conv2d(latent_ch, latent_ch, 3, rng, stride=2)
        self.act2 = nn.PReLU(latent_ch)
        self.enc3 = nn.Conv2d(latent_ch, latent_ch, 3, rng, stride=2)
        self.dec1 = nn.ConvTranspose2d(latent_ch, latent_ch, 4, rng, stride=2, pad=1)
        self.act3 = nn.PReLU(latent_ch)
        self.dec2 = nn.ConvTranspose2d(latent_ch, latent_ch, 4, rng, stride=2, pad=1)
        self.act4 = nn.PReLU(latent_ch)
        self.dec3 = nn.ConvTranspose2d(latent_ch, 2, 4, rng, stride=2, pad=1)

    def encode(self, flow: Tensor) -> Tensor:
        return self.enc3(self.act2(self.enc2(self.act1(self.enc1(flow)))))

    def decode(self, latents: Tensor) -> Tensor:
        return self.dec3(self.act4(self.dec2(self.act3(self.dec1(latents)))))


class FlowModel(nn.Module):
    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.estimator = FlowEstimator(rng)
        self.autoencoder = FlowAutoencoder(rng)
        self.prior = FactorizedPrior(FLOW_LATENT_CHANNELS)


@dataclass
class FlowCode:
    latent_shape: tuple[int, int, int, int]
    segment: bytes

    @property
    def rate_bits(self) -> int:
        return 8 * len(self.segment)

    def to_bytes(self) -> bytes:
        return struct.pack("<4H", *self.latent_shape) + self.segment

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FlowCode":
        if len(blob) < 8:
            raise BitstreamError("flow code header truncated")
        shape = struct.unpack("<4H", blob[:8])
        seg_len = RC.segment_length(blob[8:])
        segment = blob[8 : 8 + seg_len]
        return cls(tuple(shape), segment)


def _flow_tables(model: FlowModel, shape: tuple[int, ...]) -> E.CdfTable:
    sigma = model.prior.sigma_field(shape)
    return E.build_cdf_table(E.GaussianParams(Tensor(np.zeros_like(sigma)), Tensor(sigma)))


def flow_encode(ref: np.ndarray, cur: np.ndarray, model: FlowModel
                ) -> tuple[FlowCode, np.ndarray]:
    """Estimate, compress, and locally decode motion; returns decoded flow."""
    if ref.shape != cur.shape:
        raise T.ShapeMismatchError(f"frame extents differ: {ref.shape} vs {cur.shape}")
    ref_t = Tensor(ref[None].astype(np.float64), dtype=np.float64)
    cur_t = Tensor(cur[None].astype(np.float64), dtype=np.float64)
    flow = model.estimator(ref_t, cur_t)
    latents = model.autoencoder.encode(flow)
    syms = E.clamp_symbols(T.round_half_away(latents.data))
    tables = _flow_tables(model, syms.shape)
    segment = RC.range_encode(syms.ravel(), tables)
    decoded = model.autoencoder.decode(Tensor(syms.astype(np.float64)))
    return FlowCode(tuple(latents.shape), segment), decoded.data[0]


def flow_decode(code: FlowCode, model: FlowModel) -> np.ndarray:
    """Exact reproduction of the encoder-side decoded flow."""
    tables = _flow_tables(model, code.latent_shape)
    count = int(np.prod(code.latent_shape))
    syms = RC.range_decode(code.segment, tables, count).reshape(code.latent_shape)
    decoded = model.autoencoder.decode(Tensor(syms.astype(np.float64)))
    return decoded.data[0]


def motion_compensate(ref: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Warp the reference by per-pixel displacements."""
    out = T.bilinear_warp(Tensor(ref[None], dtype=np.float64),
                          Tensor(flow[None], dtype=np.float64))
    return out.data[0]


class ProcessingNet(nn.Module):
    """Ten residual blocks around one stride-2 bottleneck; global skip."""

    def __init__(self, seed: int = 0, width: int = 32):
        rng = np.random.default_rng(seed)
        self.stem = nn.Conv2d(3, width, 3, rng)
        self.pre = [nn.ResBlock(width, rng, activation="prelu") for _ in range(4)]
        self.down = nn.Conv2d(width, width, 3, rng, stride=2)
        self.mid = [nn.ResBlock(width, rng, activation="prelu") for _ in range(2)]
        self.up = nn.ConvTranspose2d(width, width, 4, rng, stride=2, pad=1)
        self.post = [nn.ResBlock(width, rng, activation="prelu") for _ in range(4)]
        self.head = nn.Conv2d(width, 3, 3, rng, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for block in self.pre:
            h = block(h)
        inner = self.down(h)
        for block in self.mid:
            inner = block(inner)
        h = T.add(h, self.up(inner))
        for block in self.post:
            h = block(h)
        return T.add(x, self.head(h))


def refine(warped: Tensor | np.ndarray, net: ProcessingNet) -> Tensor | np.ndarray:
    """Quality restoration with a residual global skip; keeps input kind."""
    if isinstance(warped, Tensor):
        return net(warped)
    out = net(Tensor(warped[None], dtype=np.float64))
    return out.data[0]


class TemporalAugment(nn.Module):
    """ConvLSTM over reference-frame features; hidden state sharpens the
    prediction through a zero-initialized fusion conv (identity at init)."""

    def __init__(self, seed: int = 0, hidden: int = LSTM_HIDDEN):
        rng = np.random.default_rng(seed)
        self.stem1 = nn.Conv2d(3, 16, 3, rng, stride=2)
        self.stem_act = nn.PReLU(16)
        self.stem2 = nn.Conv2d(16, hidden, 3, rng)
        self.cell = nn.ConvLSTMCell(hidden, hidden, 3, rng)
        self.fuse = nn.Conv2d(3 + hidden, 3, 3, rng, zero_init=True)
        self.hidden = hidden

    def ref_features(self, ref: Tensor) -> Tensor:
        return self.stem2(self.stem_act(self.stem1(ref)))

    def initial_state(self, height: int, width: int) -> nn.RecurrentState:
        return self.cell.initial_state(1, height // 2, width // 2)

    def __call__(self, refined: Tensor, ref_features: Tensor,
                 state: nn.RecurrentState) -> tuple[Tensor, nn.RecurrentState]:
        if ref_features.shape[2] * 2 != refined.shape[2] or \
           ref_features.shape[3] * 2 != refined.shape[3]:
            raise T.ShapeMismatchError(
                f"feature extent {ref_features.shape[2:]} does not match "
                f"half of frame extent {refined.shape[2:]}"
            )
        h, new_state = self.cell(ref_features, state)
        h_full = T.upsample_nearest(h, 2)
        delta = self.fuse(T.concat([refined, h_full], axis=1))
        return T.add(refined, delta), new_state


def temporal_augment(refined, ref_features, state, module: TemporalAugment):
    return module(refined, ref_features, state)


class InterModel(nn.Module):
    """Everything the prediction path needs for one P-frame."""

    def __init__(self, seed: int = 0):
        self.flow = FlowModel(seed)
        self.processing = ProcessingNet(seed + 1)
        self.temporal = TemporalAugment(seed + 2)

    def predict_train(self, ref: Tensor, cur: Tensor, state: nn.RecurrentState
                      ) -> tuple[Tensor, Tensor, Tensor, Tensor, nn.RecurrentState]:
        """Training path with straight-through-rounded flow latents.

        Motion latents are near-deterministic on quiet content; the uniform
        noise proxy prices a zero at ~1.4 bits, keeps the prior wide, and
        teaches the downstream nets to undo jitter that inference never sees.
        Rounded symbols with a straight-through gradient keep the rate term
        and the warped prediction identical to what the coder produces.

        Returns (prediction, refined-warp, flow, flow rate bits, new state).
        """
        flow = self.flow.estimator(ref, cur)
        latents = self.flow.autoencoder.encode(flow)
        symbols = T.add(latents, Tensor(
            E.clamp_symbols(T.round_half_away(latents.data)) - latents.data,
            dtype=latents.data.dtype,
        ))
        rate = E.estimate_rate(symbols, self.flow.prior.params_like(symbols))
        decoded_flow = self.flow.autoencoder.decode(symbols)
        warped = T.bilinear_warp(ref, decoded_flow)
        refined = self.processing(warped)
        feats = self.temporal.ref_features(ref)
        prediction, new_state = self.temporal(refined, feats, state)
        return prediction, refined, decoded_flow, rate, new_state

    def predict_coded(self, ref: np.ndarray, cur: np.ndarray | None,
                      state: nn.RecurrentState, code: FlowCode | None = None
                      ) -> tuple[FlowCode, np.ndarray, nn.RecurrentState]:
        """Inference path shared by both coder sides.

        Encoder: pass ``cur`` to estimate and code motion. Decoder: pass the
        received ``code``. Both return the identical prediction for X_t.
        """
        if code is None:
            if cur is None:
                raise DataError("need either the current frame or a flow code")
            code, flow = flow_encode(ref, cur, self.flow)
        else:
            flow = flow_decode(code, self.flow)
        warped = motion_compensate(ref, flow)
        refined = refine(warped, self.processing)
        feats = self.temporal.ref_features(Tensor(ref[None], dtype=np.float64))
        prediction, new_state = self.temporal(
            Tensor(refined[None], dtype=np.float64), feats, state
        )
        return code, prediction.data[0], new_state
