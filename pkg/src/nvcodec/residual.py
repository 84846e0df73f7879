"""Residual coding: the difference between the frame and its temporal
prediction goes through the intra component set (separate weights), with a
recurrent prior feeding the entropy model.

State ordering contract: the recurrent state consumed while coding frame t was
produced from frame t-1's reconstruction, so the decoder always holds it
before the frame's symbols arrive. The state update for frame t runs after
reconstruction, on features fused from the reconstructed frame and the hyper
path, and is returned for frame t+1.
"""

from __future__ import annotations

import struct

import numpy as np

from . import entropy as E
from . import intra as IC
from . import nn
from . import rangecoder as RC
from . import tensor as T
from .errors import BitstreamError, DataError
from .intra import IntraCode
from .tensor import Tensor

STATE_CHANNELS = 32
STATE_STEM_CHANNELS = 16
LATENT_DOWNSCALE = 4


class ResidualCode(IntraCode):
    """Same wire layout as an intra code; the container tags the frame type."""


class StateStem(nn.Module):
    """Downsamples a reconstructed frame to latent resolution."""

    def __init__(self, rng, out_ch=STATE_STEM_CHANNELS):
        self.conv1 = nn.Conv2d(3, out_ch, 3, rng, stride=2)
        self.act = nn.PReLU(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, rng, stride=2)

    def __call__(self, frame: Tensor) -> Tensor:
        return self.conv2(self.act(self.conv1(frame)))


class ResidualModel(nn.Module):
    """Intra architecture over residuals plus an entropy-path recurrence."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.encoder = IC.Encoder(rng)
        self.decoder = IC.Decoder(rng)
        self.hyper_enc = IC.HyperEncoder(rng)
        self.hyper_dec = IC.HyperDecoder(rng)
        self.context = IC.ContextModel(rng, temporal_ch=STATE_CHANNELS)
        self.icn = IC.IcnFusion(rng)
        self.hyper_prior = IC.FactorizedPrior(IC.HYPER_CHANNELS)
        self.state_stem = StateStem(rng)
        self.state_cell = nn.ConvLSTMCell(
            STATE_STEM_CHANNELS + IC.ICN_CHANNELS, STATE_CHANNELS, 3, rng
        )

    def initial_state(self, height: int, width: int) -> nn.RecurrentState:
        return self.state_cell.initial_state(
            1, height // LATENT_DOWNSCALE, width // LATENT_DOWNSCALE
        )

    def advance_state(self, recon: Tensor, icn_out: Tensor,
                      state: nn.RecurrentState) -> nn.RecurrentState:
        """Folds frame t's reconstruction into the state used for frame t+1."""
        fused = T.concat([self.state_stem(recon), icn_out], axis=1)
        _, new_state = self.state_cell(fused, state)
        return new_state


def residual_context_predict(model: ResidualModel, latents: Tensor,
                             hyper_feats: Tensor, temporal_prior: Tensor
                             ) -> E.GaussianParams:
    """Vectorized (mu, sigma) conditioned on causal latents, hyper features,
    and the recurrent prior."""
    return model.context(latents, hyper_feats, temporal_prior)


def _check_pair(cur: np.ndarray, prediction: np.ndarray) -> None:
    if cur.shape != prediction.shape:
        raise T.ShapeMismatchError(
            f"frame extents differ: {cur.shape} vs {prediction.shape}"
        )


def residual_encode(cur: np.ndarray, prediction: np.ndarray, model: ResidualModel,
                    state: nn.RecurrentState
                    ) -> tuple[ResidualCode, np.ndarray, nn.RecurrentState]:
    """Code cur - prediction; returns (code, reconstruction, next state)."""
    _check_pair(cur, prediction)
    IC._check_frame(cur)
    residual = Tensor((cur - prediction)[None].astype(np.float64), dtype=np.float64)
    y = model.encoder(residual)
    z = model.hyper_enc(y)
    y_sym = E.clamp_symbols(T.round_half_away(y.data))
    z_sym = E.clamp_symbols(T.round_half_away(z.data))
    hyper_segment = IC._code_hyper(model, z_sym)
    hyper_feats = model.hyper_dec(Tensor(z_sym.astype(np.float64)))
    _, latent_segment = IC.ar_code_latents(
        model.context, hyper_feats.data, y_sym, y.shape,
        temporal_prior=state.h.data,
    )
    code = ResidualCode(tuple(y.shape), tuple(z.shape), hyper_segment, latent_segment)
    recon, new_state = _reconstruct(
        y_sym, hyper_feats, prediction, model, state
    )
    return code, recon, new_state


def residual_decode(code: ResidualCode, prediction: np.ndarray, model: ResidualModel,
                    state: nn.RecurrentState) -> tuple[np.ndarray, nn.RecurrentState]:
    """Sequential decode; bit-exact with the encoder-side reconstruction."""
    z_sym = IC._decode_hyper(model, code.hyper_segment, code.hyper_shape)
    hyper_feats = model.hyper_dec(Tensor(z_sym.astype(np.float64)))
    (length,) = struct.unpack("<I", code.latent_segment[:4])
    if len(code.latent_segment) - 4 < length:
        raise BitstreamError("residual latent segment truncated")
    decoder = RC.RangeDecoder(code.latent_segment[4 : 4 + length])
    y_sym, _ = IC.ar_code_latents(
        model.context, hyper_feats.data, None, code.latent_shape,
        temporal_prior=state.h.data, decoder=decoder,
    )
    return _reconstruct(y_sym[None], hyper_feats, prediction, model, state)


def _reconstruct(y_sym: np.ndarray, hyper_feats: Tensor, prediction: np.ndarray,
                 model: ResidualModel, state: nn.RecurrentState
                 ) -> tuple[np.ndarray, nn.RecurrentState]:
    y_hat = Tensor(y_sym.astype(np.float64))
    icn_out = model.icn(y_hat, hyper_feats)
    r_hat = model.decoder(icn_out)
    recon_t = T.clamp(
        T.add(Tensor(prediction[None].astype(np.float64), dtype=np.float64), r_hat),
        0.0, 1.0,
    )
    new_state = model.advance_state(recon_t, icn_out, state)
    return recon_t.data[0], new_state.detached()


def residual_train_forward(model: ResidualModel, cur: Tensor, prediction: Tensor,
                           state: nn.RecurrentState, rng: np.random.Generator
                           ) -> tuple[Tensor, Tensor, nn.RecurrentState]:
    """Noisy-quantized pass; returns (reconstruction, rate bits, next state).

    The returned state stays on the tape so unrolled training backpropagates
    through the recurrence; callers detach at GOP boundaries.
    """
    if cur.shape != prediction.shape:
        raise T.ShapeMismatchError(
            f"frame extents differ: {cur.shape} vs {prediction.shape}"
        )
    residual = T.sub(cur, prediction)
    y = model.encoder(residual)
    z = model.hyper_enc(y)
    y_noisy = E.quantize(y, E.QuantizerMode.TRAIN_NOISE, rng)
    z_noisy = E.quantize(z, E.QuantizerMode.TRAIN_NOISE, rng)
    hyper_feats = model.hyper_dec(z_noisy)
    params = model.context(y_noisy, hyper_feats, state.h)
    rate = T.add(E.estimate_rate(y_noisy, params),
                 E.estimate_rate(z_noisy, model.hyper_prior.params_like(z_noisy)))
    icn_out = model.icn(y_noisy, hyper_feats)
    recon = IC.soft_clamp(T.add(prediction, model.decoder(icn_out)))
    fused = T.concat([model.state_stem(recon), icn_out], axis=1)
    _, new_state = model.state_cell(fused, state)
    return recon, rate, new_state


def residual_infer_bits(model: ResidualModel, cur: np.ndarray, prediction: np.ndarray,
                        state: nn.RecurrentState) -> int:
    code, _, _ = residual_encode(cur, prediction, model, state)
    return code.rate_bits
