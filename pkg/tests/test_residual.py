"""Residual codec: GOP round trips, recurrent-prior conditioning, and the
degeneration to the spatial-only context model."""

import struct

import numpy as np
import pytest

from nvcodec import entropy as E
from nvcodec import intra as IC
from nvcodec import rangecoder as RC
from nvcodec import residual as R
from nvcodec import tensor as T
from nvcodec.errors import BitstreamError
from nvcodec.tensor import Tensor


def _smooth_frame(rng, size=32, cells=8):
    coarse = rng.uniform(0.1, 0.9, size=(3, cells, cells))
    frame = np.kron(coarse, np.ones((size // cells, size // cells)))
    frame += rng.normal(0.0, 0.01, size=frame.shape)
    return np.clip(frame, 0.0, 1.0)


def _drifting_sequence(rng, n, size=32):
    frames = [_smooth_frame(rng, size=size)]
    for _ in range(n - 1):
        nxt = np.roll(frames[-1], 1, axis=2)
        nxt = np.clip(nxt + rng.normal(0, 0.02, nxt.shape), 0, 1)
        frames.append(nxt)
    return frames


@pytest.fixture(scope="module")
def model():
    return R.ResidualModel(seed=5)


class TestGopRoundTrip:
    def test_five_frame_identity(self, model):
        rng = np.random.default_rng(0)
        frames = _drifting_sequence(rng, 5)
        gray = np.full((3, 32, 32), 0.5)

        enc_state = model.initial_state(32, 32)
        codes, enc_recons = [], []
        pred = gray
        for cur in frames:
            code, recon, enc_state = R.residual_encode(cur, pred, model, enc_state)
            codes.append(code)
            enc_recons.append(recon)
            pred = recon

        dec_state = model.initial_state(32, 32)
        pred = gray
        for code, expected in zip(codes, enc_recons):
            recon, dec_state = R.residual_decode(code, pred, model, dec_state)
            assert np.array_equal(recon, expected)
            pred = recon
        assert np.array_equal(enc_state.h.data, dec_state.h.data)
        assert np.array_equal(enc_state.c.data, dec_state.c.data)

    def test_state_update_determinism(self, model):
        rng = np.random.default_rng(1)
        pred = _smooth_frame(rng)
        cur = np.clip(pred + rng.normal(0, 0.05, pred.shape), 0, 1)
        code, _, _ = R.residual_encode(cur, pred, model, model.initial_state(32, 32))
        _, state_a = R.residual_decode(code, pred, model, model.initial_state(32, 32))
        _, state_b = R.residual_decode(code, pred, model, model.initial_state(32, 32))
        assert np.array_equal(state_a.h.data, state_b.h.data)
        assert np.array_equal(state_a.c.data, state_b.c.data)

    def test_extent_mismatch(self, model):
        rng = np.random.default_rng(2)
        with pytest.raises(T.ShapeMismatchError, match="extent"):
            R.residual_encode(_smooth_frame(rng), _smooth_frame(rng, size=16, cells=4),
                              model, model.initial_state(32, 32))

    def test_truncated_stream(self, model):
        rng = np.random.default_rng(3)
        pred = _smooth_frame(rng)
        cur = np.clip(pred + rng.normal(0, 0.05, pred.shape), 0, 1)
        code, _, _ = R.residual_encode(cur, pred, model, model.initial_state(32, 32))
        clipped = R.ResidualCode(code.latent_shape, code.hyper_shape,
                                 code.hyper_segment, code.latent_segment[:8])
        with pytest.raises(BitstreamError):
            R.residual_decode(clipped, pred, model, model.initial_state(32, 32))

    def test_code_bytes_round_trip(self, model):
        rng = np.random.default_rng(4)
        pred = _smooth_frame(rng)
        cur = np.clip(pred + rng.normal(0, 0.05, pred.shape), 0, 1)
        code, recon, _ = R.residual_encode(cur, pred, model, model.initial_state(32, 32))
        back = R.ResidualCode.from_bytes(code.to_bytes())
        assert isinstance(back, R.ResidualCode)
        out, _ = R.residual_decode(back, pred, model, model.initial_state(32, 32))
        assert np.array_equal(out, recon)


class TestZeroLatentReference:
    def test_decode_of_zero_symbols(self, model):
        rng = np.random.default_rng(5)
        pred = _smooth_frame(rng)
        y_shape = (1, IC.LATENT_CHANNELS, 8, 8)
        z_shape = (1, IC.HYPER_CHANNELS, 2, 2)
        hyper_segment = IC._code_hyper(model, np.zeros(z_shape, dtype=np.int64))
        hyper_feats = model.hyper_dec(Tensor(np.zeros(z_shape)))
        state = model.initial_state(32, 32)
        _, latent_segment = IC.ar_code_latents(
            model.context, hyper_feats.data, np.zeros(y_shape, dtype=np.int64),
            y_shape, temporal_prior=state.h.data,
        )
        code = R.ResidualCode(y_shape, z_shape, hyper_segment, latent_segment)
        recon, _ = R.residual_decode(code, pred, model, model.initial_state(32, 32))

        fused = model.icn(Tensor(np.zeros(y_shape)), hyper_feats)
        reference = np.clip(pred + model.decoder(fused).data[0], 0, 1)
        assert np.allclose(recon, reference, atol=1e-7)
        assert recon.shape == (3, 32, 32)


class TestTemporalConditioning:
    def _random_inputs(self, seed, h=6, w=6):
        rng = np.random.default_rng(seed)
        latents = rng.integers(-5, 6, size=(1, IC.LATENT_CHANNELS, h, w)).astype(float)
        hyper = rng.normal(size=(1, IC.FEATURE_CHANNELS, h, w))
        prior = rng.normal(size=(1, R.STATE_CHANNELS, h, w))
        return latents, hyper, prior

    def test_degenerates_to_spatial_model_with_zero_branch(self, model):
        # the temporal 1x1 conv starts at zero, so a spatial-only context
        # model sharing the remaining weights must agree exactly
        latents, hyper, prior = self._random_inputs(0)
        plain = IC.ContextModel(np.random.default_rng(99))
        plain.masked.weight.data = model.context.masked.weight.data.copy()
        plain.masked.bias.data = model.context.masked.bias.data.copy()
        plain.agg1.weight.data = model.context.agg1.weight.data.copy()
        plain.agg1.bias.data = model.context.agg1.bias.data.copy()
        plain.act.slope.data = model.context.act.slope.data.copy()
        plain.agg2.weight.data = model.context.agg2.weight.data.copy()
        plain.agg2.bias.data = model.context.agg2.bias.data.copy()

        lat_t = Tensor(latents, dtype=np.float64)
        hyper_t = Tensor(hyper, dtype=np.float64)
        with_prior = R.residual_context_predict(model, lat_t, hyper_t,
                                                Tensor(prior, dtype=np.float64))
        spatial = plain(lat_t, hyper_t)
        assert np.array_equal(with_prior.mu.data, spatial.mu.data)
        assert np.array_equal(with_prior.sigma.data, spatial.sigma.data)
        rate_a = E.estimate_rate(lat_t, with_prior)
        rate_b = E.estimate_rate(lat_t, spatial)
        assert abs(float(rate_a.data) - float(rate_b.data)) <= 1e-6

    def test_prior_changes_params_once_branch_is_nonzero(self, model):
        latents, hyper, prior = self._random_inputs(1)
        stash = model.context.agg1_temporal.weight.data.copy()
        model.context.agg1_temporal.weight.data = np.random.default_rng(2).normal(
            0, 0.1, size=stash.shape)
        try:
            lat_t = Tensor(latents, dtype=np.float64)
            hyper_t = Tensor(hyper, dtype=np.float64)
            with_h = R.residual_context_predict(model, lat_t, hyper_t,
                                                Tensor(prior, dtype=np.float64))
            without_h = R.residual_context_predict(model, lat_t, hyper_t,
                                                   Tensor(np.zeros_like(prior),
                                                          dtype=np.float64))
            assert not np.allclose(with_h.mu.data, without_h.mu.data)
        finally:
            model.context.agg1_temporal.weight.data = stash

    def test_causality_with_prior(self, model):
        latents, hyper, prior = self._random_inputs(3, h=8, w=8)
        h, w = 8, 8
        base = R.residual_context_predict(model, Tensor(latents, dtype=np.float64),
                                          Tensor(hyper, dtype=np.float64),
                                          Tensor(prior, dtype=np.float64))
        cut = 3 * w + 4
        tampered = latents.copy()
        tampered.reshape(1, -1, h * w)[:, :, cut:] = 7.0
        out = R.residual_context_predict(model, Tensor(tampered, dtype=np.float64),
                                         Tensor(hyper, dtype=np.float64),
                                         Tensor(prior, dtype=np.float64))
        keep = (np.arange(h * w) <= cut).reshape(h, w)
        assert np.array_equal(base.mu.data[0][:, keep], out.mu.data[0][:, keep])
        assert np.array_equal(base.sigma.data[0][:, keep], out.sigma.data[0][:, keep])

    def test_sequential_replay_with_prior(self, model):
        latents, hyper, prior = self._random_inputs(4)
        stash = model.context.agg1_temporal.weight.data.copy()
        model.context.agg1_temporal.weight.data = np.random.default_rng(5).normal(
            0, 0.1, size=stash.shape)
        try:
            shape = latents.shape
            enc_sink: list = []
            sent, segment = IC.ar_code_latents(
                model.context, hyper, latents, shape,
                temporal_prior=prior, param_sink=enc_sink)
            (length,) = struct.unpack("<I", segment[:4])
            dec_sink: list = []
            received, _ = IC.ar_code_latents(
                model.context, hyper, None, shape, temporal_prior=prior,
                decoder=RC.RangeDecoder(segment[4 : 4 + length]),
                param_sink=dec_sink)
            assert np.array_equal(sent, received)
            for (mu_e, sig_e), (mu_d, sig_d) in zip(enc_sink, dec_sink):
                assert np.array_equal(mu_e, mu_d)
                assert np.array_equal(sig_e, sig_d)
        finally:
            model.context.agg1_temporal.weight.data = stash

    def test_state_actually_conditions_the_bitstream(self, model):
        rng = np.random.default_rng(6)
        pred = _smooth_frame(rng)
        cur = np.clip(pred + rng.normal(0, 0.05, pred.shape), 0, 1)
        stash = model.context.agg1_temporal.weight.data.copy()
        model.context.agg1_temporal.weight.data = np.random.default_rng(7).normal(
            0, 0.1, size=stash.shape)
        try:
            zero_state = model.initial_state(32, 32)
            rich_state = model.initial_state(32, 32)
            rich_state.h.data = np.random.default_rng(8).normal(
                0, 0.5, size=rich_state.h.shape).astype(rich_state.h.data.dtype)
            code_a, _, _ = R.residual_encode(cur, pred, model, zero_state)
            code_b, _, _ = R.residual_encode(cur, pred, model, rich_state)
            assert code_a.latent_segment != code_b.latent_segment
        finally:
            model.context.agg1_temporal.weight.data = stash


class TestTrainForward:
    def _unroll_backward(self, model, seed):
        rng = np.random.default_rng(seed)
        frames = _drifting_sequence(rng, 3)
        model.zero_grad()
        with T.Tape():
            state = model.initial_state(32, 32)
            pred = Tensor(frames[0][None], dtype=np.float64)
            total = Tensor(0.0)
            gen = np.random.default_rng(10)
            for cur in frames[1:]:
                recon, rate, state = R.residual_train_forward(
                    model, Tensor(cur[None], dtype=np.float64), pred, state, gen)
                total = T.add(total, T.add(T.tmean(T.square(recon)),
                                           T.mul(rate, Tensor(1e-6))))
                pred = recon
            T.backward(total)

    def test_two_step_unroll_reaches_temporal_weights(self, model):
        # at init the fusion branch is zero, so the recurrence contributes
        # nothing yet; its own weight still receives gradient (the branch can
        # leave zero), and once it is nonzero the cell trains too
        self._unroll_backward(model, seed=9)
        branch_grad = model.context.agg1_temporal.weight.grad
        assert branch_grad is not None and np.abs(branch_grad).max() > 0

        stash = model.context.agg1_temporal.weight.data.copy()
        model.context.agg1_temporal.weight.data = np.random.default_rng(12).normal(
            0, 0.1, size=stash.shape)
        try:
            self._unroll_backward(model, seed=9)
            assert np.abs(model.state_cell.weight.grad).max() > 0
            stem_grads = [p.grad for _, p in model.state_stem.named_parameters()]
            assert any(np.abs(g).max() > 0 for g in stem_grads if g is not None)
        finally:
            model.context.agg1_temporal.weight.data = stash
            model.zero_grad()

    def test_recon_finite_and_rate_positive(self, model):
        rng = np.random.default_rng(11)
        pred = Tensor(_smooth_frame(rng)[None], dtype=np.float64)
        cur = Tensor(_smooth_frame(rng)[None], dtype=np.float64)
        recon, rate, state = R.residual_train_forward(
            model, cur, pred, model.initial_state(32, 32), np.random.default_rng(1))
        # leaky-clamped, not pinned to [0,1]
        assert np.all(np.isfinite(recon.data))
        assert float(rate.data) > 0.0
        assert state.h.shape == (1, R.STATE_CHANNELS, 8, 8)
