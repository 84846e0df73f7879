"""Forward semantics of the tensor engine and its layers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcodec import nn
from nvcodec import tensor as T
from nvcodec.tensor import ShapeMismatchError, Tensor


class TestConv2d:
    def test_scalar_scaling(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.full((1, 1, 1, 1), 2.0))
        b = Tensor(np.zeros(1))
        out = T.conv2d(x, w, b, stride=1, pad=0)
        assert out.shape == (1, 1, 3, 3)
        assert np.allclose(out.data, 2.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        out = T.conv2d(x, Tensor(w), Tensor(np.zeros(2)), stride=1, pad=1)
        assert np.allclose(out.data, x.data)

    def test_output_extent(self):
        x = Tensor(np.zeros((1, 3, 9, 9)))
        w = Tensor(np.zeros((4, 3, 3, 3)))
        out = T.conv2d(x, w, None, stride=2, pad=1)
        # floor((9 + 2 - 3) / 2) + 1
        assert out.shape == (1, 4, 5, 5)

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, pad=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expect = np.zeros((2, 4, 6, 6))
        for n in range(2):
            for o in range(4):
                for i in range(6):
                    for j in range(6):
                        patch = xp[n, :, i:i + 3, j:j + 3]
                        expect[n, o, i, j] = np.sum(patch * w[o]) + b[o]
        assert np.allclose(out, expect, atol=1e-5)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 5, 3, 3)))
        with pytest.raises(ShapeMismatchError, match="channel"):
            T.conv2d(x, w, None, 1, 1)


class TestConvTranspose2d:
    def test_mass_preservation(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = T.conv2d_transpose(x, w, None, stride=2, pad=0)
        assert out.shape == (1, 1, 4, 4)
        assert np.isclose(out.data.sum(), 4.0 * x.data.sum())

    def test_output_extent(self):
        x = Tensor(np.zeros((1, 2, 5, 5)))
        w = Tensor(np.zeros((2, 3, 4, 4)))
        out = T.conv2d_transpose(x, w, None, stride=2, pad=1)
        # (5 - 1) * 2 - 2 + 4
        assert out.shape == (1, 3, 10, 10)

    @pytest.mark.parametrize("extent,stride", [(16, 1), (15, 2)])
    def test_adjoint_of_conv2d(self, extent, stride):
        rng = np.random.default_rng(2)
        with T.using_dtype(np.float64):
            w = Tensor(rng.standard_normal((4, 3, 3, 3)))
            x = Tensor(rng.standard_normal((2, 3, extent, extent)))
            y_shape = T.conv2d(x, w, None, stride=stride, pad=1).shape
            y = Tensor(rng.standard_normal(y_shape))
            lhs = np.sum(T.conv2d(x, w, None, stride, 1).data * y.data)
            # same weight tensor: transpose reads axis 0 as its own input channels
            rhs = np.sum(x.data * T.conv2d_transpose(y, w, None, stride, 1).data)
            assert abs(lhs - rhs) / max(abs(lhs), 1e-8) < 1e-6


class TestGdn:
    def test_unit_denominator_identity(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 4, 5, 5)))
        beta = Tensor(np.ones(4))
        gamma = Tensor(np.zeros((4, 4)))
        out = nn.gdn(x, beta, gamma)
        assert np.allclose(out.data, x.data)

    def test_single_channel_formula(self):
        x = Tensor(np.full((1, 1, 1, 1), 3.0))
        out = nn.gdn(x, Tensor(np.ones(1)), Tensor(np.ones((1, 1))))
        assert np.isclose(out.item(), 3.0 / np.sqrt(10.0), atol=1e-6)

    def test_inverse_multiplies(self):
        x = Tensor(np.full((1, 1, 1, 1), 3.0))
        out = nn.gdn(x, Tensor(np.ones(1)), Tensor(np.ones((1, 1))), inverse=True)
        assert np.isclose(out.item(), 3.0 * np.sqrt(10.0), atol=1e-5)

    def test_nonpositive_beta_rejected(self):
        x = Tensor(np.ones((1, 2, 2, 2)))
        with pytest.raises(ValueError, match="positive"):
            nn.gdn(x, Tensor(np.array([1.0, 0.0])), Tensor(np.zeros((2, 2))))

    def test_module_initial_response_is_contraction(self):
        # softplus reparametrization starts at beta ~ 1, gamma diag ~ 0.1
        rng = np.random.default_rng(4)
        layer = nn.GDN(4)
        x = Tensor(rng.standard_normal((1, 4, 6, 6)))
        out = layer(x)
        assert np.all(np.abs(out.data) <= np.abs(x.data) + 1e-7)

    def test_module_igdn_roundtrip_close_at_init(self):
        rng = np.random.default_rng(5)
        fwd = nn.GDN(3)
        inv = nn.GDN(3, inverse=True)
        x = rng.uniform(-1.0, 1.0, size=(1, 3, 4, 4))
        mid = fwd(Tensor(x))
        back = inv(mid)
        # not an exact algebraic inverse; stays within a few percent at init scale
        assert np.abs(back.data - x).max() < 0.05


class TestPrelu:
    def test_zero_slope_is_relu(self):
        x = Tensor(np.array([-1.0, 2.0]).reshape(1, 1, 1, 2))
        out = T.prelu(x, Tensor(np.zeros(1)))
        assert np.allclose(out.data.ravel(), [0.0, 2.0])

    def test_unit_slope_is_identity(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        out = T.prelu(x, Tensor(np.ones(3)))
        assert np.allclose(out.data, x.data)

    def test_per_channel_slopes(self):
        x = Tensor(np.full((1, 2, 1, 1), -2.0))
        out = T.prelu(x, Tensor(np.array([0.1, 0.5])))
        assert np.allclose(out.data.ravel(), [-0.2, -1.0])


class TestBilinearWarp:
    def test_zero_flow_identity(self):
        rng = np.random.default_rng(7)
        img = Tensor(rng.standard_normal((2, 3, 6, 7)))
        flow = Tensor(np.zeros((2, 2, 6, 7)))
        out = T.bilinear_warp(img, flow)
        assert np.array_equal(out.data, img.data)

    def test_integer_shift(self):
        img = np.arange(8.0).reshape(1, 1, 1, 8).repeat(5, axis=2)
        flow = np.zeros((1, 2, 5, 8))
        flow[:, 0] = 1.0  # dx = +1
        out = T.bilinear_warp(Tensor(img), Tensor(flow)).data
        expect = np.concatenate([img[..., 1:], img[..., -1:]], axis=-1)
        assert np.allclose(out, expect)

    def test_half_pixel_mean(self):
        img = np.arange(8.0).reshape(1, 1, 1, 8).repeat(4, axis=2)
        flow = np.zeros((1, 2, 4, 8))
        flow[:, 0] = 0.5
        out = T.bilinear_warp(Tensor(img), Tensor(flow)).data
        expect = (np.concatenate([img[..., 1:], img[..., -1:]], axis=-1) + img) / 2.0
        assert np.allclose(out, expect)

    def test_vertical_shift(self):
        img = np.arange(6.0).reshape(1, 1, 6, 1).repeat(4, axis=3)
        flow = np.zeros((1, 2, 6, 4))
        flow[:, 1] = -1.0  # dy = -1 samples the row above
        out = T.bilinear_warp(Tensor(img), Tensor(flow)).data
        expect = np.concatenate([img[:, :, :1], img[:, :, :-1]], axis=2)
        assert np.allclose(out, expect)

    def test_border_replication(self):
        img = np.arange(4.0).reshape(1, 1, 1, 4)
        flow = np.zeros((1, 2, 1, 4))
        flow[:, 0] = 10.0
        out = T.bilinear_warp(Tensor(img), Tensor(flow)).data
        assert np.allclose(out, 3.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            T.bilinear_warp(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 2, 5, 4))))


class TestConvLstmStep:
    def _zero_cell(self, channels=2, hidden=2, k=3):
        weight = Tensor(np.zeros((4 * hidden, channels + hidden, k, k)))
        bias = Tensor(np.zeros(4 * hidden))
        return weight, bias

    def test_zero_everything(self):
        weight, bias = self._zero_cell()
        state = nn.RecurrentState.zeros(1, 2, 4, 4)
        x = Tensor(np.zeros((1, 2, 4, 4)))
        h, new = nn.convlstm_step(x, state, weight, bias, pad=1)
        assert np.allclose(h.data, 0.0)
        assert np.allclose(new.c.data, 0.0)

    def test_prior_cell_decay(self):
        weight, bias = self._zero_cell()
        state = nn.RecurrentState(c=Tensor(np.ones((1, 2, 4, 4))),
                                  h=Tensor(np.zeros((1, 2, 4, 4))))
        x = Tensor(np.zeros((1, 2, 4, 4)))
        h, new = nn.convlstm_step(x, state, weight, bias, pad=1)
        assert np.allclose(new.c.data, 0.5)
        assert np.allclose(h.data, 0.5 * np.tanh(0.5), atol=1e-6)
        assert np.isclose(h.data.flat[0], 0.23106, atol=1e-5)

    def test_spatial_mismatch(self):
        weight, bias = self._zero_cell()
        state = nn.RecurrentState.zeros(1, 2, 4, 4)
        with pytest.raises(ShapeMismatchError):
            nn.convlstm_step(Tensor(np.zeros((1, 2, 5, 4))), state, weight, bias, 1)


class TestPoolingAndResampling:
    def test_avg_pool(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        out = T.avg_pool2d(x, 2)
        assert np.allclose(out.data.ravel(), [2.5, 4.5, 10.5, 12.5])

    def test_avg_pool_truncates_odd_edge(self):
        x = Tensor(np.zeros((1, 1, 5, 5)))
        assert T.avg_pool2d(x, 2).shape == (1, 1, 2, 2)

    def test_upsample_nearest(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = T.upsample_nearest(x, 2)
        assert np.allclose(out.data[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_reflect_pad(self):
        x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        out = T.pad2d(x, 1, mode="reflect")
        assert out.shape == (1, 1, 5, 5)
        assert out.data[0, 0, 0, 0] == x.data[0, 0, 1, 1]

    def test_replicate_pad(self):
        x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        out = T.pad2d(x, 2, mode="replicate")
        assert out.data[0, 0, 0, 0] == x.data[0, 0, 0, 0]
        assert out.data[0, 0, -1, -1] == x.data[0, 0, -1, -1]


class TestElementwise:
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=16))
    @settings(max_examples=50, deadline=None)
    def test_clamp_bounds(self, values):
        out = T.clamp(Tensor(np.array(values)), 0.0, 1.0)
        assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)

    def test_softplus_matches_reference(self):
        x = np.linspace(-20, 20, 41)
        out = T.softplus(Tensor(x)).data
        assert np.allclose(out, np.logaddexp(0.0, x))

    def test_chunk_splits_channels(self):
        x = Tensor(np.arange(8.0).reshape(1, 8, 1, 1))
        parts = T.chunk(x, 4, axis=1)
        assert len(parts) == 4
        assert np.allclose(parts[1].data.ravel(), [2.0, 3.0])

    def test_round_half_away(self):
        vals = np.array([1.4, -2.6, 0.5, -0.5, 2.5])
        assert np.array_equal(T.round_half_away(vals), [1.0, -3.0, 1.0, -1.0, 3.0])


class TestMaskedConv:
    def test_mask_blocks_center_and_future(self):
        rng = np.random.default_rng(8)
        layer = nn.MaskedConv2d(1, 1, 5, rng)
        m = layer.mask()
        assert m[0, 0, 2, 2] == 0.0  # center excluded
        assert np.all(m[0, 0, 3:, :] == 0.0)  # rows below
        assert np.all(m[0, 0, 2, 2:] == 0.0)  # right of center on center row
        assert np.all(m[0, 0, :2, :] == 1.0)  # rows above all visible

    def test_causality_probe(self):
        # perturbing position (i, j) must not change outputs at or before (i, j)
        rng = np.random.default_rng(9)
        layer = nn.MaskedConv2d(2, 3, 5, rng)
        x = rng.standard_normal((1, 2, 8, 8))
        base = layer(Tensor(x)).data
        bumped = x.copy()
        bumped[0, :, 4, 4] += 1.0
        out = layer(Tensor(bumped)).data
        diff = np.abs(out - base).sum(axis=(0, 1))
        flat_changed = np.flatnonzero(diff.ravel() > 1e-12)
        assert np.all(flat_changed > 4 * 8 + 4)  # only raster-later positions react


class TestDeterminism:
    def test_conv_bit_identical(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((1, 3, 8, 8)).astype(np.float32))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
        a = T.conv2d(x, w, None, 1, 1).data
        b = T.conv2d(x, w, None, 1, 1).data
        assert np.array_equal(a, b)

    def test_gdn_bit_identical(self):
        layer = nn.GDN(3)
        x = Tensor(np.random.default_rng(11).standard_normal((1, 3, 6, 6)).astype(np.float32))
        assert np.array_equal(layer(x).data, layer(x).data)
