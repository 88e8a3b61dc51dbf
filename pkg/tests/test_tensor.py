import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisrnet.errors import ArgumentError, DimensionError
from bisrnet.tensor import (
    avg_pool2x2,
    avg_pool2x2_backward,
    bilinear_up2,
    bilinear_up2_backward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    conv2d_ref,
    conv2d_vjp,
    split_channels,
)


class TestConv2dRef:
    def test_identity_kernel(self):
        x = np.full((1, 1, 3, 3), 2.0, dtype=np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        np.testing.assert_array_equal(conv2d_ref(x, w), x)

    def test_ones_padded_zero(self):
        # 3x3 all-ones input, 3x3 all-ones kernel, zero padding: the centre
        # sees all 9 taps, each corner only the 2x2 block of valid taps.
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = conv2d_ref(x, w, pad=1, pad_value=0.0)
        assert y[0, 0, 1, 1] == 9.0
        for r, c in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert y[0, 0, r, c] == 4.0

    def test_ones_padded_minus_one(self):
        # With -1 padding each corner additionally sums 5 pad taps of -1.
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = conv2d_ref(x, w, pad=1, pad_value=-1.0)
        assert y[0, 0, 1, 1] == 9.0
        for r, c in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert y[0, 0, r, c] == -1.0

    def test_bias_and_stride(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 4, 4)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = conv2d_ref(x, w, bias=b, stride=2, pad=1)
        assert y.shape == (2, 4, 4, 4)
        # Hand-build one output element.
        xp = np.full((3, 10, 10), 0.0, dtype=np.float32)
        xp[:, 1:9, 1:9] = x[1]
        want = (xp[:, 2:6, 4:8] * w[3]).sum() + b[3]
        np.testing.assert_allclose(y[1, 3, 1, 2], want, rtol=1e-5)

    def test_linearity(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        x1 = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
        x2 = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
        a, b = np.float32(0.7), np.float32(-1.3)
        lhs = conv2d_ref(a * x1 + b * x2, w, pad=1)
        rhs = a * conv2d_ref(x1, w, pad=1) + b * conv2d_ref(x2, w, pad=1)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_errors(self):
        x = np.ones((1, 2, 4, 4), dtype=np.float32)
        w = np.ones((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(DimensionError):
            conv2d_ref(x, w)
        with pytest.raises(ArgumentError):
            conv2d_ref(np.ones((1, 3, 4, 4)), w, stride=0)
        with pytest.raises(DimensionError):
            conv2d_ref(np.ones((3, 4, 4)), w)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        y, cache = conv2d_forward(x, w, b, stride=1, pad=1, pad_value=0.0)
        go = rng.standard_normal(y.shape)
        gx, gw, gb = conv2d_backward(cache, go, weight=w)

        def loss(xx, ww, bb):
            return float((conv2d_ref(xx, ww, bb, pad=1) * go).sum())

        h = 1e-6
        for arr, grad, name in [(x, gx, "x"), (w, gw, "w"), (b, gb, "b")]:
            flat = arr.reshape(-1)
            idx = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                up = loss(x, w, b)
                flat[i] = orig - h
                dn = loss(x, w, b)
                flat[i] = orig
                fd = (up - dn) / (2 * h)
                np.testing.assert_allclose(grad.reshape(-1)[i], fd, rtol=1e-5, atol=1e-8)

    def test_vjp_agrees_with_cached_backward(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        y, cache = conv2d_forward(x, w, None, stride=1, pad=1, pad_value=0.0)
        go = rng.standard_normal(y.shape)
        gx1, gw1, _ = conv2d_backward(cache, go, weight=w)
        gx2, gw2 = conv2d_vjp(x, w, go, stride=1, pad=1)
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gw1, gw2)


class TestAvgPool:
    def test_single_block(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2)
        assert avg_pool2x2(x)[0, 0, 0, 0] == 2.5

    def test_constant(self):
        x = np.full((2, 3, 4, 6), 0.75, dtype=np.float32)
        y = avg_pool2x2(x)
        assert y.shape == (2, 3, 2, 3)
        np.testing.assert_array_equal(y, np.full_like(y, 0.75))

    def test_mixed_signs_cancel(self):
        x = np.array([[-1.0, -1.0], [1.0, 1.0]]).reshape(1, 1, 2, 2)
        assert avg_pool2x2(x)[0, 0, 0, 0] == 0.0

    def test_preserves_global_mean(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 4, 8, 8))
        np.testing.assert_allclose(avg_pool2x2(x).mean(), x.mean(), rtol=0, atol=1e-15)

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError):
            avg_pool2x2(np.ones((1, 1, 3, 4)))

    def test_backward_is_adjoint(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 4, 4))
        g = rng.standard_normal((1, 2, 2, 2))
        lhs = (avg_pool2x2(x) * g).sum()
        rhs = (x * avg_pool2x2_backward(g, x.shape)).sum()
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


class TestBilinearUp2:
    def test_constant(self):
        x = np.full((1, 2, 3, 3), 1.5, dtype=np.float32)
        y = bilinear_up2(x)
        assert y.shape == (1, 2, 6, 6)
        np.testing.assert_allclose(y, 1.5)

    def test_row_interpolation(self):
        x = np.array([0.0, 1.0], dtype=np.float64).reshape(1, 1, 1, 2)
        y = bilinear_up2(x)
        np.testing.assert_allclose(y[0, 0, 0], [0.0, 0.25, 0.75, 1.0])
        np.testing.assert_allclose(y[0, 0, 1], [0.0, 0.25, 0.75, 1.0])

    def test_single_pixel(self):
        x = np.full((1, 1, 1, 1), -3.25)
        np.testing.assert_array_equal(bilinear_up2(x), np.full((1, 1, 2, 2), -3.25))

    def test_backward_is_adjoint(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 5, 4))
        g = rng.standard_normal((2, 3, 10, 8))
        lhs = (bilinear_up2(x) * g).sum()
        rhs = (x * bilinear_up2_backward(g, x.shape)).sum()
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


class TestConcatSplit:
    def test_channel_counts(self):
        a = np.zeros((1, 2, 4, 4))
        b = np.zeros((1, 3, 4, 4))
        assert concat_channels(a, b).shape[1] == 5

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 3, 4, 5))
        b = rng.standard_normal((2, 2, 4, 5))
        a2, b2 = split_channels(concat_channels(a, b), 3)
        np.testing.assert_array_equal(a, a2)
        np.testing.assert_array_equal(b, b2)

    def test_prefix_channels_match(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((1, 4, 3, 3))
        b = rng.standard_normal((1, 2, 3, 3))
        cat = concat_channels(a, b)
        for i in range(4):
            np.testing.assert_array_equal(cat[:, i], a[:, i])

    def test_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            concat_channels(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 5, 4)))

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 2),
        ca=st.integers(1, 4),
        cb=st.integers(1, 4),
        h=st.integers(1, 5),
        w=st.integers(1, 5),
        seed=st.integers(0, 2**16),
    )
    def test_split_concat_identity(self, n, ca, cb, h, w, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, ca + cb, h, w))
        a, b = split_channels(x, ca)
        np.testing.assert_array_equal(concat_channels(a, b), x)
