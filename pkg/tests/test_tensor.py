"""Tensor substrate: op semantics, shape errors, and gradient correctness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from karma import tensor as T
from karma.gradcheck import gradcheck, op_suite
from karma.tensor import NumericError, ShapeError, Tensor


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(3, 3))
        out = T.matmul(Tensor(np.eye(3)), Tensor(a))
        np.testing.assert_allclose(out.data, a, rtol=0, atol=0)

    def test_hand_expanded_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        # row expansions: 1*5+2*6 = 17, 3*5+4*6 = 39
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_inner_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3))))


class TestConv2d:
    def test_pointwise_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 5, 5))
        out = T.conv2d(Tensor(x), Tensor(np.eye(3)), mode="pointwise")
        np.testing.assert_allclose(out.data, x, atol=1e-15)

    def test_depthwise_all_ones_center_is_total(self, rng):
        x = rng.normal(size=(1, 1, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(np.ones((1, 3, 3))), mode="depthwise", padding="same")
        assert out.data[0, 0, 1, 1] == pytest.approx(x.sum(), rel=1e-14)

    def test_stride2_shape(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 8, 8)))
        out = T.conv2d(x, Tensor(rng.normal(size=(1, 3, 3))), mode="depthwise", stride=2, padding="same")
        assert out.shape == (1, 1, 4, 4)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(2, 4, 3, 3))), mode="standard")

    def test_pointwise_equals_matmul_over_channels(self, rng):
        x = rng.normal(size=(2, 5, 4, 4))
        w = rng.normal(size=(7, 5))
        out = T.conv2d(Tensor(x), Tensor(w), mode="pointwise").data
        # oracle: per-pixel matrix product over the channel dimension
        ref = np.einsum("fc,bchw->bfhw", w, x)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_standard_matches_direct_convolution(self, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(w), mode="standard", stride=1, padding="same").data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 4, 6, 6))
        for i in range(6):
            for j in range(6):
                patch = xp[:, :, i : i + 3, j : j + 3]
                ref[:, :, i, j] = np.einsum("bcij,fcij->bf", patch, w)
        np.testing.assert_allclose(out, ref, atol=1e-12)


def brute_maxpool(x, k, stride):
    b, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.empty((b, c, ho, wo))
    for i in range(ho):
        for j in range(wo):
            out[:, :, i, j] = x[:, :, i * stride : i * stride + k, j * stride : j * stride + k].max(axis=(2, 3))
    return out


class TestMaxpool:
    def test_constant_halves_resolution(self):
        x = Tensor(np.full((1, 2, 4, 4), 3.5))
        out = T.maxpool2d(x, 2, 2)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2, 2), 3.5))

    def test_single_window(self):
        out = T.maxpool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_random_matches_brute_force(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        out = T.maxpool2d(Tensor(x), 2, 2).data
        np.testing.assert_array_equal(out, brute_maxpool(x, 2, 2))

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.sampled_from([0.0, 1.0, 2.0])))
    def test_window_scan_on_small_domain(self, grid):
        x = grid[None, None]
        out = T.maxpool2d(Tensor(x), 2, 2).data
        np.testing.assert_array_equal(out, brute_maxpool(x, 2, 2))

    def test_backward_routes_to_argmax(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), requires_grad=True)
        T.tsum(T.maxpool2d(x, 2, 2)).backward()
        np.testing.assert_array_equal(x.grad, [[[[0.0, 0.0], [0.0, 1.0]]]])

    def test_odd_extent_padded_not_dropped(self, rng):
        # 5x5 with window 2 stride 2: the last row/column still contribute
        x = rng.normal(size=(1, 1, 5, 5))
        out = T.maxpool2d(Tensor(x), 2, 2)
        assert out.shape == (1, 1, 3, 3)
        assert out.data[0, 0, 2, 2] == x[0, 0, 4, 4]
        t = Tensor(x, requires_grad=True)
        T.tsum(T.maxpool2d(t, 2, 2)).backward()
        assert t.grad.shape == x.shape


class TestUpsample:
    def test_factor_one_identity(self, rng):
        x = rng.normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(T.upsample2d(Tensor(x), 1).data, x)

    def test_block_replication(self):
        out = T.upsample2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2).data
        expected = np.array([[[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]], dtype=float)
        np.testing.assert_array_equal(out, expected)

    def test_composition_equals_factor_four(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 3, 3)))
        twice = T.upsample2d(T.upsample2d(x, 2), 2).data
        np.testing.assert_array_equal(twice, T.upsample2d(x, 4).data)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            T.upsample2d(Tensor(np.zeros((1, 1, 2, 2))), 0)


class TestSoftmax:
    def test_equal_logits_uniform(self):
        out = T.softmax(Tensor(np.zeros((2, 5))), axis=1).data
        np.testing.assert_allclose(out, 0.2, atol=1e-15)

    def test_two_class_closed_form(self):
        out = T.softmax(Tensor([[0.0, np.log(3.0)]]), axis=1).data
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-15)

    def test_shift_invariance(self, rng):
        x = rng.normal(size=(3, 4))
        a = T.softmax(Tensor(x), axis=1).data
        b = T.softmax(Tensor(x + 123.456), axis=1).data
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_rows_sum_to_one(self, rng):
        for _ in range(20):
            x = rng.normal(size=(4, 7)) * rng.uniform(0.1, 50)
            s = T.softmax(Tensor(x), axis=1).data.sum(axis=1)
            np.testing.assert_allclose(s, 1.0, atol=1e-12)


class TestActivations:
    def test_silu_zero(self):
        assert T.silu(Tensor([0.0])).data[0] == 0.0

    def test_relu_values(self):
        np.testing.assert_array_equal(T.relu(Tensor([-2.0, 2.0])).data, [0.0, 2.0])

    def test_silu_one(self):
        assert T.silu(Tensor([1.0])).data[0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-12)

    def test_activation_dispatch(self):
        with pytest.raises(ValueError):
            T.activation(Tensor([1.0]), "tanh")

    def test_normalize_dispatch(self, rng):
        x = rng.normal(size=(2, 4))
        out = T.normalize(Tensor(x), "layernorm", gamma=Tensor(np.ones(4)), beta=Tensor(np.zeros(4)))
        assert out.shape == (2, 4)
        with pytest.raises(ValueError):
            T.normalize(Tensor(x), "groupnorm")


class TestNormalize:
    def test_layernorm_standardized_row_unchanged(self):
        row = np.array([[-np.sqrt(1.5), 0.0, np.sqrt(1.5)]])  # zero mean, unit variance
        out = T.layernorm(Tensor(row), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0).data
        np.testing.assert_allclose(out, row, atol=1e-9)

    def test_layernorm_recomputed_moments(self):
        out = T.layernorm(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0).data
        assert out.mean() == pytest.approx(0.0, abs=1e-12)
        assert out.var() == pytest.approx(1.0, abs=1e-9)

    def test_constant_input_zeros(self):
        out = T.layernorm(Tensor(np.full((2, 4), 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_batchnorm_train_normalizes(self, rng):
        x = rng.normal(loc=3.0, scale=2.0, size=(4, 3, 5, 5))
        rm, rv = np.zeros(3), np.ones(3)
        out = T.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, rtol=1e-5)  # within eps
        assert rm[0] != 0.0  # running stats updated

    def test_batchnorm_eval_uses_running(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        rm, rv = np.full(3, 0.5), np.full(3, 2.0)
        out = T.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=False).data
        ref = (x - 0.5) / np.sqrt(2.0 + 1e-5)
        np.testing.assert_allclose(out, ref, atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(x * x).backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-15)

    def test_composite_chain_matches_finite_differences(self, rng):
        err = gradcheck(
            lambda a, b: T.tsum(T.silu(T.matmul(a, b)) * T.softmax(T.matmul(a, b), axis=1)),
            [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))],
        )
        assert err < 1e-5

    def test_non_scalar_loss_rejected(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_graph_consumed(self, rng):
        x = Tensor(rng.normal(size=(2,)), requires_grad=True)
        y = T.tsum(x * x)
        y.backward()
        assert y._bwd is None and y._parents == ()


class TestNumericGuards:
    def test_division_by_zero_raises(self):
        with pytest.raises(NumericError), np.errstate(divide="ignore"):
            T.div(Tensor([1.0]), Tensor([0.0]))

    def test_log_of_negative_raises(self):
        with pytest.raises((NumericError, FloatingPointError)):
            with np.errstate(invalid="ignore"):
                T.log(Tensor([-1.0]))

    def test_invariant_product_shape_equals_size(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 5)))
        assert int(np.prod(x.shape)) == x.data.size


def test_all_op_gradients_match_finite_differences():
    results = op_suite(seed=0)
    worst = max(results.values())
    assert worst < 1e-5, f"worst op gradient error {worst}: {results}"
