import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hafuse import autodiff as ad
from hafuse.autodiff import Precision, Tape, Tensor
from hafuse.errors import ContractError, DimensionError, GeometryError, NumericError, ParameterError
from hafuse.gradcheck import GradCase, check_once


def T(x, **kw):
    return Tensor(np.asarray(x, dtype=np.float64), **kw)


def naive_conv2d(x, w, b, stride, pad):
    """Direct loop cross-correlation, used as an independent reference."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, ww = xp.shape
    o, _, kh, kw = w.shape
    oh, ow = (h - kh) // stride + 1, (ww - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for bi in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bi, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[bi, oc, i, j] = np.sum(patch * w[oc]) + (b[0, oc, 0, 0] if b is not None else 0)
    return out


class TestTensor:
    def test_rank_four_required(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 2)))

    def test_default_precision_is_training(self):
        assert Tensor([[[[1]]]]).dtype == np.float32
        assert Precision.TRAINING.dtype == np.float32
        assert Precision.VERIFICATION.dtype == np.float64

    def test_float64_array_keeps_precision(self):
        assert Tensor(np.zeros((1, 1, 1, 1))).dtype == np.float64

    def test_item_requires_single_element(self):
        with pytest.raises(ContractError):
            T(np.zeros((1, 1, 2, 1))).item()


class TestConv2d:
    def test_identity_kernel(self):
        x = T(np.ones((1, 1, 3, 3)))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1
        out = ad.conv2d(x, T(w), T(np.zeros((1, 1, 1, 1))), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_sum_kernel(self):
        out = ad.conv2d(T([[[[1, 2], [3, 4]]]]), T(np.ones((1, 1, 2, 2))), T(np.zeros((1, 1, 1, 1))))
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 10

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
    def test_matches_naive_loop(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x, w, b = rng.standard_normal((2, 3, 7, 6)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal((1, 4, 1, 1))
        out = ad.conv2d(T(x), T(w), T(b), stride=stride, padding=pad)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=4, max_dims=4, min_side=1, max_side=5),
                      elements=st.floats(-1e3, 1e3)))
    def test_identity_kernel_any_input(self, x):
        c = x.shape[1]
        w = np.zeros((c, c, 3, 3))
        for i in range(c):
            w[i, i, 1, 1] = 1
        np.testing.assert_array_equal(ad.conv2d(T(x), T(w), padding=1).data, x)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))

    def test_empty_output_is_geometry_error(self):
        with pytest.raises(GeometryError):
            ad.conv2d(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 3, 3))))

    def test_spec_gradient_example(self):
        def make(rng, s):
            inputs = {"x": rng.standard_normal((1, 2, 5, 5)), "w": rng.standard_normal((3, 2, 3, 3)),
                      "b": rng.standard_normal((1, 3, 1, 1))}
            return inputs, lambda t: ad.conv2d(t["x"], t["w"], t["b"])
        err, _ = check_once(GradCase("conv", make), seed=0)
        assert err < 1e-4


class TestConv1dChannels:
    def test_identity_kernel(self):
        v = T(np.arange(5.0).reshape(1, 5, 1, 1))
        np.testing.assert_array_equal(ad.conv1d_channels(v, T([[[[0, 1, 0]]]])).data, v.data)

    def test_hand_example(self):
        out = ad.conv1d_channels(T(np.array([1, 2, 3, 4.0]).reshape(1, 4, 1, 1)), T([[[[1, 1, 1]]]]))
        np.testing.assert_array_equal(out.data.ravel(), [3, 6, 9, 7])

    def test_even_kernel_rejected(self):
        with pytest.raises(ParameterError):
            ad.conv1d_channels(T(np.ones((1, 4, 1, 1))), T(np.ones((1, 1, 1, 2))))


class TestPooling:
    def test_max_and_avg(self):
        x = T([[[[1, 2], [3, 4]]]])
        assert ad.pool2d(x, "max", 2, 2).item() == 4
        assert ad.pool2d(x, "avg", 2, 2).item() == 2.5

    def test_global(self):
        x = T([[[[2, -1], [0, 0]]]])
        assert ad.global_pool(x, "max").item() == 2
        assert ad.global_pool(x, "avg").item() == 0.25

    def test_max_tie_routes_to_first(self):
        x = T(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            L = ad.sum_all(ad.pool2d(x, "max", 2, 2))
        tape.backward(L)
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float64, (2, 3, 4, 6), elements=st.floats(-10, 10)))
    def test_global_extent_avg_pool_equals_gap(self, x):
        a = ad.pool2d(T(x[..., :4, :4]), "avg", 4, 4).data
        b = ad.global_pool(T(x[..., :4, :4]), "avg").data
        np.testing.assert_array_equal(a, b)

    def test_pool_geometry_error(self):
        with pytest.raises(GeometryError):
            ad.pool2d(T(np.zeros((1, 1, 1, 1))), "max", 2, 2)


class TestUpsample:
    def test_factor_one_is_identity(self):
        x = T(np.ones((1, 1, 2, 2)))
        assert ad.upsample_nearest(x, 1) is x

    def test_replication(self):
        out = ad.upsample_nearest(T([[[[1, 2], [3, 4]]]]), 2)
        np.testing.assert_array_equal(out.data[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_bad_factor(self):
        with pytest.raises(ParameterError):
            ad.upsample_nearest(T(np.ones((1, 1, 2, 2))), 0)


class TestDenseAndActivations:
    def test_dense_identity(self):
        x = T(np.arange(4.0).reshape(1, 1, 2, 2))
        out = ad.dense(x, T(np.eye(4).reshape(4, 4, 1, 1)), T(np.zeros((1, 4, 1, 1))))
        np.testing.assert_array_equal(out.data.ravel(), [0, 1, 2, 3])

    def test_dense_hand_example(self):
        out = ad.dense(T(np.array([1.0, 2.0]).reshape(1, 2, 1, 1)), T(np.array([[1, 1], [1, -1.0]]).reshape(2, 2, 1, 1)),
                       T(np.array([0, 1.0]).reshape(1, 2, 1, 1)))
        np.testing.assert_array_equal(out.data.ravel(), [3, 0])

    def test_dense_mismatch(self):
        with pytest.raises(DimensionError):
            ad.dense(T(np.ones((1, 3, 1, 1))), T(np.ones((2, 2, 1, 1))))

    def test_activation_values(self):
        assert ad.sigmoid(T(np.zeros((1, 1, 1, 1)))).item() == 0.5
        assert ad.leaky_relu(T(np.full((1, 1, 1, 1), -2.0)), 0.2).item() == pytest.approx(-0.4, abs=1e-15)
        assert ad.tanh(T(np.zeros((1, 1, 1, 1)))).item() == 0.0

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_sigmoid_strictly_inside_unit_interval(self, dtype):
        y = ad.sigmoid(Tensor(np.array([-1e4, -50.0, 50.0, 1e4]).reshape(1, 1, 2, 2), dtype=dtype)).data
        assert np.all(y > 0) and np.all(y < 1)


class TestStructural:
    def test_concat_single_is_identity(self):
        x = T(np.ones((1, 2, 2, 2)))
        assert ad.concat_channels([x]) is x

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000))
    def test_concat_then_split_is_exact(self, ca, cb, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, ca, 3, 3)), rng.standard_normal((2, cb, 3, 3))
        pa, pb = ad.split_channels(ad.concat_channels([T(a), T(b)]), [ca, cb])
        np.testing.assert_array_equal(pa.data, a)
        np.testing.assert_array_equal(pb.data, b)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            ad.concat_channels([T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 3, 2)))])

    def test_channel_max(self):
        x = T(np.array([1.0, 3.0, 2.0]).reshape(1, 3, 1, 1))
        assert ad.channel_max_map(x).item() == 3
        single = T(np.arange(4.0).reshape(1, 1, 2, 2))
        np.testing.assert_array_equal(ad.channel_max_map(single).data, single.data)


class TestElementwise:
    def test_mul_by_ones(self):
        a = T(np.random.default_rng(0).standard_normal((1, 2, 3, 3)))
        np.testing.assert_array_equal(ad.mul(a, T(np.ones((1, 2, 3, 3)))).data, a.data)

    def test_div_eps_zero_denominator_is_positive(self):
        out = ad.div_eps(T(np.full((1, 1, 1, 1), 3.0)), T(np.zeros((1, 1, 1, 1))), eps=1e-8)
        assert out.item() == pytest.approx(3.0 / 1e-8, rel=1e-15)

    def test_div_eps_clamp_has_zero_denominator_gradient(self):
        a = T(np.ones((1, 1, 1, 1)), requires_grad=True)
        b = T(np.full((1, 1, 1, 1), 1e-10), requires_grad=True)
        with Tape() as tape:
            L = ad.sum_all(ad.div_eps(a, b))
        tape.backward(L)
        assert b.grad.item() == 0.0

    def test_broadcast_from_channel_vector(self):
        a = T(np.ones((2, 3, 2, 2)))
        b = T(np.arange(6.0).reshape(2, 3, 1, 1))
        out = ad.mul(a, b)
        np.testing.assert_array_equal(out.data[:, :, 1, 1], b.data[:, :, 0, 0])

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            ad.add(T(np.ones((1, 2, 2, 2))), T(np.ones((1, 2, 2, 1))))

    def test_mixed_precision_rejected(self):
        with pytest.raises(ContractError):
            ad.add(Tensor(np.ones((1, 1, 1, 1)), dtype=np.float32), Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64))


class TestSobel:
    def test_constant_image_is_flat(self):
        out = ad.sobel_gradient(T(np.full((1, 1, 5, 5), 0.7)))
        np.testing.assert_allclose(out.data, np.sqrt(ad.SOBEL_DELTA), rtol=1e-12)

    def test_vertical_step_edge(self):
        x = np.zeros((1, 1, 6, 6))
        x[..., 3:] = 1.0
        gx, gy = ad.sobel_xy(x[0, 0])
        # the column left of the step sees the full kernel response
        assert gx[2, 2] == 4 and gy[2, 2] == 0
        mag = ad.sobel_gradient(T(x)).data[0, 0]
        assert mag[2, 2] == pytest.approx(4.0, abs=1e-12)

    def test_too_small(self):
        with pytest.raises(GeometryError):
            ad.sobel_gradient(T(np.ones((1, 1, 2, 5))))

    def test_multi_channel_rejected(self):
        with pytest.raises(DimensionError):
            ad.sobel_gradient(T(np.ones((1, 2, 4, 4))))


class TestBackward:
    def test_sum_gives_ones(self):
        x = T(np.random.default_rng(1).standard_normal((1, 2, 3, 3)), requires_grad=True)
        with Tape() as tape:
            L = ad.sum_all(x)
        tape.backward(L)
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_sum_of_squares_gives_2x(self):
        x = T(np.random.default_rng(2).standard_normal((1, 2, 3, 3)), requires_grad=True)
        with Tape() as tape:
            L = ad.sum_all(ad.mul(x, x))
        tape.backward(L)
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-15)

    def test_repeated_backward_accumulates(self):
        x = T(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            L = ad.sum_all(ad.scale(x, 3.0))
        tape.backward(L)
        tape.backward(L)
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 6.0))

    def test_non_scalar_root_rejected(self):
        x = T(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            y = ad.scale(x, 2.0)
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_no_tape_no_recording(self):
        x = T(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = ad.scale(x, 2.0)
        assert not y.requires_grad

    def test_tape_rejects_second_precision(self):
        a = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True, dtype=np.float32)
        b = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
        with Tape():
            ad.scale(a, 2.0)
            with pytest.raises(ContractError):
                ad.scale(b, 2.0)

    def test_composite_graph_matches_finite_differences(self):
        def make(rng, s):
            inputs = {"x": rng.standard_normal((2, 1, 6, 6)), "w": rng.standard_normal((2, 1, 3, 3)),
                      "fw": rng.standard_normal((3, 18, 1, 1))}

            def fn(t):
                h = ad.pool2d(ad.conv2d(t["x"], t["w"], padding=1), "avg", 2, 2)
                return ad.sum_all(ad.sigmoid(ad.dense(h, t["fw"])))
            return inputs, fn
        for seed in range(5):
            assert check_once(GradCase("composite", make), seed)[0] < 1e-4

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_forward_is_numeric_error(self):
        with pytest.raises(NumericError):
            ad.square(T(np.full((1, 1, 1, 1), 1e200)))

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(3)
        x, w = rng.standard_normal((2, 3, 8, 8)).astype(np.float32), rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        a = ad.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = ad.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert a.tobytes() == b.tobytes()
