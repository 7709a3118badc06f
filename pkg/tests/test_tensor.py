import numpy as np
import pytest

import peelnet.tensor as T
from peelnet.tensor import ConvSpec, Tensor, grad_check, no_grad


def _conv_oracle(x, weight, bias, spec):
    """Nested-loop cross-correlation; deliberately naive."""
    n, c, h, w = x.shape
    oc, _, k, _ = weight.shape
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    oh, ow = spec.output_extent(h), spec.output_extent(w)
    out = np.zeros((n, oc, oh, ow), dtype=x.dtype)
    for b in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = x.dtype.type(0)
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (
                                    xp[b, ci, i * s + ki * d, j * s + kj * d]
                                    * weight[o, ci, ki, kj]
                                )
                    out[b, o, i, j] = acc + (0 if bias is None else bias[o])
    return out


class TestConv2d:
    def test_all_ones_kernel_values(self):
        x = Tensor(np.arange(1.0, 10.0, dtype=np.float32).reshape(1, 1, 3, 3))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        spec = ConvSpec(1, 1, 3, padding=1)
        out = T.conv2d(x, spec, w).data[0, 0]
        assert out[1, 1] == 45.0
        assert out[0, 0] == 12.0

    def test_1x1_identity(self, rng):
        x = Tensor(rng.random((2, 1, 4, 4), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = T.conv2d(x, ConvSpec(1, 1, 1), w)
        assert np.array_equal(out.data, x.data)

    def test_output_extent_formula(self):
        spec = ConvSpec(1, 1, 3, stride=2, padding=1)
        x = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        assert T.conv2d(x, spec, Tensor(np.zeros((1, 1, 3, 3)))).shape == (1, 1, 2, 2)

    def test_matches_nested_loop_exactly_on_integers(self, rng):
        # integer-valued floats make every partial sum exactly representable,
        # so summation order cannot matter and equality is bit-level
        for spec in (
            ConvSpec(4, 2, 3, stride=1, dilation=1, padding=1),
            ConvSpec(4, 3, 3, stride=2, dilation=1, padding=1),
            ConvSpec(2, 2, 3, stride=1, dilation=2, padding=2),
        ):
            x = rng.integers(-4, 5, (2, spec.in_channels, 9, 9)).astype(np.float32)
            w = rng.integers(-3, 4, (spec.out_channels, spec.in_channels, 3, 3)).astype(
                np.float32
            )
            b = rng.integers(-2, 3, spec.out_channels).astype(np.float32)
            got = T.conv2d(Tensor(x), spec, Tensor(w), Tensor(b)).data
            assert np.array_equal(got, _conv_oracle(x, w, b, spec))

    def test_matches_nested_loop_on_floats(self, rng):
        spec = ConvSpec(3, 2, 3, padding=1)
        x = rng.standard_normal((1, 3, 7, 7)).astype(np.float32)
        w = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
        got = T.conv2d(Tensor(x), spec, Tensor(w)).data
        np.testing.assert_allclose(got, _conv_oracle(x, w, None, spec), rtol=2e-6, atol=2e-6)

    def test_shape_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ValueError):
            T.conv2d(x, ConvSpec(3, 1, 3), Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError):
            T.conv2d(x, ConvSpec(2, 1, 3), Tensor(np.zeros((1, 2, 5, 5))))


class TestMatmul:
    def test_identity(self, rng):
        a = rng.random((3, 3))
        out = T.matmul(Tensor(np.eye(3)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_hand_value(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.reshape(()) == 11.0

    def test_transpose_identity(self, rng):
        a, b = rng.random((3, 4)), rng.random((4, 2))
        left = T.matmul(Tensor(a), Tensor(b)).data.T
        right = T.matmul(Tensor(b.T.copy()), Tensor(a.T.copy())).data
        np.testing.assert_allclose(left, right, rtol=1e-12)

    def test_mismatch_raises(self):
        with pytest.raises(ValueError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]), axis=0).data
        np.testing.assert_array_equal(out, [0.5, 0.5])

    def test_closed_form(self):
        out = T.softmax(Tensor(np.array([1.0, 0.0], dtype=np.float64)), axis=0).data
        np.testing.assert_allclose(
            out, [0.7310585786300049, 0.2689414213699951], rtol=1e-12
        )

    def test_shift_invariance(self, rng):
        x = rng.standard_normal(6)
        a = T.softmax(Tensor(x), axis=0).data
        b = T.softmax(Tensor(x + 3.7), axis=0).data
        np.testing.assert_allclose(a, b, rtol=1e-6)

    def test_rows_sum_to_one_and_positive(self, rng):
        x = rng.standard_normal((5, 7)) * 10
        out = T.softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert (out > 0).all() and (out < 1).all()

    def test_empty_axis_raises(self):
        with pytest.raises(ValueError):
            T.softmax(Tensor(np.zeros((3, 0))), axis=1)


class TestElementwise:
    def test_sigmoid_zero(self):
        x = Tensor(np.zeros(1), requires_grad=True)
        out = T.tensor_sum(T.sigmoid(x))
        assert out.data.reshape(()) == 0.5
        out.backward()
        assert x.grad[0] == 0.25

    def test_sigmoid_tail_value(self):
        out = T.sigmoid(Tensor(np.array([-20.0], dtype=np.float64))).data[0]
        np.testing.assert_allclose(out, 2.0611536181902037e-09, rtol=1e-9)

    def test_abs_subgradient_zero_at_zero(self):
        x = Tensor(np.array([0.0, -2.0, 3.0]), requires_grad=True)
        T.tensor_sum(T.absolute(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])

    def test_mean_of_ones(self):
        assert T.mean(Tensor(np.ones(11))).data.reshape(()) == 1.0

    def test_broadcasting_trailing_alignment(self, rng):
        a = Tensor(rng.random((2, 3, 4)), requires_grad=True)
        b = Tensor(rng.random((3, 1)), requires_grad=True)
        out = T.tensor_sum(T.mul(a, b))
        out.backward()
        assert a.grad.shape == a.shape and b.grad.shape == b.shape

    def test_incompatible_shapes_raise(self):
        with pytest.raises(ValueError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestUpsample:
    def test_single_pixel(self):
        out = T.upsample_nearest2x(Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data[0, 0], np.ones((2, 2)))

    def test_constant_blocks(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = T.upsample_nearest2x(x).data[0, 0]
        expect = np.array(
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float64
        )
        np.testing.assert_array_equal(out, expect)

    def test_adjoint_sums_blocks(self, rng):
        x = Tensor(rng.random((1, 2, 3, 3)), requires_grad=True)
        T.tensor_sum(T.upsample_nearest2x(x)).backward()
        np.testing.assert_array_equal(x.grad, np.full(x.shape, 4.0))


class TestBackward:
    def test_quadratic(self, rng):
        data = rng.random(5)
        x = Tensor(data, requires_grad=True)
        T.tensor_sum(T.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, 2 * data, rtol=1e-6)

    def test_shared_use_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        T.tensor_sum(T.add(x, x)).backward()
        assert x.grad[0] == 2.0

    def test_non_scalar_raises(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros(3), requires_grad=True).backward()

    def test_deterministic(self, rng):
        data = rng.random((4, 4))

        def run():
            x = Tensor(data, requires_grad=True)
            w = Tensor(np.ones((4, 4)))
            T.tensor_sum(T.softmax(T.matmul(x, w), axis=1)).backward()
            return x.grad.copy()

        assert np.array_equal(run(), run())

    def test_no_grad_blocks_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = T.mul(x, x)
        assert not out.requires_grad and out._parents == ()

    def test_int_input_coerced_to_float(self):
        t = Tensor(np.array([1, 2, 3]))
        assert t.dtype == np.float32


class TestGradCheck:
    def test_linear_exact(self):
        err = grad_check(lambda x: T.tensor_sum(T.mul(x, 3.0)), np.ones(4), 1e-5)
        assert err < 1e-10

    def test_sigmoid_sum(self, rng):
        err = grad_check(
            lambda x: T.sigmoid(T.tensor_sum(x)), rng.standard_normal(6), 1e-5
        )
        assert err < 1e-6

    def test_conv_softmax_composite(self, rng):
        w = rng.standard_normal((2, 1, 3, 3))
        spec = ConvSpec(1, 2, 3, padding=1)

        def fn(x):
            out = T.conv2d(x, spec, Tensor(w))
            return T.tensor_sum(
                T.mul(T.softmax(T.reshape(out, (2, 16)), axis=1), Tensor(rng2))
            )

        rng2 = np.random.default_rng(9).standard_normal((2, 16))
        err = grad_check(fn, rng.standard_normal((1, 1, 4, 4)), 1e-5)
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_randomized_op_suite(self, seed):
        """Every differentiable op under 1e-4 on small random shapes."""
        r = np.random.default_rng(seed)
        x0 = r.standard_normal((2, 3, 4)) * 0.7 + 0.1
        m0 = r.standard_normal((3, 4))
        # plain sum(softmax) is constant per row, so weight the outputs to
        # keep the gradient nonzero for a meaningful comparison
        soft_w = r.standard_normal((6, 4))
        checks = [
            lambda x: T.tensor_sum(T.mul(T.add(x, 1.5), T.sub(x, 0.25))),
            lambda x: T.tensor_sum(T.div(x, T.add(T.mul(x, x), 1.0))),
            lambda x: T.tensor_sum(T.absolute(T.add(x, 0.311))),
            lambda x: T.tensor_sum(T.sigmoid(x)),
            lambda x: T.tensor_sum(T.relu(T.add(x, 0.017))),
            lambda x: T.tensor_sum(T.leaky_relu(T.add(x, 0.013))),
            lambda x: T.tensor_sum(T.elu(x)),
            lambda x: T.tensor_sum(T.sqrt(T.add(T.mul(x, x), 0.5))),
            lambda x: T.tensor_sum(T.mean(x, axis=(0, 2))),
            lambda x: T.tensor_sum(T.mean(x, axis=1)),
            lambda x: T.tensor_sum(
                T.mul(T.softmax(T.reshape(x, (6, 4)), axis=1), Tensor(soft_w))
            ),
            lambda x: T.tensor_sum(T.spatial_slice(x, slice(1, None), slice(None, -1))),
            lambda x: T.tensor_sum(T.concat([x, T.mul(x, 2.0)], axis=1)),
            lambda x: T.tensor_sum(T.neg(x)),
        ]
        for fn in checks:
            assert grad_check(fn, x0, 1e-5) < 1e-4
        updates = r.standard_normal((3, 2))
        weights = r.standard_normal((3, 4))
        mat_checks = [
            lambda m: T.tensor_sum(T.matmul(m, T.transpose2d(m))),
            lambda m: T.tensor_sum(T.take_columns(m, np.array([2, 0]))),
            lambda m: T.tensor_sum(
                T.mul(
                    T.add_at_columns(m, np.array([1, 3]), Tensor(updates)),
                    Tensor(weights),
                )
            ),
        ]
        for fn in mat_checks:
            assert grad_check(fn, m0, 1e-5) < 1e-4
        x4 = r.standard_normal((1, 2, 4, 4))
        w4 = r.standard_normal((3, 2, 3, 3))
        up_w = r.standard_normal((1, 2, 8, 8))
        pool_w = r.standard_normal((1, 2, 2, 2))
        spec = ConvSpec(2, 3, 3, padding=1)
        conv_checks = [
            lambda x: T.tensor_sum(T.mul(T.conv2d(x, spec, Tensor(w4)), 0.3)),
            lambda x: T.tensor_sum(T.mul(T.upsample_nearest2x(x), Tensor(up_w))),
            lambda x: T.tensor_sum(T.mul(T.avgpool2x(x), Tensor(pool_w))),
        ]
        for fn in conv_checks:
            assert grad_check(fn, x4, 1e-5) < 1e-4
