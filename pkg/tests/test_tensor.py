"""Autodiff engine: op semantics, graph behavior, finite-difference laws."""

import numpy as np
import pytest

from stnhcl import tensor as T
from stnhcl.errors import ContractError, ShapeError
from stnhcl.gradcheck import check_case, finite_difference, op_cases, relative_error
from stnhcl.tensor import Graph, Tensor


class TestTensorBasics:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_preserved(self):
        assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64

    def test_item_requires_single_element(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_detach_shares_storage_but_not_grad_flag(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        d = x.detach()
        assert d.data is x.data and not d.requires_grad

    def test_mixed_dtypes_rejected(self):
        a = Tensor(np.ones(2, dtype=np.float32))
        b = Tensor(np.ones(2, dtype=np.float64))
        with pytest.raises(TypeError):
            T.add(a, b)


class TestOpSemantics:
    def test_matmul_identity(self):
        a = np.arange(6, dtype=np.float64).reshape(2, 3)
        out = T.matmul(Tensor(a), Tensor(np.eye(3)))
        np.testing.assert_array_equal(out.data, a)

    def test_matmul_zero_annihilates(self):
        a = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        out = T.matmul(a, Tensor(np.zeros((4, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 2)))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_softmax_rows_sum_to_one_even_at_huge_magnitude(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(-1e4, 1e4, size=(8, 6)))
        sums = T.softmax(x, axis=1).data.sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_softmax_of_constant_rows_is_uniform(self):
        out = T.softmax(Tensor(np.full((2, 5), 3.25)), axis=1)
        np.testing.assert_allclose(out.data, 0.2, atol=1e-7)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 5))
        a = T.softmax(Tensor(x), axis=1).data
        b = T.softmax(Tensor(x + 123.456), axis=1).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_l2_normalize_three_four_five(self):
        out = T.l2_normalize(Tensor(np.array([[3.0, 4.0]], dtype=np.float64)))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-7)

    def test_l2_normalize_zero_row_stays_finite(self):
        out = T.l2_normalize(Tensor(np.zeros((1, 4))))
        assert np.isfinite(out.data).all()
        np.testing.assert_array_equal(out.data, 0.0)

    def test_conv2d_identity_kernel(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 5, 5))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out = T.conv2d(Tensor(x), Tensor(kernel), stride=1, padding=1)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_conv2d_ones_kernel_counts_neighborhood(self):
        x = np.ones((1, 4, 4))
        kernel = np.ones((1, 1, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(kernel), stride=1, padding=1)
        # interior cells see the full 3x3 window, corners only 2x2
        assert out.data[0, 1, 1] == 9.0
        assert out.data[0, 0, 0] == 4.0

    def test_conv2d_output_extent_formula(self):
        x = Tensor(np.zeros((2, 11, 9)))
        k = Tensor(np.zeros((4, 2, 3, 3)))
        out = T.conv2d(x, k, stride=2, padding=1)
        assert out.shape == (4, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_conv2d_kernel_too_large(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 7, 7))))

    def test_conv2d_edge_padding_keeps_constant_input_constant(self):
        # border replication: a flat image convolves to a flat map, with
        # no boundary ring (unlike zero padding, which manufactures edges)
        x = np.full((2, 5, 5), 0.7)
        kernel = np.random.default_rng(11).normal(size=(3, 2, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(kernel), stride=1, padding=1, pad_mode="edge")
        expected = 0.7 * kernel.sum(axis=(1, 2, 3))
        np.testing.assert_allclose(out.data, expected[:, None, None] * np.ones((3, 5, 5)), atol=1e-12)

    def test_conv2d_edge_padding_matches_manual_pad(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(k), stride=2, padding=1, pad_mode="edge")
        pre = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
        ref = T.conv2d(Tensor(pre), Tensor(k), stride=2, padding=0)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-12)

    def test_conv2d_bad_pad_mode(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), padding=1, pad_mode="reflect")

    def test_upsample_nearest_repeats_cells(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = T.upsample_nearest(x, 2)
        assert out.shape == (1, 4, 4)
        assert out.data[0, 0, 1] == 1.0 and out.data[0, 3, 3] == 4.0

    def test_gather_rows_out_of_bounds(self):
        with pytest.raises(IndexError):
            T.gather_rows(Tensor(np.zeros((3, 2))), np.array([0, 3]))

    def test_gather_pixels_layout(self):
        fmap = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3)
        out = T.gather_pixels(Tensor(fmap), np.array([0, 5]))
        np.testing.assert_array_equal(out.data, [[0.0, 6.0], [5.0, 11.0]])

    def test_broadcasting_shape_error(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))

    def test_sigmoid_bounds_and_midpoint(self):
        out = T.sigmoid(Tensor(np.array([-500.0, 0.0, 500.0])))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0], atol=1e-7)
        assert np.isfinite(out.data).all()


class TestGraphSemantics:
    def test_fanout_accumulates_additively(self):
        x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
        with Graph() as g:
            y = T.add(T.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
        (grad,) = g.backward(y, [x])
        assert grad == pytest.approx(5.0)

    def test_untouched_parameters_get_zeros(self):
        x = Tensor(np.ones(3, dtype=np.float64), requires_grad=True)
        unused = Tensor(np.ones((2, 2), dtype=np.float64), requires_grad=True)
        with Graph() as g:
            loss = T.reduce_sum(x)
        gx, gu = g.backward(loss, [x, unused])
        np.testing.assert_array_equal(gx, 1.0)
        np.testing.assert_array_equal(gu, np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Graph() as g:
            y = T.mul(x, 2.0)
        with pytest.raises(ContractError):
            g.backward(y, [x])

    def test_nothing_recorded_without_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = T.mul(x, 2.0)
        assert not y.requires_grad

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array(3.0, dtype=np.float64), requires_grad=True)
        with Graph() as g:
            y = T.mul(x.detach(), x)  # only the live factor contributes
        (grad,) = g.backward(y, [x])
        assert grad == pytest.approx(3.0)

    def test_repeated_parent_in_one_op(self):
        x = Tensor(np.array(4.0, dtype=np.float64), requires_grad=True)
        with Graph() as g:
            y = T.mul(x, x)
        (grad,) = g.backward(y, [x])
        assert grad == pytest.approx(8.0)

    def test_gradient_of_intermediate_is_available(self):
        x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
        with Graph() as g:
            mid = T.mul(x, 3.0)
            loss = T.mul(mid, mid)
        g_mid, g_x = g.backward(loss, [mid, x])
        assert g_mid == pytest.approx(12.0)
        assert g_x == pytest.approx(36.0)

    def test_nested_graphs_record_to_innermost(self):
        x = Tensor(np.array(1.0, dtype=np.float64), requires_grad=True)
        with Graph() as outer:
            _ = T.mul(x, 2.0)
            with Graph() as inner:
                y = T.mul(x, 5.0)
            assert len(inner) == 1
        (grad,) = inner.backward(y, [x])
        assert grad == pytest.approx(5.0)
        assert len(outer) == 1


class TestFiniteDifferenceLaw:
    """Every primitive's gradient agrees with central differences."""

    def test_hundred_trials_float64(self):
        cases = op_cases()
        for trial in range(100):
            name, build = cases[trial % len(cases)]
            result = check_case(name, build, seed=trial, eps=1e-4, tol=1e-6, dtype=np.float64)
            assert result.passed, f"trial {trial}: {result.line()}"

    def test_hundred_trials_float32(self):
        # float32 forward passes quantize at ~1e-7, which would swamp a
        # 32-bit difference quotient.  Instead the 32-bit recorded
        # gradients are compared against a 64-bit twin of the same case
        # (same seed, so the same draws up to the cast).
        cases = op_cases()
        for trial in range(100):
            name, build = cases[trial % len(cases)]
            seed = 1000 + trial
            params32, loss32 = build(np.random.default_rng(seed), np.float32)
            with Graph() as g:
                loss = loss32()
            auto = g.backward(loss, list(params32.values()))
            params64, loss64 = build(np.random.default_rng(seed), np.float64)
            for (pname, _), grad32 in zip(params32.items(), auto):
                fd = finite_difference(loss64, params64[pname], 1e-4)
                err = relative_error(grad32, fd)
                assert err < 1e-4, f"trial {trial} {name}.{pname}: rel err {err:.3e}"

    def test_injected_sign_error_is_caught(self):
        def broken_scale(x: Tensor) -> Tensor:
            return T.custom_op((x,), 1.7 * x.data, lambda g: (-1.7 * g,))

        def build(rng, dtype):
            x = Tensor(rng.uniform(-1, 1, size=(3, 3)).astype(dtype), requires_grad=True)
            return {"x": x}, lambda: T.reduce_sum(broken_scale(x))

        result = check_case("broken_scale", build, eps=1e-4, tol=1e-4)
        assert not result.passed
