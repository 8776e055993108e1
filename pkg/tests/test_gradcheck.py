"""Finite-difference harness mechanics and per-primitive gradient checks."""

import numpy as np
import pytest

from stnhcl import tensor as T
from stnhcl.errors import ContractError
from stnhcl.gradcheck import (
    CheckResult,
    check_case,
    finite_difference,
    op_cases,
    relative_error,
    suite_passed,
)
from stnhcl.tensor import Graph, Tensor


class TestRelativeError:
    def test_identical_arrays_score_zero(self):
        a = np.array([1.0, -2.0, 3.0])
        assert relative_error(a, a) == 0.0

    def test_small_values_compare_absolutely(self):
        assert relative_error(np.array([0.0]), np.array([1e-5])) == pytest.approx(1e-5)

    def test_large_values_compare_relatively(self):
        assert relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(1 / 101)

    def test_worst_entry_wins(self):
        a = np.array([1.0, 0.0])
        b = np.array([1.0, 0.5])
        assert relative_error(a, b) == pytest.approx(0.5)

    def test_empty_arrays_score_zero(self):
        assert relative_error(np.empty(0), np.empty(0)) == 0.0


class TestFiniteDifference:
    def test_quadratic_gradient_is_recovered_exactly(self):
        x = Tensor(np.array([1.5, -2.0, 0.5]), requires_grad=True)
        w = Tensor(np.array([2.0, 3.0, 4.0]))
        grad = finite_difference(lambda: T.reduce_sum(T.mul(T.mul(x, x), w)), x, eps=1e-4)
        np.testing.assert_allclose(grad, 2.0 * w.data * x.data, atol=1e-9)

    def test_parameter_data_is_restored(self):
        x = Tensor(np.array([0.3, 0.7]), requires_grad=True)
        before = x.data.copy()
        finite_difference(lambda: T.reduce_sum(T.mul(x, x)), x, eps=1e-3)
        np.testing.assert_array_equal(x.data, before)

    def test_refuses_to_run_inside_a_graph(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with Graph():
            with pytest.raises(ContractError, match="active graph"):
                finite_difference(lambda: T.reduce_sum(x), x, eps=1e-4)


class TestPrimitiveCases:
    def test_case_list_is_complete_and_unique(self):
        names = [name for name, _ in op_cases()]
        assert len(names) == len(set(names)) == 27

    @pytest.mark.parametrize("name,build", op_cases(), ids=[n for n, _ in op_cases()])
    def test_recorded_gradients_match_finite_differences(self, name, build):
        result = check_case(name, build, seed=5, eps=1e-4, tol=1e-4)
        assert result.passed, result.line()
        assert result.seconds > 0.0


class TestSuiteSummary:
    def test_line_marks_pass_and_fail(self):
        ok = CheckResult("mul", 1e-9, 1e-4, True)
        bad = CheckResult("div", 0.5, 1e-4, False)
        assert ok.line().startswith("ok") and "mul" in ok.line()
        assert bad.line().startswith("FAIL") and "div" in bad.line()

    def test_suite_passed_requires_every_case(self):
        good = CheckResult("a", 0.0, 1e-4, True)
        assert suite_passed([good, good])
        assert not suite_passed([good, CheckResult("b", 1.0, 1e-4, False)])
        assert suite_passed([])
