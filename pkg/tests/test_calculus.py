import math

import numpy as np
import pytest

from smallgain import calculus as cc
from smallgain.calculus import FnClass


class TestEval:
    def test_identity(self):
        assert cc.identity()(3.5) == 3.5

    def test_scale_of_square(self):
        f = cc.compose(cc.linear(0.5), cc.power(2))
        assert f(2.0) == 2.0

    def test_inverse_of_square(self):
        assert cc.inverse(cc.power(2))(4.0) == pytest.approx(2.0, abs=1e-9)

    def test_domain_exceeded(self):
        f = cc.linear(2.0, cap=10.0)
        with pytest.raises(cc.DomainError):
            f(11.0)
        with pytest.raises(cc.DomainError):
            f(-1.0)

    def test_class_k_is_exactly_zero_at_zero(self):
        f = cc.inverse(cc.identity() + cc.power(3)) @ cc.saturation(2.0)
        assert f(0.0) == 0.0

    def test_vectorized(self):
        out = cc.linear(3.0)(np.array([0.0, 1.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 3.0, 6.0])


class TestCompose:
    def test_linear_chain(self):
        assert cc.compose(cc.linear(2), cc.linear(3))(1.0) == 6.0

    def test_identity_is_neutral(self):
        f = cc.saturation(2.0) + cc.power(0.5)
        g = cc.compose(f, cc.identity())
        s = np.linspace(0, 100, 100)
        np.testing.assert_allclose(g(s), f(s), rtol=0, atol=0)

    def test_square_of_saturation(self):
        assert cc.compose(cc.power(2), cc.saturation(1.0))(1.0) == pytest.approx(0.25)

    def test_classes(self):
        k = cc.saturation(1.0)
        kinf = cc.linear(2.0)
        assert (kinf @ kinf).declared_class == FnClass.KINF
        assert (kinf @ k).declared_class == FnClass.K
        assert (k + kinf).declared_class == FnClass.KINF
        assert (k + k).declared_class == FnClass.K

    def test_affine_and_min(self):
        f = cc.constant(1.0) + cc.linear(0.5)
        assert f.declared_class == FnClass.POSITIVE_AFFINE
        assert cc.fmin(cc.identity(), cc.linear(2)).declared_class == FnClass.MONOTONE

    def test_non_monotone_inverse_refused(self):
        with pytest.raises(cc.NotStrictlyMonotoneError):
            cc.inverse(cc.constant(1.0) + cc.linear(1.0))

    def test_cap_propagates(self):
        f = cc.compose(cc.linear(1.0, cap=10.0), cc.linear(2.0, cap=100.0))
        assert f.cap == pytest.approx(5.0)

    def test_zero_simplifications(self):
        z = cc.zero()
        f = cc.linear(3.0)
        assert (f @ z).is_zero
        assert (f + z) is f

    def test_scalar_multiple(self):
        f = 3 * cc.power(2)
        assert f(2.0) == 12.0
        assert f.linear_coefficient() is None
        assert (3 * cc.linear(2.0)).linear_coefficient() == 6.0


class TestInvert:
    def test_square(self):
        assert cc.invert(cc.power(2), 4.0) == pytest.approx(2.0, abs=1e-9)

    def test_sum_of_identities(self):
        assert cc.invert(cc.identity() + cc.identity(), 5.0) == pytest.approx(2.5)

    def test_saturation(self):
        f = cc.saturation(2.0)
        s = cc.invert(f, 1.0)
        assert s == pytest.approx(1.0, abs=1e-9)
        assert abs(f(s) - 1.0) <= 1e-9

    def test_bisection_path(self):
        f = cc.power(2) + cc.saturation(1.0)
        y = 7.3
        s = cc.invert(f, y)
        assert abs(f(s) - y) <= 1e-9

    def test_out_of_range(self):
        with pytest.raises(cc.OutOfRangeError):
            cc.invert(cc.saturation(2.0), 2.5)

    def test_not_strict(self):
        with pytest.raises(cc.NotStrictlyMonotoneError):
            cc.invert(cc.fmin(cc.identity(), cc.linear(2.0)), 1.0)

    def test_monotone_in_y(self):
        f = cc.power(3) + cc.saturation(4.0)
        ys = np.linspace(0, 50, 200)
        xs = cc.invert(f, ys)
        assert np.all(np.diff(xs) >= 0)


class TestClassify:
    def test_linear(self):
        rep = cc.classify(cc.linear(0.5))
        assert rep.zero_at_zero and rep.strictly_increasing

    def test_offset(self):
        rep = cc.classify(cc.constant(1.0))
        assert not rep.zero_at_zero
        assert "zero_at_zero violated" in rep.failures(FnClass.K)

    def test_saturation_not_unbounded(self):
        rep = cc.classify(cc.saturation(2.0))
        assert not rep.unbounded
        assert not rep.satisfies(FnClass.KINF)
        assert rep.satisfies(FnClass.K)

    def test_grid_size_recorded(self):
        assert cc.classify(cc.identity(), n_grid=64).n_grid == 64


class TestWeakTriangle:
    def test_square_with_identity(self):
        w = cc.weak_triangle_split(cc.power(2), cc.identity(), 1.0, 1.0)
        assert (w.lhs, w.rhs, w.slack) == (4.0, 8.0, 4.0)

    def test_b_zero(self):
        g = cc.saturation(3.0) + cc.power(0.7)
        w = cc.weak_triangle_split(g, cc.linear(0.3), 2.0, 0.0)
        assert w.lhs == pytest.approx(g(2.0))
        assert w.rhs >= w.lhs

    def test_saturation_oracle(self):
        g = cc.saturation(2.0)
        w = cc.weak_triangle_split(g, cc.linear(0.5), 1.0, 2.0)
        # both sides by hand: g(3), g(1.5) + g(2 + 4)
        lhs = 2 * 3 / 4
        rhs = 2 * 1.5 / 2.5 + 2 * 6 / 7
        assert w.lhs == pytest.approx(lhs)
        assert w.rhs == pytest.approx(rhs)
        assert w.slack >= 0


class TestInverseIdentity:
    def test_identity_rho(self):
        assert cc.verify_inverse_identity(cc.identity()).max_error <= 1e-9

    def test_linear_three(self):
        rho = cc.linear(3.0)
        rep = cc.verify_inverse_identity(rho)
        assert rep.max_error <= 1e-9
        # (Id + rho^-1)(s) = 4/3 s
        rhs = cc.identity() + cc.inverse(rho)
        assert rhs(3.0) == pytest.approx(4.0)

    def test_square_on_ten(self):
        rep = cc.verify_inverse_identity(cc.power(2), s_max=10.0)
        assert rep.max_error <= 1e-6


class TestKL:
    def test_exp_decay_unit(self):
        assert cc.kl_eval(cc.exp_decay(1, 1), 1.0, 0.0) == 1.0

    def test_zero_row(self):
        for beta in (cc.exp_decay(2, 3), cc.scaled_decay(cc.power(2), 0.5),
                     cc.tabulated([0, 1, 2], [0, 1], [[0, 0], [1, 0.5], [2, 1]])):
            assert beta(0.0, 0.7) == 0.0

    def test_exp_decay_value(self):
        assert cc.kl_eval(cc.exp_decay(2, 0.5), 3.0, 2.0) == pytest.approx(6 * math.exp(-1), abs=1e-12)
        assert 6 * math.exp(-1) == pytest.approx(2.2073, abs=1e-4)

    def test_tabulated_clamps_in_t(self):
        beta = cc.tabulated([0, 1], [0, 1, 2], [[0, 0, 0], [3, 2, 1]])
        assert beta(1.0, 10.0) == 1.0
        assert beta(0.5, 0.5) == pytest.approx(1.25)

    def test_tabulated_s_beyond_grid(self):
        beta = cc.tabulated([0, 1], [0, 1], [[0, 0], [1, 1]])
        with pytest.raises(cc.DomainError):
            beta(2.0, 0.0)

    def test_tabulated_grid_validation(self):
        with pytest.raises(ValueError):
            cc.tabulated([0.5, 1], [0, 1], [[0, 0], [1, 1]])
        with pytest.raises(ValueError):
            cc.tabulated([0, 1], [0, 1], [[0, 0]])

    def test_invariants_exp(self):
        inv = cc.exp_decay(1.5, 0.3).check_invariants()
        assert inv["zero_at_zero"] and inv["increasing_in_s"] and inv["nonincreasing_in_t"]

    def test_kl_sum(self):
        a = cc.tabulated([0, 1], [0, 1], [[0, 0], [2, 1]])
        b = cc.tabulated([0, 1], [0, 1], [[0, 0], [1, 1]])
        assert cc.kl_sum(a, b)(1.0, 0.0) == 3.0

    def test_at_time_zero(self):
        assert cc.exp_decay(2.0, 1.0).at_time_zero().linear_coefficient() == 2.0


class TestWithCap:
    def test_widen_compose(self):
        f = cc.compose(cc.linear(2.0, cap=10.0), cc.linear(3.0, cap=10.0))
        g = cc.with_cap(f, 100.0)
        assert g.cap == pytest.approx(100.0)
        assert g(50.0) == 300.0

    def test_expr_roundtrip_text(self):
        f = cc.inverse(cc.identity() + cc.linear(2.0)) @ cc.saturation(3.0)
        assert f.to_expr() == "(inv((id + 2*s)) . 3*s/(1+s))"
