import json
import math

import numpy as np
import pytest

from smallgain import calculus as cc
from smallgain.calculus import FnClass
from smallgain.certifier import SmallGainProblem, certify
from smallgain.composer import (CertificateError, FormulaMode, IncrementModulus,
                                SubsystemContract, assemble_certificate, back_index,
                                choose_alpha, compose_r_gains, compute_output_bounds,
                                compute_state_bound, compute_tilde_d, numeric_kl_envelope,
                                step1_bounds)

import oracles

S = 1e9


def contract(g=0.5, u=1.0, M=1.0, d=0.0, a0=1.0, D0=0.0, gu_zero=False):
    return SubsystemContract(
        beta=cc.exp_decay(M, 1.0, cap=S), gamma_y=cc.linear(g, S),
        gamma_u=cc.zero(S) if gu_zero else cc.linear(u, S), d=d,
        alpha0=cc.linear(a0, S) if a0 else cc.zero(S), D0=D0)


def rho(c):
    return cc.linear(c, S)


class TestRGains:
    def test_literal_example(self):
        r1, r2 = compose_r_gains(contract(), contract(), rho(0.5), rho(0.5), cc.identity(S), "literal")
        assert r1.linear_coefficient() == pytest.approx(66.0)
        assert r1(1.0) == pytest.approx(66.0)

    def test_symmetric_example(self):
        r1, _ = compose_r_gains(contract(), contract(), rho(0.5), rho(0.5), cc.identity(S))
        assert r1.linear_coefficient() == pytest.approx(84.0)

    def test_zero_input_gains(self):
        c = contract(gu_zero=True)
        r1, r2 = compose_r_gains(c, c, rho(0.5), rho(0.5), cc.identity(S), "symmetric")
        assert r1.is_zero and r2.is_zero

    @pytest.mark.parametrize("mode", ["literal", "symmetric"])
    @pytest.mark.parametrize("params", [
        (0.5, 0.3, 1.0, 2.0, 0.25, 0.75, 1.0),
        (0.2, 0.9, 0.5, 0.1, 2.0, 0.5, 0.3),
    ])
    def test_against_oracle(self, mode, params):
        g1, g2, u1, u2, c1, c2, c3 = params
        r1, r2 = compose_r_gains(contract(g1, u1), contract(g2, u2), rho(c1), rho(c2), rho(c3), mode)
        e1, e2 = oracles.r_coeffs(g1, g2, u1, u2, c1, c2, c3, mode)
        assert r1.linear_coefficient() == pytest.approx(e1, rel=1e-12)
        assert r2.linear_coefficient() == pytest.approx(e2, rel=1e-12)
        assert r1(2.0) == pytest.approx(2 * e1, rel=1e-9)


class TestOutputBounds:
    def test_symmetric_delta1(self):
        b = compute_output_bounds(contract(), contract(), rho(0.5), rho(0.5), cc.identity(S), 0.0)
        assert b.delta1.linear_coefficient() == pytest.approx(24.0)

    def test_zero_offsets(self):
        b = compute_output_bounds(contract(), contract(), rho(0.5), rho(0.5), cc.identity(S), 0.0)
        assert b.Delta1(0.0, 0.0) == 0.0 and b.Delta2(0.0, 0.0) == 0.0

    def test_d3_only(self):
        b = compute_output_bounds(contract(), contract(), rho(0.5), rho(0.5), cc.identity(S), 0.5)
        assert b.Delta1(0.0, 0.0) == pytest.approx(3.0)

    @pytest.mark.parametrize("mode", ["literal", "symmetric"])
    def test_against_oracle(self, mode):
        g1, g2, M1, M2, c1, c2, c3 = 0.4, 0.7, 2.0, 0.5, 0.3, 1.5, 0.8
        d1, d2, d3, v1, v2 = 0.2, 0.1, 0.3, 1.5, 0.25
        b = compute_output_bounds(contract(g1, M=M1, d=d1), contract(g2, M=M2, d=d2),
                                  rho(c1), rho(c2), rho(c3), d3, mode)
        e1, e2 = oracles.delta_coeffs(g1, g2, M1, M2, c1, c2, c3, mode)
        assert b.delta1.linear_coefficient() == pytest.approx(e1, rel=1e-12)
        assert b.delta2.linear_coefficient() == pytest.approx(e2, rel=1e-12)
        D1, D2 = oracles.Delta_values(g1, g2, c1, c2, c3, d1, d2, d3, v1, v2, mode)
        assert b.Delta1(v1, v2) == pytest.approx(D1, rel=1e-12)
        assert b.Delta2(v1, v2) == pytest.approx(D2, rel=1e-12)

    def test_modes_differ_when_asymmetric(self):
        args = (contract(0.4, M=2.0), contract(0.7, M=0.5), rho(0.3), rho(1.5), rho(0.8), 0.0)
        lit = compute_output_bounds(*args, mode="literal")
        sym = compute_output_bounds(*args, mode="symmetric")
        assert lit.delta2(1.0) != pytest.approx(sym.delta2(1.0))
        assert lit.delta1(1.0) == pytest.approx(sym.delta1(1.0))


class TestStateBound:
    def test_delta3(self):
        c = contract(M=1.0)
        b = compute_output_bounds(c, c, rho(0.5), rho(0.5), cc.identity(S), 0.0)
        # force delta1 = delta2 = 0 through zero transients
        zero = type(b)(cc.zero(S), cc.zero(S), b.Delta1, b.Delta2)
        sb = compute_state_bound(c, c, zero)
        assert sb.delta3(1.0) == pytest.approx(4.0)
        assert sb.delta3.linear_coefficient() == pytest.approx(4.0)

    def test_zero_everything(self):
        c = contract(gu_zero=True)
        b = compute_output_bounds(c, c, rho(0.5), rho(0.5), cc.identity(S), 0.0)
        sb = compute_state_bound(c, c, b)
        assert sb.s_inf(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_D0_offset(self):
        c = contract(D0=1.0)
        b = compute_output_bounds(c, c, rho(0.5), rho(0.5), cc.identity(S), 0.0)
        sb = compute_state_bound(c, c, b)
        assert sb.Delta3(0.0, 0.0, 0.0) == pytest.approx(2.0)


class TestTildeD:
    def test_zero(self):
        assert compute_tilde_d(contract(), contract(), rho(1), rho(1), rho(1), 0.0) == (0.0, 0.0)

    def test_identity_multipliers(self):
        # three factors of 2 in front: 8 * (1 + 0) and 8 * (1 + 0.5 * 8 * 1)
        c1, c2 = contract(d=1.0), contract(d=0.0)
        dt1, _ = compute_tilde_d(c1, c2, cc.identity(S), cc.identity(S), cc.identity(S), 0.0)
        assert dt1 == pytest.approx(oracles.tilde_d(0.5, 0.5, 1, 1, 1, 1, 0, 0)[0])
        assert dt1 == pytest.approx(8.0)
        dt1, _ = compute_tilde_d(contract(d=1.0), contract(d=1.0), cc.identity(S), cc.identity(S),
                                 cc.identity(S), 0.0)
        assert dt1 == pytest.approx(40.0)

    def test_against_oracle(self):
        got = compute_tilde_d(contract(0.3, d=0.2), contract(0.6, d=0.7), rho(0.4), rho(2.0),
                              rho(0.5), 0.1)
        want = oracles.tilde_d(0.3, 0.6, 0.4, 2.0, 0.5, 0.2, 0.7, 0.1)
        assert got == pytest.approx(want, rel=1e-12)


class TestAlpha:
    def _setup(self):
        c = contract()
        r1, r2 = compose_r_gains(c, c, rho(0.5), rho(0.5), cc.identity(S))
        b = compute_output_bounds(c, c, rho(0.5), rho(0.5), cc.identity(S), 0.0)
        return c, r1, r2, b

    def test_linear_instance(self):
        c, r1, r2, b = self._setup()
        ch = choose_alpha(cc.identity(S), b.delta1, c.alpha0, c.alpha0, r1, r2)
        want = oracles.alpha_coeff(1.0, 24.0, 1.0, 1.0, 84.0, 84.0)
        assert ch.alpha.linear_coefficient() == pytest.approx(want, rel=1e-12)
        assert ch.alpha(1.0) == pytest.approx(want, rel=1e-9)
        assert ch.passed and ch.min_slack >= -1e-9

    def test_scaling_r31(self):
        c, r1, r2, b = self._setup()
        a1 = choose_alpha(cc.identity(S), b.delta1, c.alpha0, c.alpha0, r1, r2).alpha
        a10 = choose_alpha(cc.linear(10.0, S), b.delta1, c.alpha0, c.alpha0, r1, r2).alpha
        s = np.geomspace(1e-3, 1e3, 50)
        assert np.all(a10(s) > a1(s))

    def test_degenerate(self):
        _, _, _, b = self._setup()
        z = cc.zero(S)
        ch = choose_alpha(cc.identity(S), b.delta1, z, z, z, z)
        ref = cc.inverse(cc.identity(S) + b.delta1) @ cc.identity(S)
        for s in (0.0, 0.5, 7.0):
            assert ch.alpha(s) == pytest.approx(ref(s), rel=1e-12)
        assert ch.passed


class TestEnvelope:
    def test_fixed_point_three(self):
        t = np.linspace(0, 10, 64)
        env = numeric_kl_envelope(lambda s, t: np.zeros(np.broadcast(s, t).shape), 2 / 3, 1.0,
                                  1.0, t)
        assert env.converged
        np.testing.assert_allclose(env.values, 3.0, atol=1e-6)
        assert env.asymptote[0] == pytest.approx(3.0)

    def test_zero_contraction(self):
        t = np.linspace(0, 5, 101)
        env = numeric_kl_envelope(lambda s, t: s * np.exp(-t), 0.0, 0.0, 1.0, t)
        np.testing.assert_allclose(env.values[0], np.exp(-t), rtol=1e-12)

    def test_zero_level(self):
        t = np.linspace(0, 5, 11)
        env = numeric_kl_envelope(lambda s, t: s * np.exp(-t), 0.5, 0.0, 0.0, t)
        assert np.all(env.values == 0.0)

    def test_recursion_residual(self):
        t = np.concatenate([[0.0], np.geomspace(1e-3, 40, 200)])
        k, C = 0.8, 0.3
        B = lambda s, t: s * np.exp(-0.5 * t)
        env = numeric_kl_envelope(B, k, C, np.array([0.5, 2.0]), t)
        back = back_index(t)
        rhs = B(np.array([[0.5], [2.0]]), t[None, :]) + k * env.values[:, back] + C
        assert np.max(np.abs(env.values - np.minimum(env.values, rhs))) <= 1e-8
        assert np.all(np.diff(env.values, axis=1) <= 1e-12)
        assert np.all(env.beta_hat >= 0)

    def test_bounds_a_simulated_recursion(self):
        # z(t) = B(t) + k sup_{tau >= t/4} z(tau): the envelope must dominate any solution
        t = np.concatenate([[0.0], np.geomspace(1e-3, 40, 200)])
        k = 0.5
        B = lambda s, t: s * np.exp(-t)
        env = numeric_kl_envelope(B, k, 0.0, 1.0, t)
        z = np.asarray(B(1.0, t))
        for _ in range(200):
            tail_sup = np.maximum.accumulate(z[::-1])[::-1]
            idx = np.searchsorted(t, t / 4, side="left")
            z = B(1.0, t) + k * tail_sup[idx]
        assert np.all(env.values[0] >= z - 1e-9)

    def test_nonlinear_contraction(self):
        c = cc.inverse(cc.identity(1e6) + cc.power(2, 1e6))
        t = np.linspace(0, 4, 41)
        env = numeric_kl_envelope(lambda s, t: np.zeros(np.broadcast(s, t).shape), c, 2.0, 1.0, t)
        # fixed point of x = c(x) + 2: x - c(x) = 2 where c(x) solves y + y^2 = x
        x = env.values[0, 0]
        y = c(x)
        assert x == pytest.approx(y + 2.0, abs=1e-8)
        assert y + y * y == pytest.approx(x, rel=1e-8)

    def test_bad_contraction(self):
        with pytest.raises(CertificateError):
            numeric_kl_envelope(lambda s, t: 0 * s * t, 1.0, 1.0, 1.0, np.linspace(0, 1, 5))

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            numeric_kl_envelope(lambda s, t: 0 * s * t, 0.5, 1.0, 1.0, np.array([0.5, 1.0]))

    def test_increment_modulus(self):
        c = cc.inverse(cc.identity(1e6) + cc.power(2, 1e6))
        L = IncrementModulus(c, 10.0)
        w = np.linspace(0, 10, 30)
        # c is concave here, so the worst increment starts at 0 and equals c(w)
        assert np.all(L(w) >= c(w) - 1e-12)
        assert np.all(L(w) <= w + 1e-12)


def _witness(c1, c2, s_l=0.0, grid=(0.25, 0.5, 1.0)):
    return certify(SmallGainProblem(c1.gamma_y, c2.gamma_y, s_l, S), grid)


class TestAssemble:
    @pytest.mark.parametrize("mode", ["literal", "symmetric"])
    def test_ios_degeneration(self, mode):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), mode=mode, s_points=[1.0])
        assert cert.d3 == 0.0
        assert (cert.dtilde1, cert.dtilde2) == (0.0, 0.0)
        assert (cert.d1p, cert.d2p) == (0.0, 0.0)
        assert cert.ios and cert.offset_total == 0.0

    def test_r32_identity(self):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), r31=cc.identity(S), s_points=[1.0])
        assert cert.r32.linear_coefficient() == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("mode", ["literal", "symmetric"])
    def test_linear_coefficients(self, mode):
        c1, c2 = contract(0.4, u=2.0, M=1.5), contract(0.3, u=0.5, M=2.0, a0=2.0)
        w = _witness(c1, c2)
        cert = assemble_certificate(c1, c2, w, mode=mode, s_points=[1.0])
        k1, k2 = w.c1, w.c2
        r1, r2 = oracles.r_coeffs(0.4, 0.3, 2.0, 0.5, k1, k2, 1.0, mode)
        d1, d2 = oracles.delta_coeffs(0.4, 0.3, 1.5, 2.0, k1, k2, 1.0, mode)
        alpha = oracles.alpha_coeff(0.1, d1, 1.0, 2.0, r1, r2)
        fns = cert.functions()
        expected = {"r1": r1, "r2": r2, "delta1": d1, "delta2": d2, "alpha": alpha,
                    "r32": d2 / d1 * 0.1, "delta3": 3.0 * (2 + 2 * d1 + 2 * d2),
                    "gain_y1": r1 + 0.1, "gain_y2": r2 + d2 / d1 * 0.1,
                    "gain_total": r1 + r2 + 0.1 + d2 / d1 * 0.1}
        for name, want in expected.items():
            assert fns[name].linear_coefficient() == pytest.approx(want, rel=1e-12), name

    def test_classes(self):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), s_points=[1.0])
        for name, fn in cert.functions().items():
            rep = cc.classify(fn)
            assert rep.satisfies(FnClass.K), name
        for beta in (cert.beta1p, cert.beta2p, cert.beta_total):
            inv = beta.check_invariants()
            assert inv["zero_at_zero"] and inv["increasing_in_s"] and inv["nonincreasing_in_t"]

    def test_total_gain_is_sum(self):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), s_points=[1.0])
        s = cc.mixed_grid(1e3, 200)
        np.testing.assert_allclose(cert.gain_total(s),
                                   cert.r1(s) + cert.r2(s) + cert.r31(s) + cert.r32(s), rtol=1e-12)

    def test_monotone_in_input_gain(self):
        small, big = contract(u=1.0), contract(u=1.5)
        w = _witness(small, small)
        a = assemble_certificate(small, small, w, s_points=[1.0])
        b = assemble_certificate(big, small, w, s_points=[1.0])
        s = cc.mixed_grid(1e3, 100)
        assert np.all(b.gain_total(s) >= a.gain_total(s))

    def test_saturating_offsets(self):
        c1 = contract(0.5)
        c2 = SubsystemContract(beta=cc.exp_decay(1, 1, S), gamma_y=cc.saturation(2.0, S),
                               gamma_u=cc.linear(1.0, S), alpha0=cc.identity(S))
        w = _witness(c1, c2, s_l=3.0, grid=(1.0,))
        cert = assemble_certificate(c1, c2, w, s_points=[1.0])
        assert cert.d3 == pytest.approx(0.5)
        assert cert.dtilde1 > 0 and cert.d1p >= cert.dtilde1
        assert not cert.ios
        assert cert.alpha.passed

    def test_infeasible_witness_refused(self):
        c = contract()
        w = _witness(c, c)
        bad = type(w)(w.rho1, w.rho2, w.c1, w.c2, -1.0, -1.0, 0.0, False, w.report)
        with pytest.raises(CertificateError):
            assemble_certificate(c, c, bad)

    def test_scenario_points_are_knots(self):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), s_points=[0.7, 3.0])
        assert 0.7 in cert.beta1p.s_grid and 3.0 in cert.beta1p.s_grid

    def test_serialization(self):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), s_points=[1.0])
        d = json.loads(cert.to_json())
        assert d["ios"] is True and d["mode"] == "symmetric"
        assert d["functions"]["r1"]["linear_coefficient"] == pytest.approx(cert.r1.linear_coefficient())
        csv = cert.beta_csv(1).splitlines()
        assert csv[0] == "s,t,value"
        assert len(csv) - 1 == cert.beta1p.s_grid.size * cert.beta1p.t_grid.size

    def test_sigma1_diagnostic(self):
        c = contract()
        cert = assemble_certificate(c, c, _witness(c, c), s_points=[1.0])
        v = cert.sigma1(1.0, 0.0, 0.0)
        assert 0 <= v <= cert.bounds.delta1(1.0)
        assert cert.sigma1(0.0, 0.0, 3.0) == 0.0


class TestStep1:
    def test_against_oracle(self):
        c1, c2 = contract(0.4, u=2.0, M=1.5, d=0.1), contract(0.3, u=0.5, M=2.0, d=0.2)
        got = step1_bounds(c1, c2, rho(0.5), rho(0.25), 0.3, 1.0, 2.0, 2.0 * 1.0, 0.5 * 0.5)
        want = oracles.step1_y_bounds(1.5, 2.0, 0.4, 0.3, 2.0, 0.5, 0.5, 0.25, 0.1, 0.2, 0.3,
                                      1.0, 2.0, 1.0, 0.5)
        assert got == pytest.approx(want, rel=1e-12)
