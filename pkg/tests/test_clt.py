"""
Contour formulas for the CLT parameters.

Oracles:
* theta = 0: the semicircle closed forms for the mean function and the
  covariance kernel, and the Chebyshev-series mean/variance.
* theta > 0, low degree: direct expansion of Tr (W + theta D)^k.  With
  v deterministic, Tr H = sum W_ii + theta sum v and
  Tr H^2 = Tr W^2 + 2 theta sum W_ii v_i + theta^2 sum v^2, so
  V(x) = w2, M(x^2) = w2 - 1 and V(x^2) = 2 (W4 - 1) + 4 theta^2 w2 E v^2.
  With v i.i.d., the linearized free-cumulant expansion gives
  Vtilde(x) = Var v, Vtilde(x^2) = theta^2 Var v^2 and
  Vtilde(x^3) = Var(theta^2 v^3 + 3 v).
"""

import numpy as np
import pytest

from oracles import m_sc_quadratic, mixed_diff
from wignerlab.clt import (
    M_phi,
    Polynomial,
    SmoothBump,
    V_phi,
    Vtilde_phi,
    baiyao_closed_forms,
    build_contour,
    clt_parameters,
    contour_mass,
    cov_kernel_gamma,
    default_contour,
    mean_density_b,
    parse_phi,
    tau_ell,
    vtilde_kernel,
)
from wignerlab.errors import DomainError, KernelOutOfRange, ValidationError
from wignerlab.freeconv import SupportInterval, solve_mfc
from wignerlab.measures import Discrete, TwoPoint, Uniform

ASYM = Discrete((-1.0, 0.5), (1 / 3, 2 / 3))
PAIRS = [(1.0, 3.0), (1.0, 1.0), (2.0, 1.0), (2.0, 3.0)]


def mono(k):
    return Polynomial((0.0,) * k + (1.0,))


def sc_derivative(z):
    m = m_sc_quadratic(z)
    return m, m * m / (1 - m * m)


class TestTestFunctions:
    def test_polynomial(self):
        p = Polynomial((1.0, -2.0, 3.0))
        assert p(2.0) == 9.0
        assert p.label() == "poly:1,-2,3"
        assert Polynomial((4.0, 0.0)).is_constant
        with pytest.raises(ValidationError):
            Polynomial((1.0,) * 18)

    def test_bump_is_c2(self):
        b = SmoothBump(0.5, 1.0, 2.0)
        assert b(0.5) == 2.0
        assert b(1.5) == 0.0 and b(-0.5) == 0.0
        h = 1e-4
        for edge in (-0.5, 1.5):
            # value, slope and curvature all vanish at the edges
            assert abs(b(edge + h) - b(edge - h)) < 1e-9
            assert abs(b(edge + h) - 2 * b(edge) + b(edge - h)) / h**2 < 50 * h
        with pytest.raises(DomainError):
            b(np.array([1j]))

    def test_parse(self):
        assert parse_phi("poly:0,0,1") == Polynomial((0.0, 0.0, 1.0))
        assert parse_phi("bump:0,1,1") == SmoothBump(0.0, 1.0, 1.0)
        for bad in ("poly", "poly:", "bump:0,1", "sin:1", "poly:1,x"):
            with pytest.raises(ValidationError):
                parse_phi(bad)


class TestContour:
    def test_shape_and_orientation(self):
        c = build_contour(SupportInterval(-2.0, 2.0, -1.0, 1.0), margin=0.5, v0=0.5, nodes_per_side=64)
        assert c.z.shape == (256,) and c.w.shape == (256,)
        assert abs(np.sum(c.w)) < 1e-14
        # counterclockwise: oint dz / z = 2 pi i
        assert np.sum(c.w / c.z) == pytest.approx(2j * np.pi, abs=1e-8)
        assert c.z.real.min() >= -2.5 and c.z.real.max() <= 2.5
        assert np.all(np.abs(c.z.imag) <= 0.5)

    def test_mass_is_one(self):
        for measure, theta in ((TwoPoint(0.5), 1.0), (Uniform(0.5), 0.3), (ASYM, 0.5)):
            assert contour_mass(default_contour(measure, theta), measure, theta) == pytest.approx(1.0, abs=1e-10)

    def test_rejects_bad_geometry(self):
        e = SupportInterval(-2.0, 2.0, -1.0, 1.0)
        for kw in ({"margin": 0.0}, {"v0": -1.0}, {"nodes_per_side": 1}):
            with pytest.raises(DomainError):
                build_contour(e, **kw)

    def test_independent_of_contour(self):
        phi = Polynomial((0.3, -1.0, 0.5, 0.2))
        ref = None
        for margin, v0 in ((0.5, 0.5), (0.3, 1.0), (1.0, 0.3)):
            c = default_contour(ASYM, 0.5, margin=margin, v0=v0, nodes_per_side=128)
            vals = np.array([M_phi(phi, c, ASYM, 0.5, 2.0, 3.0), V_phi(phi, c, ASYM, 0.5, 2.0, 3.0), Vtilde_phi(phi, c, ASYM, 0.5)])
            if ref is None:
                ref = vals
            np.testing.assert_allclose(vals, ref, rtol=1e-6, atol=1e-8)

    def test_node_convergence(self):
        phi = mono(4)
        for measure, theta in ((TwoPoint(0.5), 1.0), (Uniform(0.5), 0.3)):
            a = clt_parameters(phi, measure, theta, 2.0, 3.0, nodes_per_side=64)
            b = clt_parameters(phi, measure, theta, 2.0, 3.0, nodes_per_side=128)
            for x, y in zip((a.M_phi, a.V_phi, a.Vtilde_phi), (b.M_phi, b.V_phi, b.Vtilde_phi)):
                assert x == pytest.approx(y, rel=1e-6, abs=1e-9)

    def test_kernel_guard(self):
        # I(z, conj z) = Im m / (Im z + Im m) rounds to 1 when the contour
        # passes through the bulk at height 1e-17
        measure, theta = TwoPoint(0.5), 1.0
        c = default_contour(measure, theta, margin=0.5, v0=1e-17, nodes_per_side=16)
        with pytest.raises(KernelOutOfRange):
            V_phi(mono(2), c, measure, theta, 2.0, 3.0)


class TestKernels:
    @pytest.mark.parametrize("z", [1j, 0.5 + 0.5j, -2.5 + 0.3j])
    @pytest.mark.parametrize("w2,W4", PAIRS)
    def test_mean_function_semicircle(self, z, w2, W4):
        m, m1 = sc_derivative(z)
        expected = m**3 / (1 - m * m) * ((w2 - 1) + m1 + (W4 - 3) * m * m)
        assert mean_density_b(TwoPoint(0.5), 0.0, z, w2, W4) == pytest.approx(expected, abs=1e-12)

    def test_mean_function_linear_in_w2(self):
        z = 0.3 + 0.7j
        b = [mean_density_b(Uniform(0.5), 0.6, z, w2, 3.0) for w2 in (0.0, 1.0, 2.0)]
        assert b[2] - b[1] == pytest.approx(b[1] - b[0], abs=1e-13)

    @pytest.mark.parametrize("w2,W4", PAIRS)
    def test_gamma_semicircle(self, w2, W4):
        for z1, z2 in ((1j, 0.5 + 2j), (0.2 + 0.4j, -1 - 0.6j)):
            ma, da = sc_derivative(z1) if z1.imag > 0 else map(np.conj, sc_derivative(z1.conjugate()))
            mb, db = sc_derivative(z2) if z2.imag > 0 else map(np.conj, sc_derivative(z2.conjugate()))
            expected = da * db * ((w2 - 2) + 2 * (W4 - 3) * ma * mb + 2 / (1 - ma * mb) ** 2)
            got = cov_kernel_gamma(TwoPoint(0.5), 0.0, z1, z2, w2, W4)
            assert got == pytest.approx(expected, rel=1e-10)

    def test_gamma_symmetry_and_reality(self):
        z1, z2 = 0.3 + 0.6j, -1.0 + 0.4j
        g = cov_kernel_gamma(ASYM, 0.7, z1, z2, 2.0, 3.0)
        assert cov_kernel_gamma(ASYM, 0.7, z2, z1, 2.0, 3.0) == pytest.approx(g, rel=1e-12)
        assert cov_kernel_gamma(ASYM, 0.7, z1.conjugate(), z2.conjugate(), 2.0, 3.0) == pytest.approx(np.conj(g), rel=1e-12)

    @pytest.mark.parametrize("measure", [TwoPoint(0.5), ASYM])
    def test_vtilde_is_mixed_derivative(self, measure):
        # d1 d2 Cov_nu(log(theta v - z1 - m1), log(theta v - z2 - m2)) / theta^2
        theta = 0.8
        x, p = measure.atoms()

        def K(a, b):
            la = np.log(theta * x - a - solve_mfc(measure, theta, a).m)
            lb = np.log(theta * x - b - solve_mfc(measure, theta, b).m)
            return (np.sum(p * la * lb) - np.sum(p * la) * np.sum(p * lb)) / theta**2

        z1, z2 = 0.4 + 0.7j, -0.9 + 1.1j
        got = vtilde_kernel(measure, theta, z1, z2)
        assert got == pytest.approx(mixed_diff(K, z1, z2), rel=1e-5)

    def test_vtilde_small_theta_limit(self):
        a, z1, z2 = 0.5, 0.4 + 0.7j, -0.9 + 1.1j
        limit = a * a * sc_derivative(z1)[1] * sc_derivative(z2)[1]
        errs = [abs(vtilde_kernel(TwoPoint(a), t, z1, z2) - limit) for t in (1e-2, 5e-3)]
        assert errs[0] < 0.05 * abs(limit)
        assert errs[1] < 0.6 * errs[0]

    def test_vtilde_degenerate_measure(self):
        assert abs(vtilde_kernel(Discrete((0.0,), (1.0,)), 0.7, 0.2 + 1j, 1j)) < 1e-15
        with pytest.raises(DomainError):
            vtilde_kernel(TwoPoint(0.5), 0.0, 1j, 2j)


class TestParametersThetaZero:
    def test_tau(self):
        assert tau_ell(mono(1), 1) == pytest.approx(1.0, abs=1e-14)
        assert tau_ell(mono(2), 0) == pytest.approx(2.0, abs=1e-14)
        assert tau_ell(mono(2), 2) == pytest.approx(1.0, abs=1e-14)
        assert tau_ell(mono(3), 3) == pytest.approx(1.0, abs=1e-14)
        assert tau_ell(mono(2), 1) == pytest.approx(0.0, abs=1e-14)

    def test_closed_form_values(self):
        assert baiyao_closed_forms(mono(2), 2.0, 3.0) == pytest.approx((1.0, 4.0), abs=1e-12)
        for w2 in (1.0, 2.0, 0.5):
            assert baiyao_closed_forms(mono(1), w2, 3.0) == pytest.approx((0.0, w2), abs=1e-12)
        assert baiyao_closed_forms(Polynomial((3.0,)), 2.0, 3.0) == pytest.approx((0.0, 0.0), abs=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    @pytest.mark.parametrize("w2,W4", PAIRS)
    def test_contour_matches_closed_forms(self, k, w2, W4):
        phi = mono(k)
        c = default_contour(TwoPoint(0.5), 0.0)
        M, V = baiyao_closed_forms(phi, w2, W4)
        assert M_phi(phi, c, TwoPoint(0.5), 0.0, w2, W4) == pytest.approx(M, abs=1e-8)
        assert V_phi(phi, c, TwoPoint(0.5), 0.0, w2, W4) == pytest.approx(V, abs=1e-8)

    def test_constant_is_zero(self):
        p = clt_parameters(Polynomial((2.0,)), Uniform(0.5), 0.4, 2.0, 3.0)
        assert p.M_phi == 0.0
        assert p.V_phi == pytest.approx(0.0, abs=1e-12)
        assert p.Vtilde_phi == pytest.approx(0.0, abs=1e-12)

    def test_vtilde_theta_zero(self):
        c = default_contour(Uniform(0.5), 0.0)
        assert Vtilde_phi(mono(1), c, Uniform(0.5), 0.0) == pytest.approx(0.25 / 3, rel=1e-12)


CASES = [(TwoPoint(0.5), 1.0), (TwoPoint(0.5), 0.5), (Uniform(0.5), 0.3), (Uniform(0.8), 0.9), (ASYM, 0.5)]


class TestParametersDeformed:
    @pytest.mark.parametrize("measure,theta", CASES)
    @pytest.mark.parametrize("w2,W4", PAIRS)
    def test_low_degree_expansion(self, measure, theta, w2, W4):
        ev2 = measure.moment(2)
        p1 = clt_parameters(mono(1), measure, theta, w2, W4)
        p2 = clt_parameters(mono(2), measure, theta, w2, W4)
        assert p1.M_phi == pytest.approx(0.0, abs=1e-8)
        assert p1.V_phi == pytest.approx(w2, abs=1e-8)
        assert p2.M_phi == pytest.approx(w2 - 1, abs=1e-8)
        assert p2.V_phi == pytest.approx(2 * (W4 - 1) + 4 * theta**2 * w2 * ev2, abs=1e-8)

    @pytest.mark.parametrize("measure,theta", CASES)
    def test_random_diagonal_variance(self, measure, theta):
        x, p = measure.atoms()

        def var(values):
            return np.sum(p * values**2) - np.sum(p * values) ** 2

        got = [clt_parameters(mono(k), measure, theta, 2.0, 3.0).Vtilde_phi for k in (1, 2, 3)]
        assert got[0] == pytest.approx(var(x), abs=1e-9)
        assert got[1] == pytest.approx(theta**2 * var(x**2), abs=1e-9)
        assert got[2] == pytest.approx(var(theta**2 * x**3 + 3 * x), abs=1e-8)

    def test_two_point_reference(self):
        p = clt_parameters(mono(3), TwoPoint(0.5), 1.0, 2.0, 3.0)
        assert p.M_phi == pytest.approx(0.0, abs=1e-10)
        assert p.Vtilde_phi == pytest.approx(0.25 * 3.25**2, abs=1e-8)

    @pytest.mark.parametrize("measure,theta", CASES)
    def test_variances_nonnegative(self, measure, theta):
        for coeffs in ((0, 1, -1), (1, 0.5, 0, -0.3), (0, 0, 0, 0, 1)):
            p = clt_parameters(Polynomial(coeffs), measure, theta, 2.0, 1.0)
            assert p.V_phi > 0
            assert p.Vtilde_phi > -1e-10

    def test_non_analytic_rejected(self):
        with pytest.raises(ValidationError):
            clt_parameters(SmoothBump(0.0, 1.0, 1.0), TwoPoint(0.5), 1.0, 2.0, 3.0)

    def test_quad_error_reported(self):
        p = clt_parameters(mono(2), TwoPoint(0.5), 1.0, 2.0, 3.0, nodes_per_side=64)
        assert 0 <= p.quad_error < 1e-3
