import math

import numpy as np
import pytest
import scipy.special as sp

from odeblocks.elliptic import complete_elliptic_k, jacobi_sn_cn_dn
from odeblocks.pendulum import (
    PendulumConfig,
    pendulum_energy,
    pendulum_exact,
    pendulum_period,
    true_rhs,
)


def series_elliptic_k(m: float) -> float:
    """Power-series oracle: K(m) = (pi/2) * sum ((2n)! / (2^2n n!^2))^2 m^n."""
    total, term, n = 0.0, 1.0, 0
    while term > 1e-17 * max(total, 1.0):
        total += term
        n += 1
        coeff = (2 * n - 1) / (2 * n)
        term *= coeff * coeff * m
        if n > 10000:
            break
    return 0.5 * math.pi * total


class TestCompleteEllipticK:
    def test_k_zero_is_half_pi(self):
        assert abs(complete_elliptic_k(0.0) - math.pi / 2) <= 1e-14

    def test_k_half_against_series_oracle(self):
        # frozen value computed from the series oracle
        assert abs(series_elliptic_k(0.5) - 1.85407467730137) < 1e-11
        assert abs(complete_elliptic_k(0.5) - 1.85407467730137) <= 1e-10
        assert abs(complete_elliptic_k(0.5) - series_elliptic_k(0.5)) <= 1e-10

    def test_agm_matches_series_on_grid(self):
        for m in np.linspace(0.0, 0.6, 13):
            assert abs(complete_elliptic_k(m) - series_elliptic_k(m)) <= 1e-12

    def test_monotone_divergence_towards_one(self):
        assert complete_elliptic_k(0.99) > complete_elliptic_k(0.5) > complete_elliptic_k(0.0)

    def test_agm_converges_over_supported_range(self):
        # the iteration raises if the fixed point needs more than 30 steps
        for m in np.linspace(0.0, 1.0 - 1e-10, 200):
            complete_elliptic_k(float(m))

    def test_domain_validation(self):
        for bad in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                complete_elliptic_k(bad)

    def test_against_scipy(self):
        for m in np.linspace(0.0, 0.95, 20):
            assert abs(complete_elliptic_k(m) - sp.ellipk(m)) <= 1e-12


class TestJacobiFunctions:
    def test_degenerate_modulus_reduces_to_trig(self):
        for u in (-2.3, 0.0, 0.4, 7.9):
            sn, cn, dn = jacobi_sn_cn_dn(u, 0.0)
            assert abs(sn - math.sin(u)) <= 1e-12
            assert abs(cn - math.cos(u)) <= 1e-12
            assert dn == 1.0

    def test_quarter_period_identity(self):
        for m in (0.1, 0.5, 0.854, 0.95):
            sn, _, _ = jacobi_sn_cn_dn(complete_elliptic_k(m), m)
            assert abs(sn - 1.0) <= 1e-10

    def test_pythagorean_identities_on_grid(self):
        # 1000 (u, m) points across the supported range
        us = np.linspace(-8.0, 8.0, 40)
        ms = np.linspace(0.0, 0.95, 25)
        for u in us:
            for m in ms:
                sn, cn, dn = jacobi_sn_cn_dn(float(u), float(m))
                assert abs(sn * sn + cn * cn - 1.0) <= 1e-10
                assert abs(dn * dn + m * sn * sn - 1.0) <= 1e-10

    def test_specific_identity_point(self):
        sn, cn, dn = jacobi_sn_cn_dn(0.8, 0.5)
        assert abs(sn * sn + cn * cn - 1.0) <= 1e-10
        assert abs(dn * dn + 0.5 * sn * sn - 1.0) <= 1e-10

    def test_against_scipy(self):
        for u in np.linspace(-5.0, 5.0, 11):
            for m in (0.2, 0.5, 0.854):
                sn, cn, dn = jacobi_sn_cn_dn(float(u), m)
                ssn, scn, sdn, _ = sp.ellipj(u, m)
                assert abs(sn - ssn) <= 1e-9
                assert abs(cn - scn) <= 1e-9
                assert abs(dn - sdn) <= 1e-9

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            jacobi_sn_cn_dn(1.0, 1.0)


class TestPendulumExact:
    def setup_method(self):
        self.cfg = PendulumConfig()

    def test_initial_angle_recovered(self):
        rho, _ = pendulum_exact(0.0, self.cfg)
        assert abs(rho - self.cfg.rho0) <= 1e-12

    def test_initial_velocity_is_zero(self):
        _, v = pendulum_exact(0.0, self.cfg)
        assert abs(v) <= 1e-12

    def test_energy_conserved_along_trajectory(self):
        e0 = pendulum_energy(pendulum_exact(0.0, self.cfg), self.cfg)
        for t in np.linspace(0.0, 10.0, 101):
            e = pendulum_energy(pendulum_exact(float(t), self.cfg), self.cfg)
            assert abs(e - e0) <= 1e-9

    def test_satisfies_the_second_order_ode(self):
        # central second difference of rho against g sin(rho)
        h = 1e-4
        for t in np.linspace(0.1, 9.9, 23):
            rm, _ = pendulum_exact(t - h, self.cfg)
            r0, _ = pendulum_exact(t, self.cfg)
            rp, _ = pendulum_exact(t + h, self.cfg)
            acc = (rp - 2.0 * r0 + rm) / (h * h)
            assert abs(acc - self.cfg.gravity * math.sin(r0)) <= 1e-5

    def test_velocity_is_time_derivative_of_angle(self):
        h = 1e-6
        for t in (0.3, 1.7, 4.9):
            rm, _ = pendulum_exact(t - h, self.cfg)
            rp, _ = pendulum_exact(t + h, self.cfg)
            _, v = pendulum_exact(t, self.cfg)
            assert abs((rp - rm) / (2 * h) - v) <= 1e-7

    def test_periodicity_from_own_scaling(self):
        period = pendulum_period(self.cfg)
        for t in (0.0, 0.4, 2.2):
            r1, v1 = pendulum_exact(t, self.cfg)
            r2, v2 = pendulum_exact(t + period, self.cfg)
            assert abs(r1 - r2) <= 1e-8
            assert abs(v1 - v2) <= 1e-8

    def test_moving_start_rejected(self):
        cfg = PendulumConfig(v0=1.0)
        with pytest.raises(ValueError):
            pendulum_exact(0.5, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PendulumConfig(gravity=9.81)
        with pytest.raises(ValueError):
            PendulumConfig(rho0=math.pi)


class TestTrueRhs:
    def test_equilibrium(self):
        out = true_rhs([0.0, 0.0], PendulumConfig())
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_horizontal_release(self):
        out = true_rhs([math.pi / 2, 0.0], PendulumConfig())
        np.testing.assert_allclose(out, [0.0, -9.81], atol=1e-14)

    def test_first_component_is_velocity(self):
        rng = np.random.default_rng(0)
        cfg = PendulumConfig()
        for _ in range(20):
            rho, v = rng.normal(size=2)
            assert true_rhs([rho, v], cfg)[0] == v
