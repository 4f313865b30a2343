import numpy as np
import pytest

import diskflow as df
from diskflow import genfam
from diskflow.maps import ConfigurationError

P = 1


class TestField:
    def test_origin_is_singular(self, system):
        z = np.zeros((system.mq, 2))
        assert np.linalg.norm(system.xi(z)) == 0.0

    def test_sigma_points_are_singular(self, system):
        for th in np.linspace(0, 2 * np.pi, 64, endpoint=False):
            z = system.sigma_point(P, th)
            assert np.linalg.norm(system.xi(z)) < 1e-9

    def test_field_is_action_gradient(self, system, rng):
        # central differences of the action match xi componentwise
        Z = system.random_states(20, rng=rng)
        eps = 1e-6
        xi = system.xi(Z)
        for (j, c) in [(0, 0), (5, 1), (17, 0), (35, 1), (11, 1)]:
            dz = np.zeros_like(Z)
            dz[:, j, c] = eps
            fd = (system.action(Z + dz) - system.action(Z - dz)) / (2 * eps)
            assert np.max(np.abs(fd - xi[:, j, c])) < 1e-5

    def test_lipschitz_probe_below_A(self, system, rng):
        probe = system.lipschitz_probe(20000, rng=rng)
        assert probe <= system.A

    def test_A_formula(self, system):
        assert system.A == pytest.approx(np.sqrt(6 * system.K ** 2 + 3))

    def test_energy_inequality_finite_horizon(self, system, rng):
        # ||xi(z)||^2 <= A / (1 - e^{-2AT}) (action(z^T) - action(z^{-T}))
        z = system.random_states(4, rng=rng)
        T = 1.0
        fwd = df.integrate(system, z, T)
        bwd = df.integrate(system, z, -T)
        gap = fwd.actions[:, -1] - bwd.actions[:, -1]
        lhs = system.xi_norm(z) ** 2
        factor = system.A / (1 - np.exp(-2 * system.A * T))
        assert np.all(lhs <= factor * gap * (1 + 1e-9))


class TestShift:
    def test_q_periodic(self, system, rng):
        z = system.random_states(5, rng=rng)
        out = z
        for _ in range(system.q):
            out = system.shift(out)
        assert np.array_equal(out, z)

    def test_equivariance(self, system, rng):
        Z = system.random_states(50, rng=rng)
        lhs = system.xi(system.shift(Z))
        rhs = system.shift(system.xi(Z))
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_action_invariance(self, system, rng):
        Z = system.random_states(50, rng=rng)
        assert np.max(np.abs(system.action(system.shift(Z))
                             - system.action(Z))) < 1e-10


class TestProjections:
    def test_intertwining(self, system, rng):
        # f_i o Q_i = Q'_{i+1}
        Z = system.random_states(30, rng=rng)
        for i in (1, 7, 12, 36):
            fac = system.dec.factors[(i - 1) % system.m]
            lhs = fac.forward(system.q_point(Z, i))
            rhs = system.qprime_point(Z, i + 1)
            assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_xi_is_rotated_projection_gap(self, system, rng):
        # xi_i = J (Q'_i - Q_i) with J(x, y) = (-y, x)
        Z = system.random_states(30, rng=rng)
        xi = system.xi(Z)
        for i in (1, 9, 23):
            gap = system.qprime_point(Z, i) - system.q_point(Z, i)
            J = np.stack([-gap[..., 1], gap[..., 0]], axis=-1)
            assert np.max(np.abs(J - xi[:, i - 1])) < 1e-12

    def test_projections_agree_on_singular_states(self, system):
        z = system.sigma_point(P, 1.234)
        for i in (1, 5, 18, 30):
            assert np.allclose(system.q_point(z, i),
                               system.qprime_point(z, i), atol=1e-12)

    def test_sigma_image_on_invariant_circle(self, system):
        z = system.sigma_point(P, 0.7)
        q1 = system.q_point(z, 1)
        assert np.hypot(*q1) == pytest.approx(system.circle_radius(P),
                                              abs=1e-12)


class TestSigma:
    def test_shift_rotates_sigma(self, system):
        z = system.sigma_point(P, 0.25)
        expect = system.sigma_point(P, 0.25 + 2 * np.pi * P / system.q)
        assert np.max(np.abs(system.shift(z) - expect)) < 1e-12

    def test_rejects_inadmissible_p(self, system):
        with pytest.raises(ConfigurationError):
            system.sigma_point(2, 0.0)

    def test_linking_between_sigma_angles(self, system):
        from diskflow import linking
        za = system.sigma_point(P, 0.3)
        zb = system.sigma_point(P, 2.1)
        assert linking.linking_L(zb - za) == P


class TestActionGap:
    def test_closed_form_value(self, system):
        # pi (p - q a)(1 + d + d^2/3), d = p/q - a
        d = 1 / 3 - 0.3
        expect = np.pi * 0.1 * (1 + d + d * d / 3)
        assert system.action_gap(P) == pytest.approx(expect, rel=1e-15)
        assert expect == pytest.approx(0.324747596154, abs=1e-12)

    def test_action_at_sigma_matches_gap(self, system):
        act = system.action(system.sigma_point(P, 0.37))
        assert act == pytest.approx(system.action_gap(P), rel=1e-10)

    def test_path_integral_oracle(self, system):
        quad = system.action_gap_quadrature(P)
        assert quad == pytest.approx(system.action_gap(P), rel=1e-8)


class TestConstruction:
    def test_rejects_inadmissible_q(self, decomposition):
        # (2 * 0.3, 2 * 0.35) = (0.6, 0.7) contains no integer
        with pytest.raises(ConfigurationError):
            df.GeneratingSystem(decomposition, 2)

    def test_csv_roundtrip(self, system, rng):
        Z = system.random_states(3, rng=rng)
        back = genfam.state_from_csv(genfam.state_to_csv(Z))
        assert np.array_equal(back, Z)
