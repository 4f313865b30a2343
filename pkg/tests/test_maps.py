import numpy as np
import pytest

import diskflow as df
from diskflow import maps

TWO_PI = 2 * np.pi
ALPHA, BETA = 0.3, 0.35


def rot(P, ang):
    c, s = np.cos(ang), np.sin(ang)
    return np.stack([P[..., 0] * c - P[..., 1] * s,
                     P[..., 0] * s + P[..., 1] * c], axis=-1)


class TestExtension:
    def test_unit_circle_is_rotation_by_alpha(self, plane_map):
        th = np.linspace(0, TWO_PI, 50, endpoint=False)
        P = np.stack([np.cos(th), np.sin(th)], axis=-1)
        expect = rot(P, TWO_PI * ALPHA)
        assert np.allclose(plane_map.forward(P), expect, atol=1e-14)

    def test_gluing_continuity_outer(self, plane_map):
        r = 1 + BETA - ALPHA
        P = np.array([[r, 0.0], [0.0, r]])
        inner_branch = rot(P, TWO_PI * (ALPHA + r - 1))
        outer_branch = rot(P, TWO_PI * BETA)
        assert np.allclose(inner_branch, outer_branch, atol=1e-14)
        assert np.allclose(plane_map.forward(P), outer_branch, atol=1e-14)

    def test_invariant_circle_is_periodic(self, plane_map):
        # radius 1 + (1/3 - 0.3) carries rotation by 2 pi / 3
        r = plane_map.circle_radius(1, 3)
        P = np.array([r, 0.0])
        out = P
        for _ in range(3):
            out = plane_map.forward(out)
        assert np.linalg.norm(out - P) < 1e-12

    def test_fixes_origin(self, plane_map):
        assert np.allclose(plane_map.forward(np.zeros(2)), 0.0)

    def test_rejects_integer_interval(self):
        with pytest.raises(maps.ConfigurationError):
            df.extend_pseudo_rotation(None, 0.9, 1.1)

    def test_rejects_mismatched_inner(self):
        bad = (lambda P: rot(np.asarray(P), 0.5),
               lambda P: rot(np.asarray(P), -0.5))
        with pytest.raises(maps.GluingError):
            df.extend_pseudo_rotation(bad, ALPHA, BETA)

    def test_forward_inverse(self, plane_map, rng):
        P = rng.normal(size=(200, 2))
        assert np.allclose(plane_map.inverse(plane_map.forward(P)), P,
                           atol=1e-12)


class TestFactors:
    def test_identity_factor_generating(self):
        f = df.RotationFactor(0.0)
        g, gp, h = df.factor_generating(f, 0.7, -0.3)
        assert g == pytest.approx(0.7)
        assert gp == pytest.approx(-0.3)
        assert h == pytest.approx(0.7 * -0.3)

    def test_rotation_closed_forms(self, rng):
        # invert the 2x2 rotation algebraically: g = (X + y sin phi)/cos phi,
        # g' = (y + X sin phi)/cos phi, h = (X y + (X^2+y^2) sin(phi)/2)/cos phi
        phi = 0.41
        f = df.RotationFactor(phi)
        X = rng.normal(size=300)
        y = rng.normal(size=300)
        g, gp, h = f.g_gp_h(X, y)
        assert np.allclose(g, (X + y * np.sin(phi)) / np.cos(phi), atol=1e-12)
        assert np.allclose(gp, (y + X * np.sin(phi)) / np.cos(phi), atol=1e-12)
        assert np.allclose(
            h, (X * y + (X ** 2 + y ** 2) * np.sin(phi) / 2) / np.cos(phi),
            atol=1e-12)

    def test_untwisted_consistency(self, decomposition, rng):
        # f_i(g(X, y), y) = (X, g'(X, y)) within root-solve tolerance
        X = rng.uniform(-1.5, 1.5, 400)
        y = rng.uniform(-1.5, 1.5, 400)
        for f in decomposition.factors[:9]:
            g, gp, _ = f.g_gp_h(X, y)
            img = f.forward(np.stack([g, y], axis=-1))
            assert np.max(np.abs(img[:, 0] - X)) < 1e-12
            assert np.max(np.abs(img[:, 1] - gp)) < 1e-12

    def test_exactness_finite_differences(self, decomposition, rng):
        X = rng.uniform(-1.4, 1.4, 500)
        y = rng.uniform(-1.4, 1.4, 500)
        eps = 1e-6
        for f in decomposition.factors[:9]:
            g, gp, _ = f.g_gp_h(X, y)
            dh_dy = (f.h(X, y + eps) - f.h(X, y - eps)) / (2 * eps)
            dh_dX = (f.h(X + eps, y) - f.h(X - eps, y)) / (2 * eps)
            assert np.max(np.abs(dh_dy - g)) < 1e-5
            assert np.max(np.abs(dh_dX - gp)) < 1e-5

    def test_h_path_independence(self, decomposition):
        # integrate g dy + g' dX along two polygonal paths to (X0, y0);
        # adaptive quadrature handles the kinks at the gluing circles
        from scipy.integrate import quad
        f = decomposition.factors[0]
        X0, y0 = 0.9, -0.6

        def seg(a, b, fun):
            val, _ = quad(lambda s: float(fun(np.array([s]))[0]), a, b,
                          epsabs=1e-12, epsrel=1e-12, limit=200)
            return val

        # path 1: (0,0) -> (X0,0) -> (X0,y0)
        h1 = seg(0, X0, lambda s: f.gprime(s, np.zeros_like(s))) \
            + seg(0, y0, lambda s: f.g(np.full_like(s, X0), s))
        # path 2: (0,0) -> (0,y0) -> (X0,y0)
        h2 = seg(0, y0, lambda s: f.g(np.zeros_like(s), s)) \
            + seg(0, X0, lambda s: f.gprime(s, np.full_like(s, y0)))
        assert abs(h1 - h2) < 1e-9
        assert abs(h1 - f.h(np.array([X0]), np.array([y0]))[0]) < 1e-9

    def test_area_preservation(self, decomposition, rng):
        P = rng.uniform(-1.6, 1.6, size=(2000, 2))
        eps = 1e-6
        for f in decomposition.factors[:9]:
            ex = np.array([eps, 0.0])
            ey = np.array([0.0, eps])
            dX = (f.forward(P + ex) - f.forward(P - ex)) / (2 * eps)
            dY = (f.forward(P + ey) - f.forward(P - ey)) / (2 * eps)
            det = dX[:, 0] * dY[:, 1] - dX[:, 1] * dY[:, 0]
            assert np.max(np.abs(det - 1)) < 1e-5

    def test_circle_equivariance(self, decomposition):
        # every factor maps each circle of radius r >= 1 to itself by a
        # constant angular displacement
        th = np.linspace(0, TWO_PI, 64, endpoint=False)
        for f in decomposition.factors:
            for r in (1.0, 1.02, 1.2, 2.0):
                P = r * np.stack([np.cos(th), np.sin(th)], axis=-1)
                img = f.forward(P)
                assert np.max(np.abs(np.hypot(img[:, 0], img[:, 1]) - r)) < 1e-12
                disp = np.mod(np.arctan2(img[:, 1], img[:, 0]) - th, TWO_PI)
                assert disp.max() - disp.min() < 1e-9


class TestCertification:
    def test_identity_certifies_at_one(self):
        cert = df.certify_K(df.RotationFactor(0.0), sample_count=2000, rng=0)
        assert cert.K == pytest.approx(1.0, abs=1e-9)

    def test_small_rotation_under_1p2(self):
        cert = df.certify_K(df.RotationFactor(0.1), sample_count=2000, rng=0)
        assert cert.K <= 1.2
        assert cert.K == pytest.approx(1.0 / np.cos(0.1), abs=1e-4)

    def test_half_pi_rotation_fails_untwistedness(self):
        with pytest.raises(maps.ConfigurationError):
            df.RotationFactor(np.pi / 2)

    def test_low_target_reports_condition(self, plane_map):
        # the twist factor at m' = 8 exceeds K = 1.2; certification names
        # the first violated bi-Lipschitz condition
        tw = maps.TwistFactor(8, ALPHA, BETA)
        with pytest.raises(maps.CertificationError) as exc:
            df.certify_K(tw, sample_count=4000, rng=0, K_target=1.2)
        assert "ii" in exc.value.condition

    def test_rotation_split_certified_K(self):
        phi = TWO_PI * ALPHA / 4
        cert = df.certify_K(df.RotationFactor(phi), sample_count=4000, rng=0)
        assert cert.K == pytest.approx(
            max(1 / np.cos(phi), abs(np.tan(phi))), rel=1e-3)


class TestDecomposition:
    def test_composition_reproduces_map(self, plane_map, decomposition, rng):
        r = np.sqrt(rng.uniform(0, 1, 1000)) * 2.0
        th = rng.uniform(0, TWO_PI, 1000)
        P = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
        err = np.linalg.norm(decomposition.compose(P) - plane_map.forward(P),
                             axis=-1)
        assert err.max() < 1e-9

    def test_identity_inner_reduces_to_twists(self):
        # with the identity inner map (alpha = 0) the decomposition is the
        # m' twist roots alone
        pm0 = df.extend_pseudo_rotation(None, 0.0, 0.05)
        dec = df.decompose(pm0, K_target=2.0, m_prime=8,
                           inner_factors=[], sample_count=2000, rng=0)
        assert dec.m == 8
        P = np.array([[1.02, 0.3], [0.5, 0.1], [0.0, 1.04]])
        out = dec.compose(P)
        r = np.hypot(P[:, 0], P[:, 1])
        ang = TWO_PI * np.clip(r - 1, 0, 0.05)
        assert np.allclose(out, rot(P, ang), atol=1e-12)
        assert np.allclose(out, pm0.forward(P), atol=1e-12)

    def test_json_roundtrip(self, decomposition, rng):
        dec2 = maps.Decomposition.from_json(decomposition.to_json())
        P = rng.normal(size=(50, 2))
        assert np.allclose(dec2.compose(P), decomposition.compose(P),
                           atol=1e-14)
        assert dec2.K == decomposition.K

    def test_perturbation_factor_exactness(self, rng):
        f = df.PerturbationFactor(df.BumpPerturbation(0.9), 0.05)
        X = rng.uniform(-1.2, 1.2, 400)
        y = rng.uniform(-1.2, 1.2, 400)
        eps = 1e-6
        dh_dy = (f.h(X, y + eps) - f.h(X, y - eps)) / (2 * eps)
        assert np.max(np.abs(dh_dy - f.g(X, y))) < 1e-8
        # identity outside the unit disk, exact area preservation inside
        P = 1.1 * rng.normal(size=(100, 2))
        P = P[np.hypot(P[:, 0], P[:, 1]) > 1.0]
        assert np.allclose(f.forward(P), P, atol=1e-14)
        inner = rng.uniform(-0.6, 0.6, size=(500, 2))
        ex, ey = np.array([eps, 0]), np.array([0, eps])
        dX = (f.forward(inner + ex) - f.forward(inner - ex)) / (2 * eps)
        dY = (f.forward(inner + ey) - f.forward(inner - ey)) / (2 * eps)
        det = dX[:, 0] * dY[:, 1] - dX[:, 1] * dY[:, 0]
        assert np.max(np.abs(det - 1)) < 1e-6
