import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import diskflow as df
from diskflow import linking

P = 1


def square_loop(mq=4):
    w = np.zeros((mq, 2))
    w[:, 0] = [1, -1, -1, 1]
    w[:, 1] = [1, 1, -1, -1]
    return w


class TestLinkingNumber:
    def test_square_loop(self):
        assert linking.linking_L(square_loop()) == 1

    def test_reversed_square_loop(self):
        assert linking.linking_L(square_loop()[::-1]) == -1

    def test_sigma_minus_origin(self, system):
        z = system.sigma_point(P, 0.45)
        assert linking.linking_L(z) == P

    def test_outside_W_raises(self):
        w = square_loop()
        w[1] = [0.0, 0.0]
        with pytest.raises(linking.UndefinedLinkingError):
            linking.linking_L(w)

    def test_W_extension_consistent(self):
        # x_2 = 0 with y_1 y_2 > 0 stays in W; both L and the winding agree
        w = np.array([[1.0, 1.0], [0.0, 0.5], [-1.0, -0.8], [0.7, -1.0]])
        sc = linking.classify(w)
        assert sc.in_W and not sc.in_V
        assert sc.L == linking.winding_oracle(w)

    def test_adjacent_zeros_degenerate(self):
        w = np.array([[0.0, 0.0], [1.0, 0.5], [-1.0, -0.8], [0.7, -1.0]])
        sc = linking.classify(w)
        assert not sc.in_W


class TestWindingOracle:
    def test_agrees_on_random_states(self, system, rng):
        W = system.random_states(10000, rng=rng)
        assert np.array_equal(linking.linking_L(W), linking.winding_oracle(W))

    def test_shift_invariance(self, system, rng):
        W = system.random_states(1000, rng=rng)
        assert np.array_equal(linking.linking_L(system.shift(W)),
                              linking.linking_L(W))

    def test_point_reflection_invariance(self, system, rng):
        W = system.random_states(1000, rng=rng)
        assert np.array_equal(linking.linking_L(-W), linking.linking_L(W))

    @given(st.integers(2, 12), st.integers(0, 2 ** 30 - 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_winding_hypothesis(self, mq, seed):
        w = np.random.default_rng(seed).normal(size=(mq, 2))
        sc = linking.classify(w)
        if sc.in_V:
            assert sc.L == linking.winding_oracle(w)


class TestProp3:
    def test_no_crossing_for_sigma_pair(self, system):
        za = system.sigma_point(P, 0.2)
        zb = system.sigma_point(P, 1.9)
        rep = linking.prop3_monitor(system, za, zb, 0.5)
        assert not [c for c in rep.crossings if c.genuine]

    def test_engineered_exit_increases_L(self, system, rng):
        # difference with one vanishing coordinate and mismatched neighbour
        # signs leaves W at t = 0; the jump must be a positive integer.
        # Starting the monitor slightly earlier puts the contact inside the
        # sampling window.
        z = system.random_states(1, rng=rng)[0] * 0.4
        w = system.random_states(1, rng=rng)[0]
        j = 7
        w[j, 0] = 0.0
        w[j - 1, 1] = -1.0
        w[j, 1] = 1.0
        zp = z + 1e-2 * w
        back = df.integrate(system, np.stack([z, zp]), -0.01)
        rep = linking.prop3_campaign(system, back.z_end[:1], back.z_end[1:],
                                     0.03)
        genuine = [c for c in rep.crossings if c.genuine]
        assert genuine
        assert all(c.L_after > c.L_before for c in genuine)

    def test_campaign_small(self, system, rng):
        Z = system.random_states(150, rng=rng)
        Zp = system.random_states(150, rng=rng)
        rep = linking.prop3_campaign(system, Z, Zp, 0.4)
        assert rep.ok, rep.violations
        assert len(rep.crossings) > 0

    def test_csv_report(self, system, rng):
        Z = system.random_states(20, rng=rng)
        Zp = system.random_states(20, rng=rng)
        rep = linking.prop3_campaign(system, Z, Zp, 0.2)
        text = linking.crossings_to_csv(rep)
        assert text.startswith("t_cross,L_before,L_after,violating_index")


class TestNt:
    def test_plane_supported_difference(self, system):
        # difference supported on (x_i, y_{i-1}) has zero complement ratio
        z = np.zeros((system.mq, 2))
        zp = np.zeros((system.mq, 2))
        zp[4, 0] = 0.3
        zp[3, 1] = -0.2
        w = zp - z
        x, y = w[:, 0], w[:, 1]
        tot = np.sum(x ** 2 + y ** 2)
        inside = x[4] ** 2 + y[3] ** 2
        assert tot - inside == pytest.approx(0.0, abs=1e-15)

    def test_sigma_pairs_admissible(self, system):
        th = np.linspace(0.1, 2 * np.pi, 12, endpoint=False)
        Z = system.sigma_point(P, th)
        Zp = system.sigma_point(P, th + 0.9)
        est = linking.estimate_Nt(system, 0.5, Z, Zp)
        assert est.conclusive
        assert np.isfinite(est.ratio)

    def test_monotone_in_horizon(self, system, rng):
        Z = np.concatenate([
            system.sigma_point(P, np.linspace(0.1, 5.9, 10)),
            system.random_states(50, rng=rng)])
        Zp = np.concatenate([
            system.sigma_point(P, np.linspace(0.8, 6.6, 10)),
            system.random_states(50, rng=rng)])
        vals = [linking.estimate_Nt(system, t, Z, Zp).ratio
                for t in (0.2, 0.5, 1.0)]
        # the admissible set shrinks with the horizon
        assert vals[0] >= vals[1] >= vals[2] or np.isnan(vals[2])


class TestWPlusMembership:
    def test_attracting_probe(self, system, rng):
        from diskflow.disk import estimate_M
        M = estimate_M(system, P, n_pairs=500, rng=rng)
        assert np.isnan(M) or M >= 0.0
