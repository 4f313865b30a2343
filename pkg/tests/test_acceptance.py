"""Acceptance suite: the quantitative exit criteria of the pipeline.

Default instance: alpha = 0.3, beta = 0.35, rigid-rotation inner map,
m' = 8 twist roots + m'' = 4 rotation splits (m = 12), q = 3, p = 1,
dimension 2 m q = 72.  Each criterion prints one PASS/FAIL line (run
pytest with -s to see them) and asserts at its stated tolerance.

Run:  pytest tests/test_acceptance.py -v -s
"""

import time

import numpy as np
import pytest

import diskflow as df
from diskflow import approx, disk, flow, linking, tridiag

P = 1
SEED = 20260808


def report(num, name, ok, detail, elapsed, budget):
    line = "ACCEPTANCE %d %-22s: %s (%s; %.1fs of %ds budget)" % (
        num, name, "PASS" if ok else "FAIL", detail, elapsed, budget)
    print("\n" + line)
    assert ok, line
    assert elapsed < budget, line


@pytest.fixture(scope="module")
def meshes(system):
    gmesh = disk.graph_transform_disk(system, P, rng=SEED, holdout=2)
    smesh = disk.shooting_disk(system, P)
    return gmesh, smesh


class TestAcceptance:
    def test_01_lipschitz_bound(self, system):
        t0 = time.time()
        probe = system.lipschitz_probe(100000, rng=SEED)
        ok = probe <= system.A
        report(1, "lipschitz_bound", ok,
               "max ratio %.6f <= A=%.6f over 1e5 pairs" % (probe, system.A),
               time.time() - t0, 60)

    def test_02_action_gap(self, system):
        t0 = time.time()
        gap = system.action_gap(P)
        sig_action = system.action(system.sigma_point(P, 0.37))
        quad = system.action_gap_quadrature(P)
        rel1 = abs(sig_action - gap) / abs(gap)
        rel2 = abs(quad - gap) / abs(gap)
        ok = rel1 < 1e-6 and rel2 < 1e-6
        report(2, "action_gap", ok,
               "closed form %.9f, action %.3e rel, path integral %.3e rel"
               % (gap, rel1, rel2), time.time() - t0, 60)

    def test_03_gronwall(self, system):
        t0 = time.time()
        rng = np.random.default_rng(SEED)
        worst = 0.0
        ok = True
        for _ in range(4):
            Z = system.random_states(250, rng=rng)
            Zp = system.random_states(250, rng=rng)
            rep = flow.gronwall_campaign(system, Z, Zp, 1.0, tol=1e-6)
            worst = max(worst, rep.max_upper_violation,
                        rep.max_lower_violation, rep.max_xi_upper_violation,
                        rep.max_xi_lower_violation)
            ok = ok and rep.ok
        report(3, "gronwall", ok,
               "1000 pairs, T=1, worst relative violation %.2e" % worst,
               time.time() - t0, 300)

    def test_04_filtration_monotonicity(self, system):
        t0 = time.time()
        rng = np.random.default_rng(SEED)
        total_genuine = 0
        violations = 0
        degenerate = 0
        # random pairs plus engineered contacts with a vanishing coordinate
        for chunk in range(5):
            n = 2000
            Z = system.random_states(n, rng=rng)
            Zp = system.random_states(n, rng=rng)
            if chunk == 0:
                w = system.random_states(n, rng=rng)
                j = rng.integers(0, system.mq, n)
                w[np.arange(n), j, 0] = 0.0
                w[np.arange(n), (j - 1) % system.mq, 1] = \
                    -np.abs(w[np.arange(n), (j - 1) % system.mq, 1]) - 0.1
                w[np.arange(n), j, 1] = np.abs(w[np.arange(n), j, 1]) + 0.1
                Zp = Z + 0.05 * w
                back = df.integrate(system, np.concatenate([Z, Zp]), -0.005)
                Z, Zp = back.z_end[:n], back.z_end[n:]
            rep = linking.prop3_campaign(system, Z, Zp, 1.0)
            genuine = [c for c in rep.crossings if c.genuine]
            total_genuine += len(genuine)
            violations += len(rep.violations)
            degenerate += rep.degenerate_contacts
        ok = violations == 0 and total_genuine > 0
        report(4, "filtration", ok,
               "10000 pairs, %d genuine crossings, %d degenerate contacts, "
               "%d violations" % (total_genuine, degenerate, violations),
               time.time() - t0, 600)

    def test_05_invariant_disk(self, system, meshes):
        t0 = time.time()
        gmesh, smesh = meshes
        dd = np.linalg.norm(
            (gmesh.states - smesh.states).reshape(gmesh.n_r, gmesh.n_theta,
                                                  -1), axis=2)
        agree = float(dd.max())
        repg = disk.verify_disk(system, gmesh, rng=SEED)
        reps = disk.verify_disk(system, smesh, rng=SEED)
        en = disk.node_orbit_energies(system, gmesh, rng=SEED)
        C = system.action_gap(P)
        err = float(np.max(np.abs(en["energy"] - C)))
        resolved = bool(np.all(en["resolved"]))
        ok = (agree < 1e-4 and repg.ok and reps.ok and err < 1e-4
              and resolved)
        detail = ("mesh agreement %.2e < 1e-4; verify graph=%s shoot=%s; "
                  "max |energy - C| %.2e" % (agree, repg.ok, reps.ok, err))
        if repg.failures:
            detail += "; graph failures %s" % repg.failures
        if reps.failures:
            detail += "; shoot failures %s" % reps.failures
        report(5, "invariant_disk", ok, detail, time.time() - t0, 900)

    def test_06_approximation_bound(self, system, meshes):
        t0 = time.time()
        gmesh, _ = meshes
        ap = approx.PeriodicApprox(system, gmesh)
        rep = ap.error_bounds(check_inverse=True)
        resc = ap.rescale_to_unit()
        ok = (rep.measured_f <= rep.bound_f and rep.period_defect < 1e-4
              and resc["measured"] <= resc["bound"])
        report(6, "approximation_bound", ok,
               "sup|fhat-f| %.3e <= %.3e; period defect %.2e < 1e-4; "
               "rescaled %.3e <= %.3e"
               % (rep.measured_f, rep.bound_f, rep.period_defect,
                  resc["measured"], resc["bound"]),
               time.time() - t0, 300)

    def test_07_rigidity_bound(self, system, meshes):
        t0 = time.time()
        gmesh, _ = meshes
        ap = approx.PeriodicApprox(system, gmesh)
        rep = ap.error_bounds(check_inverse=False)
        ok = rep.measured_rigidity <= rep.bound_rigidity
        report(7, "rigidity_bound", ok,
               "sup|w - f^q(w)| %.4f <= %.4g"
               % (rep.measured_rigidity, rep.bound_rigidity),
               time.time() - t0, 300)

    def test_08_lemma6_campaign(self, system):
        t0 = time.time()
        rng = np.random.default_rng(SEED)
        import math
        checked = 0
        violations = 0
        exceptional = 0
        bk_exact = True
        ak_positive = True
        for _ in range(1000):
            K = float(rng.uniform(1.05, 1.6))
            r = int(rng.integers(8, 17))
            l = int(rng.integers(2, 6))
            mu = float(rng.uniform(0.5, 0.95))
            tb = tridiag.build_table(K, l, mu)
            bk = [(3 * K) ** k * tb.delta / math.factorial(k)
                  for k in range(len(tb.b))]
            bk_exact &= bool(np.allclose(tb.b, bk, rtol=1e-13))
            ak_positive &= bool(np.all(tb.a[: l // 2 + 2] > 0))
            fld = tridiag.random_fields(1, r, K, rng=rng)
            eps = float(rng.uniform(0.0, tb.eps0))
            i = int(rng.integers(0, r))
            x, xp = tridiag.admissible_pair(fld, i, l, mu, eps, rng=rng)
            for tt in (tb.t0, -tb.t0):
                pred = tridiag.predict_signs(fld, x, xp, i, l, eps, mu, tt,
                                             tb)
                out = tridiag.verify_prediction(fld, x, xp, pred)
                checked += 1
                if pred.exceptional:
                    exceptional += 1
                if not out["ok"]:
                    violations += 1
        ok = violations == 0 and bk_exact and ak_positive
        report(8, "lemma6_campaign", ok,
               "1000 fields, %d checks, %d violations; b_k closed form %s; "
               "a_k positivity %s" % (checked, violations, bk_exact,
                                      ak_positive),
               time.time() - t0, 600)

    def test_09_oracle_agreement(self, system):
        t0 = time.time()
        rng = np.random.default_rng(SEED)
        W = system.random_states(10000, rng=rng)
        mism = int(np.sum(linking.linking_L(W)
                          != linking.winding_oracle(W)))
        itl = tridiag.interleave(system)
        U = system.random_states(1000, rng=rng)
        lmism = int(np.sum(tridiag.lcal(U.reshape(1000, -1), itl.sigma)
                           != 4 * linking.linking_L(U)))
        ok = mism == 0 and lmism == 0
        report(9, "oracle_agreement", ok,
               "winding mismatches %d / 10000; Lcal = 4L mismatches %d / 1000"
               % (mism, lmism), time.time() - t0, 120)
