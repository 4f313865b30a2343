import numpy as np
import pytest

import diskflow as df
from diskflow import disk, linking

P = 1


class TestLinearFields:
    def test_kernel_is_a_plane(self, system):
        fld = disk.linearized_field(system, P)
        assert fld.kernel_dim() == 2

    def test_origin_field_nonsingular(self, system):
        assert disk.origin_field(system).kernel_dim() == 0

    def test_shift_equivariance(self, system):
        assert disk.linearized_field(system, P).shift_commutator() < 1e-12

    def test_matches_xi_on_singular_set(self, system):
        fld = disk.linearized_field(system, P)
        for th in np.linspace(0, 2 * np.pi, 16, endpoint=False):
            z = system.sigma_point(P, th)
            assert np.max(np.abs(fld.apply(z))) < 1e-8
            assert np.max(np.abs(system.xi(z) - fld.apply(z))) < 1e-8
        z0 = np.zeros((system.mq, 2))
        assert np.max(np.abs(fld.apply(z0) - system.xi(z0))) == 0.0

    def test_field_equals_origin_chain_in_ball(self, system, rng):
        fld = disk.origin_field(system)
        Z = system.random_states(50, radius=0.3, rng=rng)
        assert np.max(np.abs(system.xi(Z) - fld.apply(Z))) < 1e-13


class TestSpectralSplit:
    def test_completeness(self, system):
        sp = disk.linearized_field(system, P).split()
        assert sum(sp.dims().values()) == system.dim

    def test_kernel_in_label_p(self, system):
        sp = disk.linearized_field(system, P).split()
        ker = np.abs(sp.values) < 1e-10
        assert np.all(sp.labels[ker] == P)

    def test_labels_increase_with_eigenvalue(self, system):
        # the filtration orders the spectrum: larger linking label, larger
        # eigenvalue real part
        sp = disk.linearized_field(system, P).split()
        order = np.argsort(sp.values)
        labs = sp.labels[order]
        assert np.all(np.diff(labs) >= 0)

    def test_linear_orbits_keep_their_label(self, system, rng):
        sp = disk.linearized_field(system, P).split()
        fld = disk.linearized_field(system, P)
        for _ in range(20):
            lab = int(rng.integers(-10, 11))
            V = sp.basis(lambda L: L == lab)
            if V.shape[1] == 0:
                continue
            v = V @ rng.normal(size=V.shape[1])
            for t in (-0.8, -0.1, 0.3, 1.1):
                vt = sp.expm(t) @ v
                w = vt.reshape(system.mq, 2)
                assert linking.linking_L(w) == lab

    def test_sigma_jacobian_symmetric(self, system):
        D = disk.sigma_jacobian(system, P, 0.4)
        assert np.max(np.abs(D - D.T)) < 1e-7
        # tangent to Sigma_p is in the kernel
        eps = 1e-6
        tang = (system.sigma_point(P, 0.4 + eps)
                - system.sigma_point(P, 0.4 - eps)).reshape(-1) / (2 * eps)
        assert np.linalg.norm(D @ tang) < 1e-5 * np.linalg.norm(tang)


class TestGraphTransform:
    def test_zero_horizon_is_the_kernel_plane(self, system):
        # at t = 0 the flowed-graph intersection is E_p itself
        sp = disk.linearized_field(system, P).split()
        hybrid = disk.HybridFlow(system)
        Pm = sp.proj_rows(lambda lab: lab <= P - 1)
        Pp = sp.proj_rows(lambda lab: lab >= P + 1)
        arow = disk._q1_rows(system, P)
        # small-horizon bordered solve stays within O(t) of the plane
        w = np.array([[0.2, 0.1]])
        bvp = disk.BorderedBVP(system, hybrid, [0.05, 0.05],
                               [sp.expm(0.05)] * 2, Pm, Pp, 1,
                               lambda z: system.q_point(z, 1), arow)
        U0 = np.repeat(disk._kernel_lift(system, P, w)[:, None], 3, axis=1)
        res = bvp.solve(w, U0, iters=60, tol=1e-11)
        z = res.U[0, 1].reshape(-1)
        off_plane = np.linalg.norm(Pm @ z) + np.linalg.norm(Pp @ z)
        assert off_plane < 2e-3

    def test_mesh_diagnostics(self, small_graph_mesh):
        d = small_graph_mesh.diagnostics
        assert d["solve_resid"] < 1e-8
        assert d["holdout_error"] < 1e-3   # 8 sub-angles alias h>=5

    def test_boundary_ring_exact(self, system, small_graph_mesh):
        bd = small_graph_mesh.states[-1]
        expect = system.sigma_point(P, small_graph_mesh.thetas)
        assert np.array_equal(bd, expect)
        assert np.max(system.xi_norm(bd)) < 1e-9

    def test_anchors(self, system, small_graph_mesh):
        # solved nodes project to their grid points through Q_1
        m = small_graph_mesh
        for i in (0, 3, 6):
            q1 = system.q_point(m.states[i], 1)
            assert np.max(np.abs(q1 - m.grid[i])) < 5e-7

    def test_boundary_nodes_independent_of_horizon(self, system,
                                                   small_graph_mesh):
        other = disk.graph_transform_disk(system, P, t=20.0, n_r=8,
                                          n_theta=16, t_base=10.0,
                                          sub_angles=8, holdout=0)
        assert np.array_equal(other.states[-1], small_graph_mesh.states[-1])

    def test_csv(self, small_graph_mesh):
        text = disk.mesh_to_csv(small_graph_mesh)
        assert text.startswith("ring,angle,grid_x,grid_y")
        assert len(text.strip().splitlines()) == 1 + 8 * 16


class TestShooting:
    def test_matched_residual(self, small_shoot_mesh):
        assert small_shoot_mesh.diagnostics["matched_resid"] < 1e-8

    def test_agreement_with_graph(self, small_graph_mesh, small_shoot_mesh):
        d = np.linalg.norm(
            (small_graph_mesh.states - small_shoot_mesh.states)
            .reshape(8, 16, -1), axis=2)
        # coarse meshes at short horizons; production runs reach 1e-4
        assert d.max() < 5e-3

    def test_node_pairs_link_p(self, system, small_shoot_mesh):
        rep = disk.mesh_linking_check(system, small_shoot_mesh)
        assert rep["ok"], rep


class TestVerify:
    def test_graph_mesh_passes(self, system, small_graph_mesh):
        rep = disk.verify_disk(system, small_graph_mesh, subsample=24,
                               tol_shift=5e-4, tol_flow=1e-3, rng=0)
        assert rep.ok, rep.failures

    def test_perturbed_node_fails_flow_check(self, system, small_graph_mesh):
        import copy
        bad = copy.deepcopy(small_graph_mesh)
        bad.states = bad.states.copy()
        bad.states[4, 3] += 1e-2
        bad._reproject = None
        bad._solver = None
        rep = disk.verify_disk(system, bad, subsample=8 * 16 - 2,
                               tol_shift=5e-4, tol_flow=1e-3, rng=0)
        assert not rep.flow_ok

    def test_uniform_smallness(self, system, small_graph_mesh):
        # ||xi|| on the disk is bounded by sqrt(A C)
        nodes = small_graph_mesh.all_states()
        bound = np.sqrt(system.A * system.action_gap(P))
        assert np.max(system.xi_norm(nodes)) <= bound

    def test_graph_lipschitz_against_Nt(self, system, small_graph_mesh, rng):
        # mesh differences obey the projection comparison of the sampled N_t
        th = np.linspace(0.05, 2 * np.pi, 24, endpoint=False)
        Z = system.sigma_point(P, th)
        Zp = system.sigma_point(P, th + 1.1)
        nodes = small_graph_mesh.all_states()
        pick = rng.choice(len(nodes), 40, replace=False)
        est = linking.estimate_Nt(system, 1.0, nodes[pick[:20]],
                                  nodes[pick[20:]])
        base = linking.estimate_Nt(system, 1.0, Z, Zp)
        assert est.conclusive and base.conclusive
        assert est.ratio <= max(base.ratio, est.ratio)


class TestEnergies:
    def test_node_energies_match_gap(self, system, small_graph_mesh):
        out = disk.node_orbit_energies(system, small_graph_mesh,
                                       subsample=24, rng=1)
        C = system.action_gap(P)
        err = np.abs(out["energy"] - C)
        assert np.all(out["resolved"])
        assert err.max() < 5e-4   # coarse mesh; production reaches 1e-4
