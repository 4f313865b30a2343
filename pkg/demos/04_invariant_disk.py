"""Construct the invariant disk two independent ways and verify it.

The graph transform intersects flowed spectral graphs at a finite horizon;
the matched shooting sweeps orbits out of the label-p eigenplane at the
origin with a far-end condition on the local stable set of the singular
circle.  Node-wise agreement of the two meshes is the correctness evidence.
Sizes here are reduced for a quick run; the acceptance suite uses the full
16 x 64 grid and long horizons.
"""
import numpy as np

import diskflow as df
from diskflow import disk

pm = df.extend_pseudo_rotation(None, 0.3, 0.35)
dec = df.decompose(pm, 2.0, 8, df.rotation_split(0.3, 4),
                   sample_count=8000, rng=0)
system = df.GeneratingSystem(dec, 3)
p = 1

fld = disk.linearized_field(system, p)
print("kernel of the circle chain field is a plane:", fld.kernel_dim() == 2)
sp = fld.split()
print("splitting dimensions by linking label:", sp.dims())

gmesh = disk.graph_transform_disk(system, p, t=28.0, n_r=8, n_theta=16,
                                  t_base=10.0, sub_angles=8, holdout=2)
print("graph mesh: solver residual %.2e, held-out extension error %.2e"
      % (gmesh.diagnostics["solve_resid"],
         gmesh.diagnostics["holdout_error"]))

smesh = disk.shooting_disk(system, p, n_r=8, n_theta=16, T_f=28.0,
                           n_seeds=16)
print("shooting mesh: matched residual %.2e"
      % smesh.diagnostics["matched_resid"])

d = np.linalg.norm((gmesh.states - smesh.states).reshape(8, 16, -1), axis=2)
print("node-wise agreement of the two constructions: %.3e" % d.max())

rep = disk.verify_disk(system, gmesh, subsample=24, tol_shift=5e-4,
                       tol_flow=1e-3)
print("verification: centre %s, shift %s, injective %s/%s, flow %s, "
      "north-south %s" % (rep.center_ok, rep.shift_ok, rep.proj_xy_prev_ok,
                          rep.proj_xy_ok, rep.flow_ok, rep.north_south_ok))

en = disk.node_orbit_energies(system, gmesh, subsample=16)
C = system.action_gap(p)
print("node-orbit energies vs the gap C = %.9f: worst |E - C| = %.2e"
      % (C, np.max(np.abs(en["energy"] - C))))
with open("out/mesh_graph.csv", "w") as fh:
    fh.write(disk.mesh_to_csv(gmesh))
print("wrote out/mesh_graph.csv")
