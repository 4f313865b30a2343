"""Synthesize the q-periodic approximation and check its bounds.

Each factor acts on the disk through the invariant surface; the composed
map is conjugate to the cyclic shift, hence q-periodic, and deviates from
the underlying map by at most (1 + K + ... + K^{m-1}) sqrt(A C).  The
homothety to the unit disk adds (1 + K^m)(p/q - alpha).
"""
import numpy as np

import diskflow as df
from diskflow import approx, disk

pm = df.extend_pseudo_rotation(None, 0.3, 0.35)
dec = df.decompose(pm, 2.0, 8, df.rotation_split(0.3, 4),
                   sample_count=8000, rng=0)
system = df.GeneratingSystem(dec, 3)

gmesh = disk.graph_transform_disk(system, 1, t=28.0, n_r=8, n_theta=16,
                                  t_base=10.0, sub_angles=8, holdout=0)
ap = approx.PeriodicApprox(system, gmesh)

rep = ap.error_bounds()
print("C(p, q) =", rep.C)
print("sup |fhat - f|  measured %.3e <= bound %.3e"
      % (rep.measured_f, rep.bound_f))
print("period defect sup |fhat^q - id| = %.3e" % rep.period_defect)
print("rigidity sup |w - f^q(w)| measured %.3e <= bound %.3e"
      % (rep.measured_rigidity, rep.bound_rigidity))
print("inverse deviation (measured, reported only): %.3e"
      % rep.inverse_measured)

resc = ap.rescale_to_unit()
print("rescaled to the unit disk: measured %.3e <= bound %.3e"
      % (resc["measured"], resc["bound"]))

print("closed-form bound along convergents of an irrational near 0.3:")
alpha_irr = (np.sqrt(13) - 3) / 2
for p, q in approx.convergents(alpha_irr, 5)[1:]:
    d = p / q - alpha_irr
    C = np.pi * abs(p - q * alpha_irr) * (1 + abs(d) + d * d / 3)
    bound = approx.chain_sum(system.K, system.m) * np.sqrt(system.A * C)
    print("  p/q = %d/%d: bound %.6f" % (p, q, bound))
with open("out/approx_report.json", "w") as fh:
    fh.write(rep.to_json())
print("wrote out/approx_report.json")
