"""The generating family's gradient flow on the cyclic phase space.

States are mq coordinate pairs; the singular set of the field is the origin
plus one closed curve per admissible rational p/q, and the action gap
between them has the closed form pi (p - q a)(1 + d + d^2/3).  Orbits obey
two-sided exponential estimates with the rate A = sqrt(6 K^2 + 3).
"""
import numpy as np

import diskflow as df
from diskflow.flow import StepPolicy, gronwall_campaign

alpha, beta, q, p = 0.3, 0.35, 3, 1
pm = df.extend_pseudo_rotation(None, alpha, beta)
dec = df.decompose(pm, 2.0, 8, df.rotation_split(alpha, 4),
                   sample_count=8000, rng=0)
system = df.GeneratingSystem(dec, q)
print("dimension 2 m q =", system.dim, " A =", round(system.A, 4))

sig = system.sigma_point(p, 0.37)
print("||xi|| on the singular curve:", np.linalg.norm(system.xi(sig)))
print("action gap (closed form):   %.12f" % system.action_gap(p))
print("action at the curve:        %.12f" % system.action(sig))
print("path-integral oracle:       %.12f" % system.action_gap_quadrature(p))

probe = system.lipschitz_probe(20000, rng=1)
print("sampled Lipschitz ratio %.4f <= A = %.4f" % (probe, system.A))

rng = np.random.default_rng(2)
Z = system.random_states(64, rng=rng)
Zp = system.random_states(64, rng=rng)
rep = gronwall_campaign(system, Z, Zp, 1.0, StepPolicy())
print("Gronwall worst relative violation over 64 pairs:",
      max(rep.max_upper_violation, rep.max_lower_violation,
          rep.max_xi_upper_violation, rep.max_xi_lower_violation))

rec = df.integrate(system, Z[0], 1.0, StepPolicy(record_states=True),
                   richardson=True)
print("orbit action increase:", rec.actions[-1] - rec.actions[0])
print("energy (stage quadrature):", rec.energy_rk4,
      " Richardson error:", rec.richardson_error)
with open("out/orbit.csv", "w") as fh:
    fh.write(rec.to_csv())
print("wrote out/orbit.csv")
