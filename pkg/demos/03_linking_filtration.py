"""The linking number and its one-way filtration along the flow.

L(w) is the winding number of the staircase loop through the coordinate
pairs of w; it is defined off a vanishing set and can only increase when a
pair of orbits crosses that set.  The same mechanism drives the general
tridiagonal sign predictions.
"""
import numpy as np

import diskflow as df
from diskflow import linking, tridiag

pm = df.extend_pseudo_rotation(None, 0.3, 0.35)
dec = df.decompose(pm, 2.0, 8, df.rotation_split(0.3, 4),
                   sample_count=8000, rng=0)
system = df.GeneratingSystem(dec, 3)

rng = np.random.default_rng(3)
W = system.random_states(2000, rng=rng)
L = linking.linking_L(W)
print("L = staircase winding on 2000 random states:",
      np.array_equal(L, linking.winding_oracle(W)))
print("L range seen:", L.min(), "..", L.max())

sig = system.sigma_point(1, 0.8)
print("L(sigma - 0) =", linking.linking_L(sig), " (the admissible p)")

Z = system.random_states(300, rng=rng)
Zp = system.random_states(300, rng=rng)
rep = linking.prop3_campaign(system, Z, Zp, 0.5)
genuine = [c for c in rep.crossings if c.genuine]
print("crossings: %d genuine, %d contacts flagged degenerate"
      % (len(genuine), rep.degenerate_contacts))
print("all genuine crossings increase L:",
      all(c.L_after > c.L_before for c in genuine))
jumps = sorted({c.L_after - c.L_before for c in genuine})
print("observed jumps:", jumps)

itl = tridiag.interleave(system)
U = W[:200].reshape(200, -1)
print("interleaved identity Lcal = 4 L:",
      np.array_equal(tridiag.lcal(U, itl.sigma), 4 * L[:200]))
with open("out/crossings.csv", "w") as fh:
    fh.write(linking.crossings_to_csv(rep))
print("wrote out/crossings.csv")
