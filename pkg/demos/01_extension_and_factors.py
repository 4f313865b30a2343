"""Extend a disk rotation to the plane and factor it into certified pieces.

The extended map is the rotation by 2 pi alpha inside the unit disk, an
integrable twist across a thin annulus, and the rotation by 2 pi beta
outside.  Circles with rational rotation number p/q inside the annulus are
periodic; everything else is not.  The decomposition splits the twist into
m' equal roots and the inner rotation into m'' equal rotations, each an
area-preserving untwisted factor with a certified Lipschitz constant.
"""
import numpy as np

import diskflow as df

alpha, beta = 0.3, 0.35
pm = df.extend_pseudo_rotation(None, alpha, beta)

print("invariant circle for p/q = 1/3 at radius", pm.circle_radius(1, 3))
P = np.array([pm.circle_radius(1, 3), 0.0])
orbit = [P]
for _ in range(3):
    orbit.append(pm.forward(orbit[-1]))
print("f^3 returns the circle point to itself:",
      np.linalg.norm(orbit[-1] - orbit[0]))

dec = df.decompose(pm, K_target=2.0, m_prime=8,
                   inner_factors=df.rotation_split(alpha, 4),
                   sample_count=8000, rng=0)
print("factors:", dec.m, "(twist x %d, rotation x %d)" % (dec.m_prime,
                                                          dec.m_dprime))
print("certified K =", round(dec.K, 6))
print("composition error vs the extended map:", dec.composition_error)

# generating data of the first twist factor
f = dec.factors[0]
g, gp, h = df.factor_generating(f, 0.8, -0.55)
print("twist factor at (X, y) = (0.8, -0.55): g=%.12f g'=%.12f h=%.12f"
      % (g, gp, h))

with open("out/decomposition.json", "w") as fh:
    fh.write(dec.to_json())
print("wrote out/decomposition.json")
