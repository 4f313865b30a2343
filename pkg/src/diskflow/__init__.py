"""Gradient flows of generating families for extended disk pseudo-rotations.

The pipeline: extend a disk map to the plane and factor it into certified
untwisted pieces (``maps``), build the cyclic phase space and gradient field
(``genfam``), integrate orbits with Lipschitz-tied steps (``flow``), track
the linking filtration (``linking``), construct and verify the invariant
disks (``disk``), synthesise the periodic approximation with quantitative
bounds (``approx``), and check the general tridiagonal sign machinery
(``tridiag``).  ``runner`` ties the stages into reproducible experiments.
"""

from .maps import (
    extend_pseudo_rotation, decompose, rotation_split, certify_K,
    factor_generating, RotationFactor, TwistFactor, PerturbationFactor,
    BumpPerturbation, Decomposition, PlaneMap,
)
from .genfam import GeneratingSystem
from .flow import StepPolicy, integrate, gronwall_check, energy
from .linking import linking_L, winding_oracle, prop3_monitor, estimate_Nt

__all__ = [
    "extend_pseudo_rotation", "decompose", "rotation_split", "certify_K",
    "factor_generating", "RotationFactor", "TwistFactor", "PerturbationFactor",
    "BumpPerturbation", "Decomposition", "PlaneMap", "GeneratingSystem",
    "StepPolicy", "integrate", "gronwall_check", "energy",
    "linking_L", "winding_oracle", "prop3_monitor", "estimate_Nt",
]

__version__ = "0.1.0"
