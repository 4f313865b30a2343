"""Extension of a disk pseudo-rotation to the plane and its factorisation.

The extended map acts in polar coordinates as the inner map on the unit
disk, as the integrable twist (r, theta) -> (r, theta + 2 pi (alpha + r - 1))
on the annulus 1 <= r <= 1 + beta - alpha, and as the rigid rotation by
2 pi beta outside.  It is factored into area-preserving untwisted pieces
that each fix 0 and rotate every circle about the origin:

* ``TwistFactor``   -- the m'-th root of the twist part (identity on r <= 1),
* ``RotationFactor``-- a rigid rotation (used to split the inner rotation),
* ``PerturbationFactor`` -- an exact generating-function perturbation
  h(X, y) = X y + s S(X, y) with S compactly supported in the open unit disk.

Each factor exposes its generating data g, g', h in the mixed coordinates
(X, y) = (image abscissa, preimage ordinate), with h anchored at h(0,0) = 0
so that action differences are reproducible.
"""

import json
import numpy as np

from . import _kernels

TWO_PI = 2.0 * np.pi

__all__ = [
    "GluingError", "ConfigurationError", "CertificationError",
    "RotationFactor", "TwistFactor", "PerturbationFactor", "BumpPerturbation",
    "PlaneMap", "Decomposition", "KCertificate",
    "extend_pseudo_rotation", "decompose", "rotation_split",
    "factor_generating", "certify_K",
]


class GluingError(ValueError):
    """Inner map does not match the boundary rotation on the unit circle."""


class ConfigurationError(ValueError):
    """Rejected parameter configuration."""


class CertificationError(ValueError):
    """A factor failed one of the Lipschitz/untwistedness conditions."""

    def __init__(self, condition, value, bound, worst_point):
        self.condition = condition
        self.value = value
        self.bound = bound
        self.worst_point = worst_point
        super().__init__(
            "condition %s violated: %.6g > %.6g at %s"
            % (condition, value, bound, np.asarray(worst_point).tolist())
        )


def _rot(P, angle):
    x, y = P[..., 0], P[..., 1]
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([x * c - y * s, x * s + y * c], axis=-1)


class _ProfileFactor:
    """Circle-preserving map rotating radius r by angle(r) = base + ramp.

    angle(r) = base + slope * clip(r - r1, 0, r2 - r1).  Such maps are
    exactly area preserving and commute with each other.
    """

    kind = "profile"

    def __init__(self, base, slope, r1, r2):
        self.params = np.array([base, slope, r1, r2], dtype=float)
        self.K = None  # filled by certify_K

    # -- angle data -------------------------------------------------------
    def angle_at(self, r):
        b, s, r1, r2 = self.params
        return b + s * np.clip(np.asarray(r, dtype=float) - r1, 0.0, r2 - r1)

    # -- map --------------------------------------------------------------
    def forward(self, P):
        P = np.asarray(P, dtype=float)
        r = np.hypot(P[..., 0], P[..., 1])
        return _rot(P, self.angle_at(r))

    def inverse(self, P):
        P = np.asarray(P, dtype=float)
        r = np.hypot(P[..., 0], P[..., 1])
        return _rot(P, -self.angle_at(r))

    # -- generating data ---------------------------------------------------
    def g_gp_h(self, X, y):
        X = np.ascontiguousarray(np.asarray(X, dtype=float).ravel())
        yv = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
        g, gp, h = _kernels.generating_triple(X, yv, self.params)
        return g, gp, h

    def g(self, X, y):
        return self.g_gp_h(X, y)[0]

    def gprime(self, X, y):
        return self.g_gp_h(X, y)[1]

    def h(self, X, y):
        return self.g_gp_h(X, y)[2]


class RotationFactor(_ProfileFactor):
    """Rigid rotation by phi; |phi| < pi/2 keeps it untwisted."""

    kind = "rotation"

    def __init__(self, phi):
        if abs(np.cos(phi)) < 1e-12:
            raise ConfigurationError("rotation by %.4f is not untwisted" % phi)
        super().__init__(phi, 0.0, 1.0, 1.0)
        self.phi = phi

    def analytic_K(self):
        # section slope 1/cos, cross slope |tan|, the map itself an isometry
        return max(1.0, 1.0 / abs(np.cos(self.phi)), abs(np.tan(self.phi)))


class TwistFactor(_ProfileFactor):
    """m'-th root of the annulus twist: identity on r <= 1."""

    kind = "twist"

    def __init__(self, m_prime, alpha, beta):
        width = beta - alpha
        super().__init__(0.0, TWO_PI / m_prime, 1.0, 1.0 + width)
        self.m_prime = m_prime
        self.alpha = alpha
        self.beta = beta


class BumpPerturbation:
    """S(X, y) = s-free bump profile: b(rho^2) * X * y with b supported in r < r0."""

    def __init__(self, r0=0.9):
        self.r0 = r0

    def _b(self, u):
        # u = rho^2 / r0^2 ; smooth bump exp(1 - 1/(1-u)) on u < 1
        out = np.zeros_like(u)
        inside = u < 1.0
        ui = u[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui))
        return out

    def _db(self, u):
        out = np.zeros_like(u)
        inside = u < 1.0
        ui = u[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui)) * (-1.0 / (1.0 - ui) ** 2)
        return out

    def value(self, X, y):
        u = (X * X + y * y) / self.r0 ** 2
        return self._b(u) * X * y

    def d_dX(self, X, y):
        u = (X * X + y * y) / self.r0 ** 2
        return self._db(u) * (2 * X / self.r0 ** 2) * X * y + self._b(u) * y

    def d_dy(self, X, y):
        u = (X * X + y * y) / self.r0 ** 2
        return self._db(u) * (2 * y / self.r0 ** 2) * X * y + self._b(u) * X


class PerturbationFactor:
    """Exact area-preserving factor from h(X, y) = X y + s S(X, y).

    The forward map solves x = X + s dS/dy(X, y) for X by contraction,
    so the factor is the identity wherever S vanishes (outside the unit
    disk in particular).
    """

    kind = "perturbation"

    def __init__(self, S, s):
        self.S = S
        self.s = float(s)
        self.K = None

    def angle_at(self, r):
        r = np.asarray(r, dtype=float)
        return np.zeros_like(r)  # identity on every circle r >= 1

    def g(self, X, y):
        return X + self.s * self.S.d_dy(X, y)

    def gprime(self, X, y):
        return y + self.s * self.S.d_dX(X, y)

    def h(self, X, y):
        return X * y + self.s * self.S.value(X, y)

    def g_gp_h(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.g(X, y), self.gprime(X, y), self.h(X, y)

    def forward(self, P):
        P = np.asarray(P, dtype=float)
        x, y = P[..., 0], P[..., 1]
        X = x.copy()
        for _ in range(200):
            Xn = x - self.s * self.S.d_dy(X, y)
            if np.max(np.abs(Xn - X)) < 1e-15:
                X = Xn
                break
            X = Xn
        return np.stack([X, self.gprime(X, y)], axis=-1)

    def inverse(self, P):
        P = np.asarray(P, dtype=float)
        X, Y = P[..., 0], P[..., 1]
        y = Y.copy()
        for _ in range(200):
            yn = Y - self.s * self.S.d_dX(X, y)
            if np.max(np.abs(yn - y)) < 1e-15:
                y = yn
                break
            y = yn
        return np.stack([self.g(X, y), y], axis=-1)


class PlaneMap:
    """Extended plane map with metadata for the twist annulus."""

    def __init__(self, forward, inverse, alpha, beta, inner=None, profile_only=True):
        self.forward = forward
        self.inverse = inverse
        self.alpha = alpha
        self.beta = beta
        self.inner = inner
        self.profile_only = profile_only
        self.annulus = (1.0, 1.0 + beta - alpha)

    def circle_radius(self, p, q):
        """Radius of the invariant circle with rotation number p/q."""
        return 1.0 + p / q - self.alpha

    def rotation_angle_at(self, r):
        """Rotation angle of the profile part (valid for r >= 1 always)."""
        a, b = self.alpha, self.beta
        return TWO_PI * (a + np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, b - a))


def extend_pseudo_rotation(inner, alpha, beta, check_points=256, tol=1e-9):
    """Extend a disk map to the plane: twist annulus then rigid rotation.

    ``inner`` is None for the rigid rotation by 2 pi alpha, or a pair of
    callables (forward, inverse) defined on the closed unit disk that fix 0
    and agree with the rotation by 2 pi alpha on the unit circle.
    """
    if not beta > alpha:
        raise ConfigurationError("need beta > alpha")
    if np.floor(alpha) + 1.0 < beta:
        raise ConfigurationError("(alpha, beta) must not contain an integer")

    if inner is None:
        def fwd(P):
            P = np.asarray(P, dtype=float)
            r = np.hypot(P[..., 0], P[..., 1])
            ang = TWO_PI * (alpha + np.clip(r - 1.0, 0.0, beta - alpha))
            return _rot(P, ang)

        def inv(P):
            P = np.asarray(P, dtype=float)
            r = np.hypot(P[..., 0], P[..., 1])
            ang = TWO_PI * (alpha + np.clip(r - 1.0, 0.0, beta - alpha))
            return _rot(P, -ang)

        return PlaneMap(fwd, inv, alpha, beta, inner=None, profile_only=True)

    inner_fwd, inner_inv = inner
    th = np.linspace(0.0, TWO_PI, check_points, endpoint=False)
    ring = np.stack([np.cos(th), np.sin(th)], axis=-1)
    err = np.max(np.linalg.norm(inner_fwd(ring) - _rot(ring, TWO_PI * alpha), axis=-1))
    if err > tol:
        raise GluingError("inner map differs from the boundary rotation by %.3g" % err)
    if np.max(np.abs(inner_fwd(np.zeros(2)))) > tol:
        raise GluingError("inner map must fix the origin")

    def fwd(P):
        P = np.asarray(P, dtype=float)
        r = np.hypot(P[..., 0], P[..., 1])
        ang = TWO_PI * (alpha + np.clip(r - 1.0, 0.0, beta - alpha))
        out = _rot(P, ang)
        mask = r <= 1.0
        if np.any(mask):
            out = np.where(mask[..., None], inner_fwd(P), out)
        return out

    def inv(P):
        P = np.asarray(P, dtype=float)
        r = np.hypot(P[..., 0], P[..., 1])
        ang = TWO_PI * (alpha + np.clip(r - 1.0, 0.0, beta - alpha))
        out = _rot(P, -ang)
        mask = r <= 1.0
        if np.any(mask):
            out = np.where(mask[..., None], inner_inv(P), out)
        return out

    return PlaneMap(fwd, inv, alpha, beta, inner=inner, profile_only=False)


class KCertificate:
    def __init__(self, K, conditions):
        self.K = K
        self.conditions = conditions  # name -> (value, worst point)

    def __repr__(self):
        parts = ", ".join("%s=%.4f" % (k, v[0]) for k, v in self.conditions.items())
        return "KCertificate(K=%.4f; %s)" % (self.K, parts)


def certify_K(factor, sample_count=10000, rng=None, domain_radius=2.0,
              K_target=None):
    """Sampled estimate of the Lipschitz constant of a factor.

    Estimates, by close-pair difference quotients, the bi-Lipschitz constant
    of the map itself (condition ii-f), of the sections X -> g(X, y) and
    y -> g'(X, y) (condition ii-section), and the Lipschitz constants of the
    cross maps y -> g(X, y), X -> g'(X, y) (condition iii-cross).  Samples
    are refined near the gluing circles where the map is only piecewise C^1.
    The returned value is a lower bound for the true constant; if K_target
    is given, the first violated condition raises CertificationError.
    """
    rng = np.random.default_rng(rng)
    n = sample_count
    eps = 1e-6

    # sample points: bulk + refinement near the profile kinks
    r_bulk = np.sqrt(rng.uniform(0.0, 1.0, n)) * domain_radius
    kinks = [1.0]
    if hasattr(factor, "params"):
        kinks = [factor.params[2], factor.params[3]]
    r_ref = np.concatenate([
        np.abs(k + rng.normal(scale=0.02, size=n // 2)) for k in kinks
    ])
    r = np.concatenate([r_bulk, r_ref])
    th = rng.uniform(0.0, TWO_PI, r.shape[0])
    P = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    d = rng.normal(size=P.shape)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)

    conditions = {}

    def record(name, ratios, pts, bound=None):
        i = int(np.argmax(ratios))
        conditions[name] = (float(ratios[i]), pts[i])
        if bound is not None and ratios[i] > bound:
            raise CertificationError(name, float(ratios[i]), bound, pts[i])

    F1 = factor.forward(P + eps * d)
    F2 = factor.forward(P - eps * d)
    stretch = np.linalg.norm(F1 - F2, axis=-1) / (2 * eps)
    if np.min(stretch) <= 0:
        raise CertificationError("i-untwisted", 0.0, 0.0, P[np.argmin(stretch)])
    record("ii-f", np.maximum(stretch, 1.0 / stretch), P, K_target)

    # section/cross constants in mixed coordinates
    X = P[:, 0]
    y = P[:, 1]
    gXp, gpXp, _ = factor.g_gp_h(X + eps, y)
    gXm, gpXm, _ = factor.g_gp_h(X - eps, y)
    gyp, gpyp, _ = factor.g_gp_h(X, y + eps)
    gym, gpym, _ = factor.g_gp_h(X, y - eps)
    dg_dX = (gXp - gXm) / (2 * eps)
    dgp_dy = (gpyp - gpym) / (2 * eps)
    if np.min(dg_dX) <= 0 or np.min(dgp_dy) <= 0:
        bad = P[int(np.argmin(np.minimum(dg_dX, dgp_dy)))]
        raise CertificationError("i-untwisted", float(min(dg_dX.min(), dgp_dy.min())),
                                 0.0, bad)
    sect = np.maximum.reduce([dg_dX, 1.0 / dg_dX, dgp_dy, 1.0 / dgp_dy])
    record("ii-section", sect, P, K_target)

    dg_dy = np.abs(gyp - gym) / (2 * eps)
    dgp_dX = np.abs(gpXp - gpXm) / (2 * eps)
    record("iii-cross", np.maximum(dg_dy, dgp_dX), P, K_target)

    K = max(1.0, max(v[0] for v in conditions.values()))
    factor.K = K
    return KCertificate(K, conditions)


def factor_generating(factor, X, y):
    """The generating data (g, g', h) of a certified untwisted factor."""
    g, gp, h = factor.g_gp_h(np.atleast_1d(X), np.atleast_1d(y))
    if np.isscalar(X) or np.ndim(X) == 0:
        return float(g[0]), float(gp[0]), float(h[0])
    return g, gp, h


class Decomposition:
    """Ordered factors whose composition reproduces the extended map."""

    def __init__(self, factors, alpha, beta, m_prime, K):
        self.factors = list(factors)
        self.alpha = alpha
        self.beta = beta
        self.m_prime = m_prime
        self.m_dprime = len(self.factors) - m_prime
        self.K = K

    @property
    def m(self):
        return len(self.factors)

    @property
    def profile_only(self):
        return all(isinstance(f, _ProfileFactor) for f in self.factors)

    def compose(self, P):
        out = np.asarray(P, dtype=float)
        for f in self.factors:
            out = f.forward(out)
        return out

    def chain_angles(self, r):
        """Rotation angle of each factor on the circle of radius r >= 1."""
        return np.array([f.angle_at(np.float64(r)) for f in self.factors])

    def to_json(self):
        items = []
        for f in self.factors:
            if isinstance(f, TwistFactor):
                items.append({"kind": "twist", "m_prime": f.m_prime,
                              "alpha": f.alpha, "beta": f.beta, "K": f.K})
            elif isinstance(f, RotationFactor):
                items.append({"kind": "rotation", "phi": f.phi, "K": f.K})
            elif isinstance(f, PerturbationFactor):
                items.append({"kind": "perturbation", "s": f.s,
                              "r0": getattr(f.S, "r0", None), "K": f.K})
            else:
                raise TypeError("unknown factor kind %r" % f)
        return json.dumps({"alpha": self.alpha, "beta": self.beta,
                           "m_prime": self.m_prime, "K": self.K,
                           "factors": items}, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        factors = []
        for item in doc["factors"]:
            if item["kind"] == "twist":
                f = TwistFactor(item["m_prime"], item["alpha"], item["beta"])
            elif item["kind"] == "rotation":
                f = RotationFactor(item["phi"])
            elif item["kind"] == "perturbation":
                f = PerturbationFactor(BumpPerturbation(item["r0"]), item["s"])
            else:
                raise ValueError("unknown factor kind %r" % item["kind"])
            f.K = item.get("K")
            factors.append(f)
        return cls(factors, doc["alpha"], doc["beta"], doc["m_prime"], doc["K"])


def rotation_split(alpha, m_dprime):
    """The inner rotation by 2 pi alpha as m'' equal rotation factors."""
    return [RotationFactor(TWO_PI * alpha / m_dprime) for _ in range(m_dprime)]


def decompose(plane_map, K_target, m_prime, inner_factors, sample_count=10000,
              check_points=1000, check_tol=1e-9, rng=None):
    """Factor the extended map into certified untwisted pieces.

    The twist part is split into m' equal roots; ``inner_factors`` must
    compose to the inner map (rotation splits, possibly with perturbation
    factors).  Every factor is certified against K_target and the full
    composition is compared against the map on random points of the
    radius-2 disk.
    """
    rng = np.random.default_rng(rng)
    factors = [TwistFactor(m_prime, plane_map.alpha, plane_map.beta)
               for _ in range(m_prime)]
    factors += list(inner_factors)
    for f in factors:
        certify_K(f, sample_count=sample_count, rng=rng, K_target=K_target)

    dec = Decomposition(factors, plane_map.alpha, plane_map.beta, m_prime,
                        K=max(f.K for f in factors))

    r = np.sqrt(rng.uniform(0.0, 1.0, check_points)) * 2.0
    th = rng.uniform(0.0, TWO_PI, check_points)
    P = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    err = np.max(np.linalg.norm(dec.compose(P) - plane_map.forward(P), axis=-1))
    if err > check_tol:
        raise CertificationError("composition", err, check_tol,
                                 P[int(np.argmax(np.linalg.norm(
                                     dec.compose(P) - plane_map.forward(P), axis=-1)))])
    dec.composition_error = err
    return dec
