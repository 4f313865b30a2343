"""The periodic approximation built from an invariant disk, with bounds.

Each factor f_i induces a disk homeomorphism through the invariant surface:
fhat_i = Q_{i+1} o (Q_i|_surface)^{-1}.  The composed map fhat is conjugate
to the cyclic shift through Q_1, hence q-periodic up to the accuracy of the
surface representation.  Deviation from the underlying map is controlled by

    sup |fhat - f|  <=  (1 + K + ... + K^{m-1}) sqrt(A) sqrt(C(p, q)),

with C(p, q) the action gap of the singular circle, and the same chain with
mq powers bounds the rigidity defect sup |w - f^q(w)|.
"""

from dataclasses import dataclass, field
import json
import numpy as np
from scipy.interpolate import CubicSpline

__all__ = ["SurfaceInterpolant", "PeriodicApprox", "BoundsReport",
           "convergents", "chain_sum", "super_liouville_report",
           "profile_forward", "profile_power"]


def profile_forward(system, P, power=1):
    """The extended map (or its integer powers) for profile-only systems."""
    P = np.asarray(P, dtype=float)
    a, b = system.alpha, system.beta
    r = np.hypot(P[..., 0], P[..., 1])
    ang = power * 2.0 * np.pi * (a + np.clip(r - 1.0, 0.0, b - a))
    c, s = np.cos(ang), np.sin(ang)
    return np.stack([P[..., 0] * c - P[..., 1] * s,
                     P[..., 0] * s + P[..., 1] * c], axis=-1)


def profile_power(system, P, power):
    return profile_forward(system, P, power)


class SurfaceInterpolant:
    """Smooth interpolant of a disk mesh: periodic cubic in the angle,
    local cubic (4-point Lagrange) across the uniform radial samples."""

    def __init__(self, system, mesh):
        self.system = system
        self.mesh = mesh
        n_r, n_th = mesh.n_r, mesh.n_theta
        comps = mesh.states.reshape(n_r, n_th, -1)
        self.radii = np.concatenate([[0.0], mesh.rings])
        vals = np.concatenate([
            np.broadcast_to(mesh.center_state.reshape(1, 1, -1),
                            (1, n_th, comps.shape[-1])),
            comps], axis=0)
        th_ext = np.concatenate([mesh.thetas, [mesh.thetas[0] + 2 * np.pi]])
        v_ext = np.concatenate([vals, vals[:, :1]], axis=1)
        self._cs = CubicSpline(th_ext, v_ext, axis=1, bc_type="periodic")
        self._dr = self.radii[1] - self.radii[0]
        # chain angles give a good angular initial guess for Q_i inversion
        ang = system.chain_angles_at(system.circle_radius(mesh.p))
        self._gamma = np.concatenate([[0.0], np.cumsum(ang)])

    def state_at(self, rho, theta):
        """Surface states at polar parameters (vectorised)."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        cols = self._cs(np.mod(theta, 2 * np.pi))      # (n_r+1, n, comps)
        nr = len(self.radii)
        k = np.clip((rho / self._dr).astype(int), 0, nr - 2)
        k0 = np.clip(k - 1, 0, nr - 4)
        out = np.zeros((len(rho),) + cols.shape[2:])
        for off in range(4):
            xi = self.radii[k0 + off]
            w = np.ones(len(rho))
            for other in range(4):
                if other == off:
                    continue
                xo = self.radii[k0 + other]
                w *= (rho - xo) / (xi - xo)
            out += w[:, None] * cols[k0 + off, np.arange(len(rho))]
        return out.reshape(len(rho), self.system.mq, 2)

    def state_at_grid_point(self, w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        rho = np.hypot(w[:, 0], w[:, 1])
        th = np.arctan2(w[:, 1], w[:, 0])
        return self.state_at(rho, th)

    def inverse_q(self, i, w, iters=40, tol=1e-12):
        """Surface state z with Q_i(z) = w, by Newton in the (rho, theta) chart."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        n = len(w)
        rho = np.hypot(w[:, 0], w[:, 1])
        th = np.arctan2(w[:, 1], w[:, 0]) - self._gamma[(i - 1) % self.system.mq]
        R = self.system.circle_radius(self.mesh.p)
        eps = 1e-7
        for _ in range(iters):
            F = self.system.q_point(self.state_at(rho, th), i) - w
            if np.max(np.abs(F)) < tol:
                break
            Fr = (self.system.q_point(self.state_at(rho + eps, th), i) - w - F) / eps
            Ft = (self.system.q_point(self.state_at(rho, th + eps), i) - w - F) / eps
            det = Fr[:, 0] * Ft[:, 1] - Fr[:, 1] * Ft[:, 0]
            det = np.where(np.abs(det) < 1e-14, 1e-14, det)
            drho = (F[:, 0] * Ft[:, 1] - F[:, 1] * Ft[:, 0]) / det
            dth = (Fr[:, 0] * F[:, 1] - Fr[:, 1] * F[:, 0]) / det
            rho = np.clip(rho - np.clip(drho, -0.2 * R, 0.2 * R), 0.0, R)
            th = th - np.clip(dth, -0.5, 0.5)
        resid = np.max(np.abs(F))
        return self.state_at(rho, th), float(resid)


def chain_sum(K, n):
    """1 + K + ... + K^{n-1}."""
    if abs(K - 1.0) < 1e-14:
        return float(n)
    return float((K ** n - 1.0) / (K - 1.0))


@dataclass
class BoundsReport:
    p: int
    q: int
    K: float
    m: int
    A: float
    C: float
    bound_f: float
    measured_f: float
    bound_rigidity: float
    measured_rigidity: float
    period_defect: float
    rescaled_bound: float = np.nan
    rescaled_measured: float = np.nan
    inverse_measured: float = np.nan   # measured, reported, not asserted

    @property
    def ok(self):
        return (self.measured_f <= self.bound_f
                and self.measured_rigidity <= self.bound_rigidity)

    def to_json(self):
        return json.dumps({k: (None if isinstance(v, float) and np.isnan(v)
                               else v)
                           for k, v in self.__dict__.items()}, indent=1)


class PeriodicApprox:
    """fhat and its factor steps over a verified disk mesh."""

    def __init__(self, system, mesh):
        self.system = system
        self.mesh = mesh
        self.surf = SurfaceInterpolant(system, mesh)
        self.p = mesh.p
        self.q = system.q
        self.m = system.m
        self.K = system.K
        self.A = system.A
        self.C = system.action_gap(mesh.p)
        self.ratio = 1.0 + mesh.p / system.q - system.alpha  # homothety H

    # ----------------------------------------------------------- evaluators
    def fhat_step(self, i, w):
        """fhat_i = Q_{i+1} o (Q_i|_surface)^{-1}."""
        z, _ = self.surf.inverse_q(i, w)
        return self.system.q_point(z, (i % self.system.mq) + 1)

    def fhat(self, w):
        """fhat = fhat_m o ... o fhat_1, evaluated by threading one state."""
        z, _ = self.surf.inverse_q(1, w)
        return self.system.q_point(z, self.m + 1)

    def fhat_power(self, w, n):
        out = np.atleast_2d(np.asarray(w, dtype=float))
        for _ in range(n):
            out = self.fhat(out)
        return out

    def step_identity_defect(self, i, w):
        """|| fhat_i(w) - f_i(w) || vs || xi_{i+1}(z) || at the mesh preimage."""
        z, _ = self.surf.inverse_q(i, w)
        fi = self.system.dec.factors[(i - 1) % self.system.m]
        qi = self.system.q_point(z, i)
        lhs = np.linalg.norm(self.system.q_point(z, (i % self.system.mq) + 1)
                             - fi.forward(qi), axis=-1)
        xin = self.system.xi(z)
        j = i % self.system.mq          # slot of chain index i+1
        rhs = np.linalg.norm(xin[..., j, :], axis=-1)
        return lhs, rhs

    def period_check(self, grid_pts=None):
        """max over the grid of || fhat^q(w) - w ||."""
        if grid_pts is None:
            grid_pts = self.mesh.grid.reshape(-1, 2)
        out = self.fhat_power(grid_pts, self.q)
        return float(np.max(np.linalg.norm(out - grid_pts, axis=-1)))

    # -------------------------------------------------------------- bounds
    def error_bounds(self, grid_pts=None, check_inverse=True):
        if grid_pts is None:
            grid_pts = self.mesh.grid.reshape(-1, 2)
        bound_f = chain_sum(self.K, self.m) * np.sqrt(self.A) * np.sqrt(self.C)
        fh = self.fhat(grid_pts)
        fv = profile_forward(self.system, grid_pts)
        measured_f = float(np.max(np.linalg.norm(fh - fv, axis=-1)))
        bound_r = chain_sum(self.K, self.m * self.q) \
            * np.sqrt(self.A) * np.sqrt(self.C)
        fq = profile_forward(self.system, grid_pts, power=self.q)
        measured_r = float(np.max(np.linalg.norm(grid_pts - fq, axis=-1)))
        defect = self.period_check(grid_pts)
        inv_meas = np.nan
        if check_inverse:
            # measured, reported, not asserted: sup |fhat^{-1} - f^{-1}|
            z, _ = self.surf.inverse_q(self.m + 1, grid_pts)
            fh_inv = self.system.q_point(z, 1)
            fv_inv = profile_forward(self.system, grid_pts, power=-1)
            inv_meas = float(np.max(np.linalg.norm(fh_inv - fv_inv, axis=-1)))
        rep = BoundsReport(self.p, self.q, self.K, self.m, self.A, self.C,
                           bound_f, measured_f, bound_r, measured_r, defect,
                           inverse_measured=inv_meas)
        if measured_f > bound_f:
            raise AssertionError("measured deviation %.6g exceeds the bound %.6g"
                                 % (measured_f, bound_f))
        if measured_r > bound_r:
            raise AssertionError("measured rigidity %.6g exceeds the bound %.6g"
                                 % (measured_r, bound_r))
        return rep

    # ------------------------------------------------------------- rescaling
    def rescaled(self, u):
        """g-check = H^{-1} o fhat o H on the unit disk."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return self.fhat(u * self.ratio) / self.ratio

    def rescale_to_unit(self, grid_pts=None):
        """Rescaled map, its measured deviation on the unit disk, and the
        total bound with the homothety penalty (1 + K^m)(p/q - alpha)."""
        if grid_pts is None:
            grid_pts = self.mesh.grid.reshape(-1, 2) / self.ratio
        bound_f = chain_sum(self.K, self.m) * np.sqrt(self.A) * np.sqrt(self.C)
        extra = (1.0 + self.K ** self.m) * (self.p / self.q - self.system.alpha)
        bound = bound_f + extra
        gv = self.rescaled(grid_pts)
        fv = profile_forward(self.system, grid_pts)
        measured = float(np.max(np.linalg.norm(gv - fv, axis=-1)))
        if measured > bound:
            raise AssertionError("rescaled deviation %.6g exceeds %.6g"
                                 % (measured, bound))
        return {"bound": bound, "measured": measured,
                "homothety_ratio": self.ratio}


def convergents(x, n):
    """First n continued-fraction convergents (p_k, q_k) of x."""
    out = []
    a = np.floor(x)
    p0, q0 = 1, 0
    p1, q1 = int(a), 1
    out.append((p1, q1))
    frac = x - a
    for _ in range(n - 1):
        if frac < 1e-15:
            break
        x = 1.0 / frac
        a = np.floor(x)
        frac = x - a
        p0, p1 = p1, int(a) * p1 + p0
        q0, q1 = q1, int(a) * q1 + q0
        out.append((p1, q1))
    return out


def super_liouville_report(K, m, A, alpha, mu, q, target):
    """Whether the mq-chain bound falls below target when |q a - p| <= mu^q.

    Uses the closed-form gap with the Liouville smallness substituted:
    C <= pi mu^q (1 + mu^q / q + (mu^q / q)^2 / 3).
    """
    d = mu ** q / q
    C = np.pi * mu ** q * (1.0 + d + d * d / 3.0)
    bound = chain_sum(K, m * q) * np.sqrt(A) * np.sqrt(C)
    return {"q": q, "mu": mu, "C_bound": C, "chain_bound": float(bound),
            "target": target, "below_target": bool(bound < target)}
