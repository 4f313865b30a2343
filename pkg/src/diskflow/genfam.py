"""Finite-dimensional phase space and the gradient field of the family.

A state is a cyclic array of mq coordinate pairs, stored as an ndarray of
shape (..., mq, 2); slot j (0-based) carries the pair with chain index j+1
and belongs to factor j mod m.  The field is

    xi_j = ( y_j - g'_{j-1}(x_j, y_{j-1}),  x_j - g_j(x_{j+1}, y_j) ),

the gradient of the total action sum x_j y_j - h_{j-1}(x_j, y_{j-1}).
"""

import io
import numpy as np

from . import _kernels
from .maps import Decomposition, _ProfileFactor, ConfigurationError

__all__ = ["GeneratingSystem", "state_to_csv", "state_from_csv"]


class GeneratingSystem:
    """A decomposition repeated q times; immutable after construction."""

    def __init__(self, decomposition: Decomposition, q: int):
        if q < 2:
            raise ConfigurationError("need q >= 2")
        self.dec = decomposition
        self.q = q
        self.m = decomposition.m
        self.mq = self.m * q
        self.dim = 2 * self.mq
        self.alpha = decomposition.alpha
        self.beta = decomposition.beta
        self.K = decomposition.K
        self.A = float(np.sqrt(6.0 * self.K ** 2 + 3.0))
        self.admissible_p = [p for p in range(int(np.floor(q * self.alpha)) + 1,
                                              int(np.ceil(q * self.beta)))
                             if q * self.alpha < p < q * self.beta]
        if not self.admissible_p:
            raise ConfigurationError(
                "(q alpha, q beta) contains no integer; no admissible p")
        self._fast = decomposition.profile_only
        if self._fast:
            self.fparams = np.ascontiguousarray(
                np.stack([f.params for f in decomposition.factors]))
        # slot -> factor index tables for the generic path
        self._fac_of_slot = np.array([j % self.m for j in range(self.mq)])
        self._fac_of_prev = np.array([(j - 1) % self.m for j in range(self.mq)])

    # ------------------------------------------------------------------ field
    def _as_lanes(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-2:] != (self.mq, 2):
            raise ValueError("state must have shape (..., %d, 2)" % self.mq)
        lead = Z.shape[:-2]
        return np.ascontiguousarray(Z.reshape(-1, self.mq, 2)), lead

    def xi(self, Z):
        """The field; vectorised over any leading batch dimensions."""
        lanes, lead = self._as_lanes(Z)
        out = np.empty_like(lanes)
        if self._fast:
            _kernels.xi_into(lanes, self.fparams, out)
        else:
            self._xi_generic(lanes, out)
        return out.reshape(*lead, self.mq, 2)

    def _xi_generic(self, lanes, out):
        x = lanes[..., 0]
        y = lanes[..., 1]
        yprev = np.roll(y, 1, axis=-1)
        xnext = np.roll(x, -1, axis=-1)
        facs = self.dec.factors
        for k in range(self.m):
            slots = np.nonzero(self._fac_of_prev == k)[0]
            gp = facs[k].gprime(x[:, slots].ravel(), yprev[:, slots].ravel())
            out[:, slots, 0] = y[:, slots] - gp.reshape(-1, slots.size)
            slots = np.nonzero(self._fac_of_slot == k)[0]
            g = facs[k].g(xnext[:, slots].ravel(), y[:, slots].ravel())
            out[:, slots, 1] = x[:, slots] - g.reshape(-1, slots.size)

    def xi_norm(self, Z):
        v = self.xi(Z)
        return np.linalg.norm(v.reshape(*v.shape[:-2], self.dim), axis=-1)

    # ----------------------------------------------------------------- action
    def action(self, Z):
        """Total generating action, anchored so that action(0) = 0."""
        lanes, lead = self._as_lanes(Z)
        if self._fast:
            out = np.empty(lanes.shape[0])
            _kernels.action_total(lanes, self.fparams, out)
        else:
            x = lanes[..., 0]
            y = lanes[..., 1]
            yprev = np.roll(y, 1, axis=-1)
            out = np.einsum("lj,lj->l", x, y)
            facs = self.dec.factors
            for k in range(self.m):
                slots = np.nonzero(self._fac_of_prev == k)[0]
                h = facs[k].h(x[:, slots].ravel(), yprev[:, slots].ravel())
                out -= h.reshape(-1, slots.size).sum(axis=1)
        return out.reshape(lead) if lead else float(out[0])

    # ------------------------------------------------------------------ shift
    def shift(self, Z, k=1):
        """The q-periodic shift (phi z)_j = z_{j + k m}."""
        return np.roll(np.asarray(Z, dtype=float), -k * self.m, axis=-2)

    # ------------------------------------------------------------ projections
    def q_point(self, Z, i):
        """Q_i(z) = (g_i(x_{i+1}, y_i), y_i), 1-based chain index i."""
        Z = np.asarray(Z, dtype=float)
        j = (i - 1) % self.mq
        jn = (j + 1) % self.mq
        fac = self.dec.factors[j % self.m]
        X = Z[..., jn, 0]
        y = Z[..., j, 1]
        g = fac.g(X.ravel(), y.ravel()).reshape(X.shape)
        return np.stack([g, y], axis=-1)

    def qprime_point(self, Z, i):
        """Q'_i(z) = (x_i, g'_{i-1}(x_i, y_{i-1}))."""
        Z = np.asarray(Z, dtype=float)
        j = (i - 1) % self.mq
        jp = (j - 1) % self.mq
        fac = self.dec.factors[jp % self.m]
        x = Z[..., j, 0]
        yp = Z[..., jp, 1]
        gp = fac.gprime(x.ravel(), yp.ravel()).reshape(x.shape)
        return np.stack([x, gp], axis=-1)

    def q_all(self, Z):
        """All Q_i images, shape (..., mq, 2); index j is Q_{j+1}."""
        return np.stack([self.q_point(Z, i) for i in range(1, self.mq + 1)],
                        axis=-2)

    def qprime_all(self, Z):
        return np.stack([self.qprime_point(Z, i) for i in range(1, self.mq + 1)],
                        axis=-2)

    # --------------------------------------------------------- singular circles
    def circle_radius(self, p):
        return 1.0 + p / self.q - self.alpha

    def chain_angles_at(self, r):
        """Per-slot rotation angles of the factor chain on radius r."""
        base = self.dec.chain_angles(r)
        return np.array([base[j % self.m] for j in range(self.mq)])

    def sigma_point(self, p, theta0):
        """A singular state on Sigma_p whose Q_1 image has angle theta0.

        Built by pushing the point of angle theta0 on the invariant circle
        through the factor rotations; the result is singular up to the
        root-solve tolerance by circle equivariance.
        """
        if p not in self.admissible_p:
            raise ConfigurationError("p/q = %d/%d is not in (alpha, beta)"
                                     % (p, self.q))
        R = self.circle_radius(p)
        ang = self.chain_angles_at(R)
        gamma = np.concatenate([[0.0], np.cumsum(ang)[:-1]])
        th = np.atleast_1d(theta0)[..., None] + gamma
        out = R * np.stack([np.cos(th), np.sin(th)], axis=-1)
        return out[0] if np.ndim(theta0) == 0 else out

    def sigma_ring(self, p, n):
        """n states spread uniformly (in Q_1 angle) around Sigma_p."""
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return self.sigma_point(p, th)

    def action_gap(self, p):
        """Closed form pi (p - q a)(1 + (p/q - a) + (p/q - a)^2 / 3)."""
        d = p / self.q - self.alpha
        return np.pi * (p - self.q * self.alpha) * (1.0 + d + d * d / 3.0)

    def action_gap_quadrature(self, p, theta0=0.3, npanel_order=24):
        """Independent oracle: line integral of <xi(s z), z> ds from 0 to Sigma_p.

        The integrand is piecewise smooth in s; panels are split at every s
        where a mixed-pair radius of s*z crosses a profile kink, then each
        panel uses Gauss-Legendre of the given order.
        """
        z = self.sigma_point(p, theta0)
        x = z[:, 0]
        y = z[:, 1]
        radii = np.concatenate([
            np.hypot(np.roll(x, -1), y),      # args of g_j
            np.hypot(x, np.roll(y, 1)),       # args of g'_{j-1}
        ])
        kinks = set()
        for f in self.dec.factors:
            if hasattr(f, "params"):
                kinks.add(float(f.params[2]))
                kinks.add(float(f.params[3]))
        cuts = {1.0}
        for rk in kinks:
            for rr in radii:
                s = rk / rr
                if 1e-12 < s < 1.0 - 1e-12:
                    cuts.add(round(float(s), 15))
        nodes = np.sort(np.array([0.0] + sorted(cuts) + [1.0]))
        t, wts = np.polynomial.legendre.leggauss(npanel_order)
        total = 0.0
        zflat = z.reshape(-1)
        for a, b in zip(nodes[:-1], nodes[1:]):
            s = 0.5 * (b - a) * t + 0.5 * (a + b)
            Zs = s[:, None, None] * z[None]
            vals = self.xi(Zs).reshape(len(s), -1) @ zflat
            total += 0.5 * (b - a) * np.dot(wts, vals)
        return total

    # --------------------------------------------------------------- sampling
    def random_states(self, n, radius=1.4, rng=None):
        rng = np.random.default_rng(rng)
        return rng.uniform(-radius, radius, size=(n, self.mq, 2))

    def lipschitz_probe(self, pair_count=100000, radius=1.4, rng=None,
                        near_fraction=0.5):
        """Max sampled ratio ||xi(z)-xi(z')|| / ||z-z'||; bounded by A."""
        rng = np.random.default_rng(rng)
        Z1 = self.random_states(pair_count, radius, rng)
        n_near = int(near_fraction * pair_count)
        d = rng.normal(size=(n_near, self.mq, 2))
        d *= 1e-4 / np.linalg.norm(d.reshape(n_near, -1), axis=1)[:, None, None]
        Z2 = np.concatenate([Z1[:n_near] + d,
                             self.random_states(pair_count - n_near, radius, rng)])
        num = np.linalg.norm((self.xi(Z1) - self.xi(Z2)).reshape(pair_count, -1),
                             axis=1)
        den = np.linalg.norm((Z1 - Z2).reshape(pair_count, -1), axis=1)
        ok = den > 0
        return float(np.max(num[ok] / den[ok]))


def state_to_csv(Z):
    """Flat CSV row(s) x1,y1,...,x_mq,y_mq."""
    Z = np.asarray(Z, dtype=float)
    flat = Z.reshape(-1, Z.shape[-2] * 2) if Z.ndim > 2 else Z.reshape(1, -1)
    buf = io.StringIO()
    for row in flat:
        buf.write(",".join("%.17g" % v for v in row))
        buf.write("\n")
    return buf.getvalue()


def state_from_csv(text):
    rows = [np.array([float(v) for v in line.split(",")])
            for line in text.strip().splitlines()]
    arr = np.stack(rows)
    n = arr.shape[1] // 2
    out = arr.reshape(-1, n, 2)
    return out[0] if out.shape[0] == 1 else out
