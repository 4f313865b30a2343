"""General tridiagonal monotonically symmetric fields and sign prediction.

A field on cyclic real sequences of period r has components depending only
on the left/middle/right coordinates, the two neighbour dependencies are
strictly monotone, and consecutive cross-monotonicities share a sign
sigma_i.  The lap-number-style function

    Lcal(x) = sum_i sigma_i sign(x_i) sign(x_{i+1})

extends over single vanishing coordinates (the set U) and can only jump
upward across U-exits along the flow.  Everything in this module uses the
sup norm; the field is 3K Lipschitz in it.

The sign-prediction table (delta, eps0, t0, sequences a_k, b_k, polynomials
P_k, Q_k) quantifies the mechanism: a coordinate block pinched between two
large entries propagates definite signs outward-in, with lower bounds
P_k(eps, |t|) ||x - x'|| and envelopes Q_k(eps, |t|) ||x - x'||.  The
recurrences here divide by k + 1 (so that P_k(0, X2) = a_k X2^k holds) and
t0 = log(1 + delta/2) / (3K) (so that the zeroth deviation bound
(e^{3Kt} - 1)||x - x'|| stays below (delta/2)||x - x'||).
"""

from dataclasses import dataclass, field
import json
import numpy as np

__all__ = [
    "TridiagField", "random_fields", "interleave", "lcal", "u_membership",
    "LemmaSixTable", "build_table", "polyval2", "predict_signs",
    "SignPrediction", "admissible_pair", "verify_prediction",
    "lcal_crossings",
]


class TridiagField:
    """Batch of cyclic tridiagonal fields zeta_i = s_{i-1} u_i(x_{i-1})
    + v_i(x_i) + s_i w_i(x_{i+1}) with tanh-saturated monotone pieces."""

    def __init__(self, sigma, lam_u, kap_u, lam_w, kap_w, c_v, K):
        self.sigma = np.asarray(sigma, dtype=float)      # (B, r)
        self.lam_u = np.asarray(lam_u, dtype=float)
        self.kap_u = np.asarray(kap_u, dtype=float)
        self.lam_w = np.asarray(lam_w, dtype=float)
        self.kap_w = np.asarray(kap_w, dtype=float)
        self.c_v = np.asarray(c_v, dtype=float)
        self.K = float(K)
        self.r = self.sigma.shape[-1]

    def zeta(self, X):
        """Field values; X has shape (B, r) (or broadcastable)."""
        X = np.asarray(X, dtype=float)
        xm = np.roll(X, 1, axis=-1)
        xp = np.roll(X, -1, axis=-1)
        sm = np.roll(self.sigma, 1, axis=-1)
        u = self.lam_u * xm + self.kap_u * np.tanh(xm)
        w = self.lam_w * xp + self.kap_w * np.tanh(xp)
        v = self.c_v * np.tanh(X)
        return sm * u + v + self.sigma * w

    def flow(self, X, T, h=None):
        X = np.asarray(X, dtype=float).copy()
        if h is None:
            h = 0.05 / (3.0 * self.K)
        n = max(1, int(round(abs(T) / h)))
        hh = T / n
        for _ in range(n):
            k1 = self.zeta(X)
            k2 = self.zeta(X + 0.5 * hh * k1)
            k3 = self.zeta(X + 0.5 * hh * k2)
            k4 = self.zeta(X + hh * k3)
            X = X + hh / 6.0 * (k1 + 2 * (k2 + k3) + k4)
        return X

    def certify(self, n=2000, rng=0):
        """Sampled monotonicity signature and section/middle slopes."""
        rng = np.random.default_rng(rng)
        B = self.sigma.shape[0]
        X = rng.uniform(-2, 2, size=(n, B, self.r))
        eps = 1e-6
        em = np.zeros_like(X)
        out = {}
        du = self.lam_u + self.kap_u / np.cosh(X) ** 2 * 0  # bounds below
        slopes_u = (self.lam_u[None], (self.lam_u + self.kap_u)[None])
        slopes_w = (self.lam_w[None], (self.lam_w + self.kap_w)[None])
        ok = (slopes_u[0] >= 1.0 / self.K - 1e-12) \
            & (slopes_u[1] <= self.K + 1e-12) \
            & (slopes_w[0] >= 1.0 / self.K - 1e-12) \
            & (slopes_w[1] <= self.K + 1e-12) \
            & (np.abs(self.c_v)[None] <= self.K + 1e-12)
        out["slopes_ok"] = bool(ok.all())
        return out


def random_fields(batch, r, K, rng=0):
    """Random certified instances with mixed monotonicity signatures."""
    rng = np.random.default_rng(rng)
    sigma = rng.choice([-1.0, 1.0], size=(batch, r))
    lo, hi = 1.0 / K, K
    lam_u = rng.uniform(lo, 0.5 * (lo + hi), size=(batch, r))
    kap_u = rng.uniform(0.0, 1.0, size=(batch, r)) * (hi - lam_u)
    lam_w = rng.uniform(lo, 0.5 * (lo + hi), size=(batch, r))
    kap_w = rng.uniform(0.0, 1.0, size=(batch, r)) * (hi - lam_w)
    c_v = rng.uniform(-K, K, size=(batch, r))
    return TridiagField(sigma, lam_u, kap_u, lam_w, kap_w, c_v, K)


class _InterleavedXi:
    """The gradient field of a generating system as a tridiagonal field.

    Coordinates in the order (x_1, y_1, x_2, y_2, ...): component 2j is
    increasing in its right neighbour y_{j+1} (sigma = +1 on (x, y) pairs)
    and component 2j+1 decreasing in x_{j+2} (sigma = -1 on (y, x) pairs).
    """

    def __init__(self, system):
        self.system = system
        self.r = 2 * system.mq
        self.K = system.K
        sig = np.empty(self.r)
        sig[0::2] = 1.0
        sig[1::2] = -1.0
        self.sigma = sig[None, :]

    def zeta(self, X):
        X = np.asarray(X, dtype=float)
        lead = X.shape[:-1]
        Z = X.reshape(*lead, self.system.mq, 2)
        return self.system.xi(Z).reshape(*lead, self.r)

    def flow(self, X, T, h=None):
        X = np.asarray(X, dtype=float)
        lead = X.shape[:-1]
        from .flow import StepPolicy, integrate
        rec = integrate(self.system, X.reshape(*lead, self.system.mq, 2), T,
                        StepPolicy())
        return rec.z_end.reshape(*lead, self.r)


def interleave(system):
    """View the gradient field as a general tridiagonal field (r = 2 mq)."""
    return _InterleavedXi(system)


def u_membership(x, sigma, tol=1e-10):
    """x in U: zeros only where sigma_{i-1} sigma_i x_{i-1} x_{i+1} < 0."""
    x = np.asarray(x, dtype=float)
    sigma = np.broadcast_to(sigma, x.shape)
    scale = np.max(np.abs(x), axis=-1, keepdims=True)
    zero = np.abs(x) < tol * scale
    sm = np.roll(sigma, 1, axis=-1)
    prod = np.roll(x, 1, axis=-1) * np.roll(x, -1, axis=-1)
    cond = sm * sigma * prod < 0
    zprev = np.roll(zero, 1, axis=-1)
    znext = np.roll(zero, -1, axis=-1)
    ok = ~zero | (cond & ~zprev & ~znext)
    return ok.all(axis=-1)


def lcal(x, sigma, tol=1e-10):
    """Lcal(x) = sum_i sigma_i sign(x_i) sign(x_{i+1}) on U (cyclic sum).

    Integer with the parity of r; at a single admissible zero the two
    adjacent terms cancel whatever sign is assigned.
    """
    x = np.asarray(x, dtype=float)
    sigma = np.broadcast_to(sigma, x.shape)
    if not np.all(u_membership(x, sigma, tol)):
        raise ValueError("x is not in U; Lcal undefined")
    scale = np.max(np.abs(x), axis=-1, keepdims=True)
    s = np.where(np.abs(x) < tol * scale, 1.0, np.sign(x))
    val = np.sum(sigma * s * np.roll(s, -1, axis=-1), axis=-1)
    out = np.rint(val).astype(int)
    return out if out.ndim else int(out)


# ------------------------------------------------------------ the sign table

@dataclass
class LemmaSixTable:
    K: float
    l: int
    mu: float
    delta: float
    eps0: float
    t0: float
    a: np.ndarray            # a_0 .. a_{floor(l/2)+1}
    b: np.ndarray
    P: list                  # coefficient matrices, P[k][i, j] X1^i X2^j
    Q: list

    def to_json(self):
        return json.dumps({
            "K": self.K, "l": self.l, "mu": self.mu, "delta": self.delta,
            "eps0": self.eps0, "t0": self.t0,
            "a": self.a.tolist(), "b": self.b.tolist(),
            "P": [m.tolist() for m in self.P],
            "Q": [m.tolist() for m in self.Q],
        }, indent=1)


def _antider_x2(M):
    """X2-antiderivative of a coefficient matrix (zero constant slice)."""
    out = np.zeros((M.shape[0], M.shape[1] + 1))
    out[:, 1:] = M / np.arange(1, M.shape[1] + 1)[None, :]
    return out


def polyval2(M, x1, x2):
    """Evaluate a dense (X1, X2) coefficient matrix."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    out = np.zeros(np.broadcast(x1, x2).shape)
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            if M[i, j] != 0.0:
                out = out + M[i, j] * x1 ** i * x2 ** j
    return out


def build_table(K, l, mu, max_halvings=60):
    """Constants, sequences and polynomials of the sign-prediction bound.

    delta starts at mu and halves until every a_k with k <= floor(l/2) + 1
    is positive; the polynomial recurrences integrate in X2 with boundary
    slices P_{k+1}(X1, 0) = -X1 and Q_{k+1}(X1, 0) = X1.
    """
    if K < 1.0 or l < 1 or not (0.0 < mu <= 1.0):
        raise ValueError("need K >= 1, l >= 1, mu in (0, 1]")
    kmax = l // 2 + 1
    delta = mu
    for _ in range(max_halvings):
        a = np.empty(kmax + 1)
        b = np.empty(kmax + 1)
        a[0] = mu / 2.0
        b[0] = delta
        for k in range(kmax):
            a[k + 1] = (a[k] / K - 2.0 * K * b[k]) / (k + 1)
            b[k + 1] = 3.0 * K * b[k] / (k + 1)
        if np.all(a[:kmax + 1] > 0.0):
            break
        delta *= 0.5
    else:
        raise ValueError("no positive-delta table after %d halvings"
                         % max_halvings)
    eps0 = delta / 2.0
    t0 = np.log1p(delta / 2.0) / (3.0 * K)

    P = [np.array([[mu / 2.0]])]
    Q = [np.array([[delta]])]
    for k in range(kmax):
        body = _antider_x2(_pad_like(P[k] / K, Q[k], -2.0 * K))
        body[1, 0] += -1.0                      # P_{k+1}(X1, 0) = -X1
        P.append(body)
        qb = _antider_x2(3.0 * K * Q[k])
        qb = _grow_rows(qb, 2)
        qb[1, 0] += 1.0                         # Q_{k+1}(X1, 0) = X1
        Q.append(qb)
    return LemmaSixTable(K, l, mu, delta, eps0, t0, a, b, P, Q)


def _pad_like(A, B, cB):
    """A + cB * B with shape union (for the polynomial bodies)."""
    rows = max(A.shape[0], B.shape[0], 2)
    cols = max(A.shape[1], B.shape[1])
    out = np.zeros((rows, cols))
    out[:A.shape[0], :A.shape[1]] += A
    out[:B.shape[0], :B.shape[1]] += cB * B
    return out


def _grow_rows(M, rows):
    if M.shape[0] >= rows:
        return M
    out = np.zeros((rows, M.shape[1]))
    out[:M.shape[0]] = M
    return out


# -------------------------------------------------------------- predictions

@dataclass
class SignPrediction:
    i: int
    l: int
    t: float
    indices: np.ndarray        # coordinate indices with predicted signs
    signs: np.ndarray          # predicted sign of x_j^t - x'_j^t
    lower_bounds: np.ndarray   # >= bound * ||x - x'||
    mid_indices: np.ndarray    # interior indices with Q envelopes per k
    mid_bounds: np.ndarray
    midpoint_predicted: bool   # odd-l centre covered by the 2 P_m case
    exceptional: bool          # odd-l centre with mismatched products


def _sigma_products(sigma, base_sign, i, k):
    out = base_sign
    for j in range(k):
        out *= sigma[(i + j) % len(sigma)]
    return out


def admissible_pair(field, i, l, mu, eps, rng=0, scale=1.0):
    """Engineer (x, x') matching the pinched-block hypothesis at index i.

    The sup norm of the difference is pinned to `scale` at an index outside
    the pinched block (or at an anchor when the block fills the period)."""
    rng = np.random.default_rng(rng)
    r = field.r
    if l + 2 > r:
        raise ValueError("block does not fit the period")
    block = {(i + j) % r for j in range(l + 2)}
    d = rng.uniform(-1.0, 1.0, size=r)
    d[i % r] = rng.choice([-1.0, 1.0]) * rng.uniform(mu, 1.0)
    d[(i + l + 1) % r] = rng.choice([-1.0, 1.0]) * rng.uniform(mu, 1.0)
    for j in range(1, l + 1):
        d[(i + j) % r] = rng.uniform(-eps, eps) if eps > 0 else 0.0
    outside = [j for j in range(r) if j not in block]
    if outside:
        d[rng.choice(outside)] = rng.choice([-1.0, 1.0])
    else:
        d[i % r] = np.sign(d[i % r])
    d = np.clip(d, -1.0, 1.0) * scale
    x = rng.uniform(-1.0, 1.0, size=r)
    return x, x - d


def predict_signs(field, x, xp, i, l, eps, mu, t, table):
    """Predicted difference signs / bounds at time t for a pinched block.

    Positions i + k and i + l + 1 - k (k <= floor(l/2)) get the signs
    sigma'(t) with lower bounds P_k(eps, |t|) ||x - x'||; strictly interior
    positions get |difference| <= Q_k envelopes.  For odd l = 2m - 1 the
    centre is predicted (with the doubled bound 2 P_m) exactly when the two
    sigma' products agree; otherwise it is the documented exceptional case.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    xp = np.asarray(xp, dtype=float).reshape(-1)
    sigma = np.asarray(field.sigma, dtype=float).reshape(-1)
    r = field.r
    d = x - xp
    nrm = np.max(np.abs(d))
    if abs(t) > table.t0 or t == 0.0:
        raise ValueError("need 0 < |t| <= t0 = %.6g" % table.t0)
    if eps > table.eps0:
        raise ValueError("eps exceeds eps0 = %.6g" % table.eps0)
    # hypothesis block
    if abs(d[i % r]) < mu * nrm - 1e-15:
        raise ValueError("hypothesis fails at index %d (left anchor)" % i)
    if abs(d[(i + l + 1) % r]) < mu * nrm - 1e-15:
        raise ValueError("hypothesis fails at index %d (right anchor)"
                         % ((i + l + 1) % r))
    for j in range(1, l + 1):
        if abs(d[(i + j) % r]) > eps * nrm + 1e-15:
            raise ValueError("hypothesis fails at index %d (block interior)"
                             % ((i + j) % r))

    kmax = l // 2
    st = 1.0 if t > 0 else -1.0
    idx, signs, lbs = [], [], []
    sgn_left = np.sign(d[i % r])
    sgn_right = np.sign(d[(i + l + 1) % r])
    for k in range(kmax + 1):
        lb = polyval2(table.P[k], eps, abs(t)) * nrm
        sp_left = _sigma_products(sigma, sgn_left, i, k)
        idx.append((i + k) % r)
        signs.append(sp_left * st ** k)
        lbs.append(lb)
        # mirrored side: sigma'_{i+l+1-k} = sign(right) sigma_{i+l+1-k} ... sigma_{i+l}
        sp_right = sgn_right
        for j in range(l + 1 - k, l + 1):
            sp_right *= sigma[(i + j) % r]
        idx.append((i + l + 1 - k) % r)
        signs.append(sp_right * st ** k)
        lbs.append(lb)
    mid_idx, mid_b = [], []
    for k in range(kmax + 1):
        qb = polyval2(table.Q[k], eps, abs(t)) * nrm
        for j in range(i + k + 1, i + l + 1 - k):
            mid_idx.append(j % r)
            mid_b.append(qb)

    midpoint_predicted = False
    exceptional = False
    if l % 2 == 1:
        m = (l + 1) // 2
        spl = _sigma_products(sigma, sgn_left, i, m - 1) * sigma[(i + m - 1) % r]
        spr = sgn_right
        for j in range(m + 1, l + 1):
            spr *= sigma[(i + j) % r]
        spr *= sigma[(i + m) % r]
        if spl == spr:
            midpoint_predicted = True
            lb = 2.0 * polyval2(table.P[m], eps, abs(t)) * nrm \
                if len(table.P) > m else 0.0
            idx.append((i + m) % r)
            signs.append(spl * st ** m)
            lbs.append(lb)
        else:
            exceptional = True

    return SignPrediction(i, l, t, np.array(idx), np.array(signs),
                          np.array(lbs), np.array(mid_idx, dtype=int),
                          np.array(mid_b), midpoint_predicted, exceptional)


def verify_prediction(field, x, xp, pred, h=None, slack=1e-9):
    """Integrate the pair to pred.t and check the signed lower bounds and
    envelopes; returns a dict of margins (all nonnegative when verified)."""
    sh = field.flow(np.stack([np.atleast_2d(x), np.atleast_2d(xp)]), pred.t, h)
    dt = (sh[0] - sh[1]).reshape(-1)
    nrm = np.max(np.abs(np.asarray(x) - np.asarray(xp)))
    tolerance = slack * nrm
    margins = pred.signs * dt[pred.indices] - pred.lower_bounds
    env = pred.mid_bounds - np.abs(dt[pred.mid_indices]) \
        if len(pred.mid_indices) else np.array([])
    return {
        "sign_margins": margins,
        "envelope_margins": env,
        "ok": bool((margins >= -tolerance).all()
                   and (env >= -tolerance).all() if env.size else
                   (margins >= -tolerance).all()),
    }


def lcal_crossings(field, x, xp, horizon, h=None, tol=1e-10):
    """U-crossing monitor for a pair under a general tridiagonal field.

    Returns (t, coordinate, L_before, L_after, genuine) tuples; the value
    can only increase across genuine exits (zero jumps belong to the odd
    l = 1 exceptional configuration, which coincides with staying in U).
    """
    sigma = np.asarray(field.sigma, dtype=float).reshape(-1)
    if h is None:
        h = 0.05 / (3.0 * field.K)
    n = max(1, int(np.ceil(horizon / h)))
    out = []
    xa = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    xb = np.atleast_2d(np.asarray(xp, dtype=float)).copy()
    t = 0.0
    d_prev = (xa - xb)[0]
    for _ in range(n):
        xa2 = field.flow(xa, h)
        xb2 = field.flow(xb, h)
        d_new = (xa2 - xb2)[0]
        flips = np.nonzero(d_prev * d_new < 0)[0]
        for c in flips:
            lo, hi = 0.0, h
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                dm = (field.flow(xa, mid) - field.flow(xb, mid))[0, c]
                if dm * d_prev[c] >= 0:
                    lo = mid
                else:
                    hi = mid
            delta = max(4 * (hi - lo), 1e-9)
            db = (field.flow(xa, max(lo - delta, 0.0))
                  - field.flow(xb, max(lo - delta, 0.0)))[0]
            da = (field.flow(xa, min(hi + delta, h))
                  - field.flow(xb, min(hi + delta, h)))[0]
            dc = (field.flow(xa, 0.5 * (lo + hi))
                  - field.flow(xb, 0.5 * (lo + hi)))[0]
            sm = sigma[(c - 1) % field.r] * sigma[c % field.r]
            genuine = sm * dc[(c - 1) % field.r] * dc[(c + 1) % field.r] >= 0
            if u_membership(db, sigma, tol) and u_membership(da, sigma, tol):
                out.append((t + 0.5 * (lo + hi), int(c),
                            lcal(db, sigma, tol), lcal(da, sigma, tol),
                            bool(genuine)))
        xa, xb = xa2, xb2
        d_prev = d_new
        t += h
    return out
