"""Linking number, the sets V and W, and the filtration monitor.

For a difference vector w (cyclic pairs (x_j, y_j)) the linking number is

    L(w) = 1/4 sum_j sign(x_j) (sign(y_j) - sign(y_{j-1})),

the winding number of the axis-aligned staircase loop through the pairs.
V requires all coordinates nonzero; W extends L across single vanishing
coordinates when the forced neighbour product is positive (x_j = 0 needs
y_{j-1} y_j > 0, y_j = 0 needs x_j x_{j+1} > 0).  A coordinate counts as
zero when |.| < tol * ||w||, so the classification is scale invariant.
"""

from dataclasses import dataclass, field
import io
import numpy as np

from . import _kernels
from .flow import StepPolicy

__all__ = ["SIGN_TOL", "SignClass", "classify", "linking_L", "winding_oracle",
           "Crossing", "CrossingReport", "prop3_campaign", "prop3_monitor",
           "estimate_Nt", "NtEstimate", "crossings_to_csv"]

SIGN_TOL = 1e-10


class UndefinedLinkingError(ValueError):
    def __init__(self, index, what):
        self.index = index
        super().__init__("linking undefined: %s at index %d" % (what, index))


@dataclass
class SignClass:
    sx: np.ndarray
    sy: np.ndarray
    in_V: bool
    in_W: bool
    violating_index: int | None
    degenerate: bool
    L: int | None


def _signs(w, tol=SIGN_TOL):
    w = np.asarray(w, dtype=float)
    scale = np.linalg.norm(w.reshape(*w.shape[:-2], -1), axis=-1)
    cut = tol * scale[..., None]
    x, y = w[..., 0], w[..., 1]
    zx = np.abs(x) < cut
    zy = np.abs(y) < cut
    return np.sign(x), np.sign(y), zx, zy


def classify(w, tol=SIGN_TOL):
    """Membership of w in V and W plus the extended sign data."""
    sx, sy, zx, zy = _signs(w, tol)
    in_V = not (zx.any() or zy.any())
    prod_y = np.roll(sy, 1) * sy          # y_{j-1} y_j sign at slot j
    prod_x = sx * np.roll(sx, -1)         # x_j x_{j+1} sign at slot j
    ok_x = ~zx | ((prod_y > 0) & ~np.roll(zy, 1) & ~zy)
    ok_y = ~zy | ((prod_x > 0) & ~zx & ~np.roll(zx, -1))
    in_W = bool(ok_x.all() and ok_y.all())
    degenerate = bool((zx & zy).any()
                      or (zx & np.roll(zy, 1)).any()
                      or (zy & np.roll(zx, -1)).any())
    viol = None
    if not in_W:
        bad = np.nonzero(~ok_x | ~ok_y)[0]
        viol = int(bad[0])
    Lval = None
    if in_W:
        Lval = _L_extended(sx, sy, zx, zy)
    return SignClass(sx, sy, in_V, in_W, viol, degenerate, Lval)


def _L_extended(sx, sy, zx, zy):
    # any sign works at a W-extension zero: the forced neighbours cancel it
    sx = np.where(zx, 1.0, sx)
    sy = np.where(zy, 1.0, sy)
    return int(round(0.25 * np.sum(sx * (sy - np.roll(sy, 1)))))


def linking_L(w, tol=SIGN_TOL):
    """L(w) for w in W; raises UndefinedLinkingError outside W."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        sc = classify(w, tol)
        if not sc.in_W:
            raise UndefinedLinkingError(sc.violating_index, "not in W")
        return sc.L
    sx, sy, zx, zy = _signs(w, tol)
    # batch path: caller guarantees membership (campaign produces W samples)
    sx = np.where(zx, 1.0, sx)
    sy = np.where(zy, 1.0, sy)
    return np.rint(0.25 * np.sum(sx * (sy - np.roll(sy, 1, axis=-1)),
                                 axis=-1)).astype(int)


def staircase_vertices(w):
    """Vertices of the broken-segment loop: (x_j,y_j) -> (x_{j+1},y_j) -> ..."""
    w = np.asarray(w, dtype=float)
    x, y = w[..., 0], w[..., 1]
    xn = np.roll(x, -1, axis=-1)
    hx = np.stack([x, y], axis=-1)           # (., mq, 2) corner at (x_j, y_j)
    hy = np.stack([xn, y], axis=-1)          # after the horizontal leg
    verts = np.stack([hx, hy], axis=-2)      # (., mq, 2, 2)
    return verts.reshape(*w.shape[:-2], 2 * w.shape[-2], 2)


def winding_oracle(w, tol=SIGN_TOL):
    """Winding number of the staircase loop around 0 by summed turn angles."""
    v = staircase_vertices(w)
    scale = np.linalg.norm(np.asarray(w, float).reshape(*v.shape[:-2], -1),
                           axis=-1)
    a = v
    b = np.roll(v, -1, axis=-2)
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    # a segment passing through (or within tol of) the origin is rejected
    near = (np.abs(cross) <= tol * scale[..., None] ** 2) & (dot <= 0)
    if np.any(near):
        idx = np.argwhere(near)[0]
        raise UndefinedLinkingError(int(idx[-1]) // 2, "loop passes through 0")
    turn = np.arctan2(cross, dot)
    total = np.sum(turn, axis=-1) / (2.0 * np.pi)
    out = np.rint(total).astype(int)
    if np.max(np.abs(total - out)) > 1e-6:
        raise UndefinedLinkingError(-1, "winding sum not integral")
    return out if out.ndim else int(out)


# --------------------------------------------------------------- Prop 3 monitor

@dataclass
class Crossing:
    pair: int
    t: float
    coordinate: int          # flat index into (mq, 2)
    L_before: int
    L_after: int
    genuine: bool            # left W (neighbour product negative)
    degenerate: bool = False


@dataclass
class CrossingReport:
    crossings: list
    degenerate_contacts: int
    samples_outside_W: int
    violations: list = field(default_factory=list)  # genuine with L_after <= L_before

    @property
    def ok(self):
        return not self.violations


def crossings_to_csv(report):
    buf = io.StringIO()
    buf.write("t_cross,L_before,L_after,violating_index\n")
    for c in report.crossings:
        buf.write("%.12g,%d,%d,%d\n" % (c.t, c.L_before, c.L_after, c.coordinate))
    return buf.getvalue()


def _w_ok(w, tol=SIGN_TOL):
    """Vectorised W-membership for a batch of differences (n, mq, 2)."""
    sx, sy, zx, zy = _signs(w, tol)
    prod_y = np.roll(sy, 1, axis=-1) * sy
    prod_x = sx * np.roll(sx, -1, axis=-1)
    ok_x = ~zx | ((prod_y > 0) & ~np.roll(zy, 1, axis=-1) & ~zy)
    ok_y = ~zy | ((prod_x > 0) & ~zx & ~np.roll(zx, -1, axis=-1))
    return ok_x.all(axis=(-1,)) & ok_y.all(axis=(-1,))


def prop3_campaign(system, Z, Zp, horizon, policy=None, tol=SIGN_TOL,
                   bisect_iters=40):
    """Track W-crossings of z' - z for a batch of pairs over [0, horizon].

    Integrates all pairs on a common fixed-step grid; every coordinate sign
    change of the difference between consecutive samples is localised by
    bisection (single RK4 steps from the stored left sample), classified as
    a genuine W-exit or a W-extension pass, and for genuine exits the jump
    of L across the crossing is recorded.  L must strictly increase there.
    """
    policy = policy or StepPolicy()
    h = policy.step(system.A)
    Z = np.asarray(Z, dtype=float)
    Zp = np.asarray(Zp, dtype=float)
    n = Z.shape[0]
    lanes = np.ascontiguousarray(
        np.concatenate([Z, Zp]).reshape(2 * n, system.mq, 2)).copy()
    nsteps = int(np.ceil(horizon / h))
    crossings = []
    degenerate = 0
    outside = 0
    t = 0.0
    w_prev = lanes[n:] - lanes[:n]
    outside += int(np.sum(~_w_ok(w_prev, tol)))
    for step in range(nsteps):
        prev = lanes.copy()
        _kernels.rk4_steps(lanes, system.fparams, h, 1)
        w_new = lanes[n:] - lanes[:n]
        flips = (w_prev * w_new) < 0
        ev_pairs = np.nonzero(flips.any(axis=(1, 2)))[0]
        for pair in ev_pairs:
            coords = np.argwhere(flips[pair])
            for (j, c) in coords:
                cr = _localize(system, prev[[pair, n + pair]], h, t,
                               int(j), int(c), int(pair), tol, bisect_iters)
                if cr is None:
                    continue
                if cr.degenerate:
                    degenerate += 1
                else:
                    crossings.append(cr)
        outside += int(np.sum(~_w_ok(w_new, tol)))
        w_prev = w_new
        t += h
    crossings.sort(key=lambda c: (c.pair, c.t))
    violations = [c for c in crossings
                  if c.genuine and not (c.L_after > c.L_before)]
    return CrossingReport(crossings, degenerate, outside, violations)


def _flow_pair(system, pair_states, tau):
    out = np.ascontiguousarray(pair_states.copy())
    if tau != 0.0:
        _kernels.rk4_steps(out, system.fparams, tau, 1)
    return out


def _localize(system, pair_states, h, t0, j, c, pair_idx, tol, iters):
    """Bisection for the vanishing time of difference coordinate (j, c)."""
    lo, hi = 0.0, h
    w_lo = (pair_states[1] - pair_states[0])[j, c]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        zm = _flow_pair(system, pair_states, mid)
        wm = (zm[1] - zm[0])[j, c]
        if wm * w_lo >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    tc = t0 + 0.5 * (lo + hi)
    zc = _flow_pair(system, pair_states, 0.5 * (lo + hi))
    wc = zc[1] - zc[0]
    scale = np.linalg.norm(wc)
    # degenerate if another coordinate of the interleaved neighbourhood also
    # vanishes at the contact (adjacent zeros are rejected, not guessed)
    sx, sy, zx, zy = _signs(wc, tol * 10)
    if c == 0:
        others = bool(zy[(j - 1) % system.mq] or zy[j])
        neigh = wc[(j - 1) % system.mq, 1] * wc[j, 1]
    else:
        others = bool(zx[j] or zx[(j + 1) % system.mq])
        neigh = wc[j, 0] * wc[(j + 1) % system.mq, 0]
    genuine = neigh < 0
    # evaluate L strictly on both sides of the contact
    delta = max(4.0 * (hi - lo), 1e-9)
    z_before = _flow_pair(system, pair_states, max(lo - delta, 0.0))
    z_after = _flow_pair(system, pair_states, min(hi + delta, h))
    wb = z_before[1] - z_before[0]
    wa = z_after[1] - z_after[0]
    cb = classify(wb, tol)
    ca = classify(wa, tol)
    if cb.L is None or ca.L is None:
        return Crossing(pair_idx, tc, 2 * j + c, 0, 0, genuine, degenerate=True)
    if bool(others):
        return Crossing(pair_idx, tc, 2 * j + c, cb.L, ca.L, genuine,
                        degenerate=True)
    return Crossing(pair_idx, tc, 2 * j + c, cb.L, ca.L, genuine)


def prop3_monitor(system, z, zp, horizon, policy=None, tol=SIGN_TOL):
    """Single-pair crossing report; hard failure on a non-increasing jump."""
    rep = prop3_campaign(system, np.asarray(z)[None], np.asarray(zp)[None],
                         horizon, policy, tol)
    if rep.violations:
        c = rep.violations[0]
        raise AssertionError(
            "filtration violation: L %d -> %d at t=%.6g (coordinate %d)"
            % (c.L_before, c.L_after, c.t, c.coordinate))
    return rep


# ------------------------------------------------------------- Prop 4 estimate

@dataclass
class NtEstimate:
    t: float
    ratio: float            # max over admissible pairs and i of the two ratios
    admissible: int
    total: int

    @property
    def conclusive(self):
        return self.admissible > 0


def estimate_Nt(system, t, Z, Zp, policy=None, tol=SIGN_TOL, samples=9):
    """Sampled lower bound for the projection-comparison constant N_t.

    Keeps the pairs whose difference stays in W at all checked times of
    [-t, t] and maximises ||pi-perp(w)|| / ||pi(w)|| over the plane pairs
    (x_i, y_{i-1}) and (x_i, y_i).
    """
    policy = policy or StepPolicy()
    Z = np.asarray(Z, dtype=float)
    Zp = np.asarray(Zp, dtype=float)
    n = Z.shape[0]
    ok = np.ones(n, dtype=bool)
    for s in np.linspace(-t, t, samples):
        lanes = np.ascontiguousarray(np.concatenate([Z, Zp]))
        if s != 0.0:
            ns = max(1, int(round(abs(s) / policy.step(system.A))))
            _kernels.rk4_steps(lanes, system.fparams, s / ns, ns)
        ok &= _w_ok(lanes[n:] - lanes[:n], tol)
    if not ok.any():
        return NtEstimate(t, np.nan, 0, n)
    w = (Zp - Z)[ok]
    x, y = w[..., 0], w[..., 1]
    yprev = np.roll(y, 1, axis=-1)
    tot = np.sum(x ** 2 + y ** 2, axis=-1)
    best = 0.0
    for j in range(system.mq):
        for inside in (x[:, j] ** 2 + yprev[:, j] ** 2,
                       x[:, j] ** 2 + y[:, j] ** 2):
            outv = tot - inside
            good = inside > 0
            if good.any():
                best = max(best, float(np.max(np.sqrt(outv[good] / inside[good]))))
    return NtEstimate(t, best, int(ok.sum()), n)
