"""Compiled inner loops for profile-factor systems.

Everything here operates on the packed representation of a factor chain:
``fp`` is an (m, 4) array of rows (base, slope, r1, r2) describing the
rotation angle of factor k at radius r,

    c_k(r) = base + slope * clip(r - r1, 0, r2 - r1),

which covers rigid rotations (slope = 0) and the polar twist pieces used by
the extended map.  States are (n, mq, 2) arrays of cyclic coordinate pairs;
slot j holds the pair with 1-based chain index j+1 and uses factor j mod m.

Kernels never allocate across lanes in a way that depends on thread count,
so results are bitwise reproducible regardless of the numba thread pool.
"""

import numpy as np
from numba import njit, prange

__all__ = [
    "solve_preimage", "generating_triple", "xi_into", "action_total",
    "rk4_steps", "rk4_record", "rk4_masked",
]


@njit(cache=True, inline="always")
def _angle(r, base, slope, r1, r2):
    if slope == 0.0 or r <= r1:
        return base
    if r >= r2:
        return base + slope * (r2 - r1)
    return base + slope * (r - r1)


@njit(cache=True, inline="always")
def _angle_slope(r, slope, r1, r2):
    if slope != 0.0 and r1 < r < r2:
        return slope
    return 0.0


@njit(cache=True, inline="always")
def _solve_x(X, y, base, slope, r1, r2):
    """Preimage abscissa x with p1(f(x, y)) = X, by safeguarded Newton.

    Monotonicity of x -> p1(f(x, y)) (untwistedness) makes the root simple;
    the derivative floor guards the kinks at the gluing circles.
    """
    r0 = np.sqrt(X * X + y * y)
    c = _angle(r0, base, slope, r1, r2)
    x = X * np.cos(c) + y * np.sin(c)
    for _ in range(50):
        r = np.sqrt(x * x + y * y)
        c = _angle(r, base, slope, r1, r2)
        sc = np.sin(c)
        cc = np.cos(c)
        F = x * cc - y * sc - X
        if abs(F) < 1e-14:
            break
        dF = cc
        cp = _angle_slope(r, slope, r1, r2)
        if cp != 0.0 and r > 0.0:
            dF -= (x * sc + y * cc) * cp * (x / r)
        if dF < 0.05:
            dF = 0.05
        x -= F / dF
    return x


@njit(cache=True, inline="always")
def _radial_action(r, base, slope, r1, r2):
    """Closed form of int_0^r c'(rho) rho^2 d rho for the profile angle."""
    if slope == 0.0 or r <= r1:
        return 0.0
    rc = r if r < r2 else r2
    return slope * (rc * rc * rc - r1 * r1 * r1) / 3.0


@njit(cache=True)
def solve_preimage(X, y, params):
    """Vectorised preimage solve for one factor; X, y, out are 1-d."""
    out = np.empty_like(X)
    b, s, r1, r2 = params[0], params[1], params[2], params[3]
    for i in range(X.shape[0]):
        out[i] = _solve_x(X[i], y[i], b, s, r1, r2)
    return out


@njit(cache=True)
def generating_triple(X, y, params):
    """(g, g', h) of a profile factor at mixed coordinates (X, y).

    g is the preimage abscissa, g' the image ordinate, and h the generating
    function anchored at h(0, 0) = 0:  h = (x y + X Y)/2 - radial term.
    """
    n = X.shape[0]
    g = np.empty(n)
    gp = np.empty(n)
    h = np.empty(n)
    b, s, r1, r2 = params[0], params[1], params[2], params[3]
    for i in range(n):
        x = _solve_x(X[i], y[i], b, s, r1, r2)
        r = np.sqrt(x * x + y[i] * y[i])
        c = _angle(r, b, s, r1, r2)
        Y = x * np.sin(c) + y[i] * np.cos(c)
        g[i] = x
        gp[i] = Y
        h[i] = 0.5 * (x * y[i] + X[i] * Y) - 0.5 * _radial_action(r, b, s, r1, r2)
    return g, gp, h


@njit(cache=True, inline="always")
def _xi_one(Z, fp, out):
    nq = Z.shape[0]
    mm = fp.shape[0]
    for j in range(nq):
        jm1 = (j - 1) % nq
        jp1 = (j + 1) % nq
        kprev = (j - 1) % mm
        kj = j % mm
        xj = Z[j, 0]
        yj = Z[j, 1]
        # x-component: y_j - g'_{j-1}(x_j, y_{j-1})
        b, s, r1, r2 = fp[kprev, 0], fp[kprev, 1], fp[kprev, 2], fp[kprev, 3]
        yprev = Z[jm1, 1]
        gx = _solve_x(xj, yprev, b, s, r1, r2)
        r = np.sqrt(gx * gx + yprev * yprev)
        c = _angle(r, b, s, r1, r2)
        out[j, 0] = yj - (gx * np.sin(c) + yprev * np.cos(c))
        # y-component: x_j - g_j(x_{j+1}, y_j)
        b, s, r1, r2 = fp[kj, 0], fp[kj, 1], fp[kj, 2], fp[kj, 3]
        out[j, 1] = xj - _solve_x(Z[jp1, 0], yj, b, s, r1, r2)


@njit(cache=True, parallel=True)
def xi_into(Z, fp, out):
    for lane in prange(Z.shape[0]):
        _xi_one(Z[lane], fp, out[lane])


@njit(cache=True, inline="always")
def _action_one(Z, fp):
    nq = Z.shape[0]
    mm = fp.shape[0]
    tot = 0.0
    for j in range(nq):
        jm1 = (j - 1) % nq
        kprev = (j - 1) % mm
        b, s, r1, r2 = fp[kprev, 0], fp[kprev, 1], fp[kprev, 2], fp[kprev, 3]
        X = Z[j, 0]
        y = Z[jm1, 1]
        x = _solve_x(X, y, b, s, r1, r2)
        r = np.sqrt(x * x + y * y)
        c = _angle(r, b, s, r1, r2)
        Y = x * np.sin(c) + y * np.cos(c)
        h = 0.5 * (x * y + X * Y) - 0.5 * _radial_action(r, b, s, r1, r2)
        tot += Z[j, 0] * Z[j, 1] - h
    return tot


@njit(cache=True, parallel=True)
def action_total(Z, fp, out):
    for lane in prange(Z.shape[0]):
        out[lane] = _action_one(Z[lane], fp)


@njit(cache=True, inline="always")
def _rk4_advance(Zl, fp, hh, nsteps, k1, k2, k3, k4, tmp):
    nq = Zl.shape[0]
    for _ in range(nsteps):
        _xi_one(Zl, fp, k1)
        for j in range(nq):
            tmp[j, 0] = Zl[j, 0] + 0.5 * hh * k1[j, 0]
            tmp[j, 1] = Zl[j, 1] + 0.5 * hh * k1[j, 1]
        _xi_one(tmp, fp, k2)
        for j in range(nq):
            tmp[j, 0] = Zl[j, 0] + 0.5 * hh * k2[j, 0]
            tmp[j, 1] = Zl[j, 1] + 0.5 * hh * k2[j, 1]
        _xi_one(tmp, fp, k3)
        for j in range(nq):
            tmp[j, 0] = Zl[j, 0] + hh * k3[j, 0]
            tmp[j, 1] = Zl[j, 1] + hh * k3[j, 1]
        _xi_one(tmp, fp, k4)
        for j in range(nq):
            Zl[j, 0] += hh / 6.0 * (k1[j, 0] + 2.0 * (k2[j, 0] + k3[j, 0]) + k4[j, 0])
            Zl[j, 1] += hh / 6.0 * (k1[j, 1] + 2.0 * (k2[j, 1] + k3[j, 1]) + k4[j, 1])


@njit(cache=True, parallel=True)
def rk4_steps(Z, fp, hh, nsteps):
    """Advance all lanes in place by nsteps classical RK4 steps of size hh."""
    nq = Z.shape[1]
    for lane in prange(Z.shape[0]):
        k1 = np.empty((nq, 2))
        k2 = np.empty((nq, 2))
        k3 = np.empty((nq, 2))
        k4 = np.empty((nq, 2))
        tmp = np.empty((nq, 2))
        _rk4_advance(Z[lane], fp, hh, nsteps, k1, k2, k3, k4, tmp)


@njit(cache=True, parallel=True)
def rk4_masked(Z, fp, hh, nsteps_by_lane):
    """Per-lane step counts (used when lanes stop at individual horizons)."""
    nq = Z.shape[1]
    for lane in prange(Z.shape[0]):
        n = nsteps_by_lane[lane]
        if n <= 0:
            continue
        k1 = np.empty((nq, 2))
        k2 = np.empty((nq, 2))
        k3 = np.empty((nq, 2))
        k4 = np.empty((nq, 2))
        tmp = np.empty((nq, 2))
        _rk4_advance(Z[lane], fp, hh, n, k1, k2, k3, k4, tmp)


@njit(cache=True, inline="always")
def _norm2(K):
    out = 0.0
    for j in range(K.shape[0]):
        out += K[j, 0] ** 2 + K[j, 1] ** 2
    return out


@njit(cache=True, parallel=True)
def rk4_record(Z, fp, hh, nsteps, every, actions, xinorms, energy,
               energy_rk4):
    """RK4 with per-sample action and ||xi|| records and two energy sums.

    actions/xinorms have shape (lanes, nsamples) with
    nsamples = nsteps // every + 1; sample s corresponds to step s * every.
    energy accumulates int ||xi||^2 dt by the trapezoid rule over the
    steps; energy_rk4 applies the classical stage quadrature
    (h/6)(k1 + 2 k2 + 2 k3 + k4) to ||xi||^2, which keeps the integral at
    the order of the state integration.
    """
    nq = Z.shape[1]
    for lane in prange(Z.shape[0]):
        k1 = np.empty((nq, 2))
        k2 = np.empty((nq, 2))
        k3 = np.empty((nq, 2))
        k4 = np.empty((nq, 2))
        tmp = np.empty((nq, 2))
        Zl = Z[lane]
        _xi_one(Zl, fp, k1)
        nrm2 = _norm2(k1)
        xinorms[lane, 0] = np.sqrt(nrm2)
        actions[lane, 0] = _action_one(Zl, fp)
        acc = 0.0
        acc4 = 0.0
        s = 1
        for step in range(1, nsteps + 1):
            # k1 already holds xi at the current state
            e1 = nrm2
            for j in range(nq):
                tmp[j, 0] = Zl[j, 0] + 0.5 * hh * k1[j, 0]
                tmp[j, 1] = Zl[j, 1] + 0.5 * hh * k1[j, 1]
            _xi_one(tmp, fp, k2)
            e2 = _norm2(k2)
            for j in range(nq):
                tmp[j, 0] = Zl[j, 0] + 0.5 * hh * k2[j, 0]
                tmp[j, 1] = Zl[j, 1] + 0.5 * hh * k2[j, 1]
            _xi_one(tmp, fp, k3)
            e3 = _norm2(k3)
            for j in range(nq):
                tmp[j, 0] = Zl[j, 0] + hh * k3[j, 0]
                tmp[j, 1] = Zl[j, 1] + hh * k3[j, 1]
            _xi_one(tmp, fp, k4)
            e4 = _norm2(k4)
            for j in range(nq):
                Zl[j, 0] += hh / 6.0 * (k1[j, 0] + 2.0 * (k2[j, 0] + k3[j, 0])
                                        + k4[j, 0])
                Zl[j, 1] += hh / 6.0 * (k1[j, 1] + 2.0 * (k2[j, 1] + k3[j, 1])
                                        + k4[j, 1])
            acc4 += abs(hh) / 6.0 * (e1 + 2.0 * (e2 + e3) + e4)
            _xi_one(Zl, fp, k1)
            nrm2 = _norm2(k1)
            acc += 0.5 * (e1 + nrm2) * abs(hh)
            if step % every == 0 and s < actions.shape[1]:
                xinorms[lane, s] = np.sqrt(nrm2)
                actions[lane, s] = _action_one(Zl, fp)
                s += 1
        energy[lane] = acc
        energy_rk4[lane] = acc4
