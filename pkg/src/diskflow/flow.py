"""Fixed-step integration of the gradient flow with honest error control.

The field is only Lipschitz (piecewise C^1 across the annulus gluing
circles), so nominal RK4 order is not assumed: error estimates come from
Richardson comparison of full-step and half-step runs.  The step is tied to
the Lipschitz bound, h = c / A with c <= 0.1.
"""

from dataclasses import dataclass, field
import io
import numpy as np

from . import _kernels

__all__ = ["StepPolicy", "OrbitRecord", "EscapeError", "integrate",
           "integrate_pair", "gronwall_check", "GronwallReport", "energy"]


class EscapeError(RuntimeError):
    def __init__(self, t, norm):
        self.escape_time = t
        super().__init__("orbit left the domain at t=%.4f (|z|=%.3g)" % (t, norm))


@dataclass
class StepPolicy:
    c: float = 0.05                 # h = c / A
    record_every: int = 1
    divergence_bound: float = 50.0  # sup-norm guard
    record_states: bool = False

    def step(self, A):
        if self.c > 0.1:
            raise ValueError("step policy requires c <= 0.1")
        return self.c / A


@dataclass
class OrbitRecord:
    ts: np.ndarray                    # sample times, increasing along the run
    actions: np.ndarray               # (..., nsamples)
    xi_norms: np.ndarray
    energy_trapz: np.ndarray          # accumulated int ||xi||^2 dt, full run
    energy_rk4: np.ndarray            # same integral at the stage quadrature
    z0: np.ndarray
    z_end: np.ndarray
    T: float
    step: float
    states: np.ndarray | None = None  # (..., nsamples, mq, 2) if recorded
    richardson_error: float | None = None
    converged_start: bool = False     # ||xi|| below threshold at first sample
    converged_end: bool = False
    monotonicity_defect: float = 0.0  # worst action decrease between samples

    def to_csv(self):
        """Orbit dump: t, action, xi_norm, then the flattened state."""
        buf = io.StringIO()
        acts = np.atleast_2d(self.actions)
        nrms = np.atleast_2d(self.xi_norms)
        sts = None
        if self.states is not None:
            sts = self.states.reshape(acts.shape[0], acts.shape[1], -1)
        for lane in range(acts.shape[0]):
            for k, t in enumerate(self.ts):
                row = [t, acts[lane, k], nrms[lane, k]]
                if sts is not None:
                    row.extend(sts[lane, k])
                buf.write(",".join("%.17g" % v for v in row) + "\n")
        return buf.getvalue()


CONVERGENCE_XI = 1e-7   # ||xi|| threshold declaring proximity to the singular set


def _run(system, Z, T, h, every, bound, keep_states):
    lanes = np.ascontiguousarray(Z.reshape(-1, system.mq, 2)).copy()
    nsteps = max(1, int(round(abs(T) / h)))
    nsteps = every * int(np.ceil(nsteps / every))   # samples end at the terminal state
    hh = T / nsteps
    nsamp = nsteps // every + 1
    actions = np.empty((lanes.shape[0], nsamp))
    xinorms = np.empty((lanes.shape[0], nsamp))
    states = None
    if keep_states:
        states = np.empty((lanes.shape[0], nsamp, system.mq, 2))
        states[:, 0] = lanes
        actions[:, 0] = system.action(lanes).reshape(-1)
        xinorms[:, 0] = np.atleast_1d(system.xi_norm(lanes))
        en = np.zeros(lanes.shape[0])
        en4 = np.zeros(lanes.shape[0])
        for s in range(1, nsamp):
            a2 = np.empty((lanes.shape[0], 2))
            x2 = np.empty((lanes.shape[0], 2))
            e2 = np.empty(lanes.shape[0])
            e4 = np.empty(lanes.shape[0])
            _kernels.rk4_record(lanes, system.fparams, hh, every, every,
                                a2, x2, e2, e4)
            en += e2
            en4 += e4
            states[:, s] = lanes
            actions[:, s] = a2[:, -1]
            xinorms[:, s] = x2[:, -1]
    else:
        en = np.empty(lanes.shape[0])
        en4 = np.empty(lanes.shape[0])
        _kernels.rk4_record(lanes, system.fparams, hh, nsteps, every,
                            actions, xinorms, en, en4)
    mx = np.max(np.abs(lanes))
    if mx > bound:
        raise EscapeError(T, mx)
    ts = np.arange(nsamp) * (every * hh)
    return lanes, ts, actions, xinorms, en, en4, states, hh


def integrate(system, z0, T, policy=None, richardson=False):
    """Integrate z0 (single state or batch) for signed time T.

    Fixed-step classical RK4 at h = c/A.  With richardson=True the run is
    repeated at half step and the terminal difference recorded as the error
    estimate.
    """
    policy = policy or StepPolicy()
    h = policy.step(system.A)
    Z = np.asarray(z0, dtype=float)
    lead = Z.shape[:-2]
    res = _run(system, Z, T, h, policy.record_every, policy.divergence_bound,
               policy.record_states)
    lanes, ts, actions, xinorms, en, en4, states, hh = res
    rich = None
    if richardson:
        lanes2, *_ = _run(system, Z, T, h / 2, policy.record_every * 2,
                          policy.divergence_bound, False)
        rich = float(np.max(np.abs(lanes2 - lanes)))
    defect = float(np.max(np.maximum(actions[:, :-1] - actions[:, 1:], 0.0))) \
        if T > 0 else float(np.max(np.maximum(actions[:, 1:] - actions[:, :-1], 0.0)))
    rec = OrbitRecord(
        ts=ts,
        actions=actions.reshape(*lead, -1) if lead else actions[0],
        xi_norms=xinorms.reshape(*lead, -1) if lead else xinorms[0],
        energy_trapz=en.reshape(lead) if lead else float(en[0]),
        energy_rk4=en4.reshape(lead) if lead else float(en4[0]),
        z0=Z,
        z_end=lanes.reshape(*lead, system.mq, 2) if lead else lanes[0],
        T=T, step=hh,
        states=(states.reshape(*lead, -1, system.mq, 2)
                if (states is not None and lead) else states),
        richardson_error=rich,
    )
    first = np.atleast_2d(xinorms)[:, 0]
    last = np.atleast_2d(xinorms)[:, -1]
    rec.converged_start = bool(np.all(first < CONVERGENCE_XI))
    rec.converged_end = bool(np.all(last < CONVERGENCE_XI))
    rec.monotonicity_defect = defect
    return rec


def integrate_pair(system, z, zp, T, policy=None):
    """Integrate two states on a common grid; returns (rec, rec')."""
    policy = policy or StepPolicy()
    both = np.stack([np.asarray(z, dtype=float), np.asarray(zp, dtype=float)])
    rec = integrate(system, both, T, policy)
    out = []
    for i in (0, 1):
        out.append(OrbitRecord(
            ts=rec.ts, actions=rec.actions[i], xi_norms=rec.xi_norms[i],
            energy_trapz=rec.energy_trapz[i], energy_rk4=rec.energy_rk4[i],
            z0=both[i], z_end=rec.z_end[i], T=T, step=rec.step,
            states=None if rec.states is None else rec.states[i]))
    return out[0], out[1]


@dataclass
class GronwallReport:
    max_upper_violation: float      # relative excess over e^{A|t|} bounds
    max_lower_violation: float
    max_xi_upper_violation: float
    max_xi_lower_violation: float
    ok: bool = field(init=False)
    tol: float = 1e-6

    def __post_init__(self):
        self.ok = max(self.max_upper_violation, self.max_lower_violation,
                      self.max_xi_upper_violation, self.max_xi_lower_violation) \
            <= self.tol


def gronwall_check(system, z, zp, T, policy=None, tol=1e-6):
    """Verify the two-sided exponential estimates along a pair of orbits.

    Checks e^{-A|t|} d0 <= d(t) <= e^{A|t|} d0 for the state distance and
    the same two-sided bound for ||xi|| along each orbit, at every sample.
    """
    from dataclasses import replace
    policy = replace(policy or StepPolicy(), record_states=True)
    both = np.stack([np.asarray(z, dtype=float), np.asarray(zp, dtype=float)])
    rec = integrate(system, both, T, policy)
    A = system.A
    ts = np.abs(rec.ts)
    d = np.linalg.norm((rec.states[0] - rec.states[1]).reshape(len(ts), -1),
                       axis=1)
    d0 = d[0]
    up = lo = 0.0
    if d0 > 0:
        up = float(np.max(d / (d0 * np.exp(A * ts)) - 1.0))
        lo = float(np.max(d0 * np.exp(-A * ts) / np.maximum(d, 1e-300) - 1.0))
    xu = xl = 0.0
    for i in (0, 1):
        n = rec.xi_norms[i]
        if n[0] > 0:
            xu = max(xu, float(np.max(n / (n[0] * np.exp(A * ts)) - 1.0)))
            xl = max(xl, float(np.max(n[0] * np.exp(-A * ts) /
                                      np.maximum(n, 1e-300) - 1.0)))
    rep = GronwallReport(up, lo, xu, xl)
    rep.tol = tol
    rep.ok = max(up, lo, xu, xl) <= tol
    return rep


def energy(record: OrbitRecord, finite_horizon=False, tol=1e-6,
           trapz_tol=1e-3):
    """Energy of an orbit, cross-checked against the action increment.

    The reported value is the stage-quadrature integral (same order as the
    state integration); the plain trapezoid is kept as a coarse independent
    sum and compared at its own accuracy.  Refuses to report a total
    (infinite-horizon) energy unless both ends have converged (||xi|| below
    threshold) or finite_horizon is set.
    """
    acts = np.atleast_2d(record.actions)
    en = np.atleast_1d(record.energy_rk4)
    en_tr = np.atleast_1d(record.energy_trapz)
    if not finite_horizon and not (record.converged_start and record.converged_end):
        raise ValueError("orbit ends not converged; pass finite_horizon=True")
    dact = np.abs(acts[:, -1] - acts[:, 0])
    scale = np.maximum(1.0, dact)
    if np.any(np.abs(en - dact) > tol * scale):
        raise ValueError("energy and action increment disagree beyond "
                         "tolerance: %.6g vs %.6g" %
                         (float(en.max()), float(dact.max())))
    if np.any(np.abs(en_tr - en) > trapz_tol * scale):
        raise ValueError("trapezoid and stage quadrature disagree: %.6g vs %.6g"
                         % (float(en_tr.max()), float(en.max())))
    return record.energy_rk4


def gronwall_campaign(system, Z, Zp, T, policy=None, tol=1e-6):
    """Vectorised two-sided exponential checks over a batch of pairs.

    Returns the worst relative violations of the four estimates across all
    pairs and samples.
    """
    policy = policy or StepPolicy()
    from dataclasses import replace
    policy = replace(policy, record_states=True)
    Z = np.asarray(Z, dtype=float)
    Zp = np.asarray(Zp, dtype=float)
    n = Z.shape[0]
    rec = integrate(system, np.concatenate([Z, Zp]), T, policy)
    ts = np.abs(rec.ts)
    d = np.linalg.norm((rec.states[:n] - rec.states[n:]).reshape(
        n, len(ts), -1), axis=2)
    d0 = d[:, :1]
    grow = np.exp(system.A * ts)[None, :]
    ok = (d0 > 0).ravel()
    up = float(np.max(d[ok] / (d0[ok] * grow) - 1.0, initial=0.0))
    lo = float(np.max(d0[ok] / grow / np.maximum(d[ok], 1e-300) - 1.0,
                      initial=0.0))
    xn = rec.xi_norms
    x0 = xn[:, :1]
    okx = (x0 > 0).ravel()
    xu = float(np.max(xn[okx] / (x0[okx] * grow) - 1.0, initial=0.0))
    xl = float(np.max(x0[okx] / grow / np.maximum(xn[okx], 1e-300) - 1.0,
                      initial=0.0))
    rep = GronwallReport(up, lo, xu, xl)
    rep.tol = tol
    rep.ok = max(up, lo, xu, xl) <= tol
    return rep
