"""Experiment runner: configuration, staged pipelines, persistent results.

Each subcommand builds what it needs from one JSON config, writes CSV/JSON
artifacts plus a machine-readable summary.json with per-item pass/fail
flags into the output directory, and exits nonzero when a hard invariant
fails (exit 1) or the configuration is invalid (exit 2).  All randomised
campaigns draw from a single recorded seed, so identical config + seed
reproduce identical outputs.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import maps, genfam, flow, linking, disk, approx, tridiag

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2


@dataclasses.dataclass
class ExperimentConfig:
    alpha: float = 0.3
    beta: float = 0.35
    q: int = 3
    p: int = 1
    K_target: float = 2.0
    m_prime: int = 8
    m_double_prime: int = 4
    inner: str = "rotation"          # rotation | perturbation
    perturbation_s: float = 0.0
    mesh_n_r: int = 16
    mesh_n_theta: int = 64
    graph_t: float = 44.0
    graph_t_base: float = 12.0
    shoot_T: float = 36.0
    step_c: float = 0.05
    seed: int = 12345
    workers: int = 1
    # campaign sizes (keep spec defaults; tests may shrink)
    lipschitz_pairs: int = 100000
    gronwall_pairs: int = 1000
    prop3_pairs: int = 10000
    lemma6_fields: int = 1000

    @classmethod
    def from_file(cls, path, overrides=None):
        with open(path) as fh:
            doc = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError("unknown config keys: %s" % sorted(unknown))
        cfg = cls(**doc)
        for k, v in (overrides or {}).items():
            if v is not None:
                setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def validate(self):
        if not self.beta > self.alpha:
            raise ValueError("need beta > alpha")
        if np.floor(self.alpha) + 1.0 < self.beta:
            raise ValueError("(alpha, beta) contains an integer")
        if not (self.q * self.alpha < self.p < self.q * self.beta):
            raise ValueError("p/q = %d/%d is not in (alpha, beta)"
                             % (self.p, self.q))
        if self.m_prime < 1 or self.m_double_prime < 1:
            raise ValueError("need at least one factor of each kind")
        if self.step_c > 0.1:
            raise ValueError("step policy requires c <= 0.1")


def build_system(cfg):
    pm = maps.extend_pseudo_rotation(None, cfg.alpha, cfg.beta)
    inner = maps.rotation_split(cfg.alpha, cfg.m_double_prime)
    if cfg.inner == "perturbation" and cfg.perturbation_s != 0.0:
        inner = inner + [maps.PerturbationFactor(maps.BumpPerturbation(),
                                                 cfg.perturbation_s)]
    dec = maps.decompose(pm, cfg.K_target, cfg.m_prime, inner,
                         rng=cfg.seed)
    return pm, dec, genfam.GeneratingSystem(dec, cfg.q)


def _write(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _summary(out_dir, cfg, stage, items):
    doc = {
        "stage": stage,
        "seed": cfg.seed,
        "config": dataclasses.asdict(cfg),
        "items": items,
        "passed": all(v.get("ok", True) for v in items.values()),
    }
    _write(out_dir, "summary.json", json.dumps(doc, indent=1, default=str))
    return doc


def run_decompose(cfg, out_dir):
    pm, dec, system = build_system(cfg)
    items = {
        "certified_K": {"value": dec.K, "ok": True},
        "composition_error": {"value": dec.composition_error,
                              "ok": dec.composition_error < 1e-9},
        "lipschitz_bound_A": {"value": system.A, "ok": True},
    }
    _write(out_dir, "decomposition.json", dec.to_json())
    return _summary(out_dir, cfg, "decompose", items)


def run_flow(cfg, out_dir):
    _, _, system = build_system(cfg)
    rng = np.random.default_rng(cfg.seed)
    probe = system.lipschitz_probe(cfg.lipschitz_pairs, rng=rng)
    items = {"lipschitz_probe": {"value": probe, "bound": system.A,
                                 "ok": probe <= system.A}}

    gap = system.action_gap(cfg.p)
    quad = system.action_gap_quadrature(cfg.p)
    sig = system.sigma_point(cfg.p, 0.37)
    act = system.action(sig)
    rel = abs(act - gap) / abs(gap)
    items["action_gap"] = {"closed_form": gap, "path_integral": quad,
                           "action_at_sigma": act, "rel_err": rel,
                           "ok": rel < 1e-6}

    # gronwall campaign, chunked for the worker pool, merged by index
    pol = flow.StepPolicy(c=cfg.step_c)
    n = cfg.gronwall_pairs
    chunks = max(1, min(16, n // 125))
    pairs = [(system.random_states(n // chunks, rng=rng),
              system.random_states(n // chunks, rng=rng))
             for _ in range(chunks)]

    def one(args):
        Z, Zp = args
        return flow.gronwall_campaign(system, Z, Zp, 1.0, pol)

    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(cfg.workers) as pool:
            reps = list(pool.map(one, pairs))
    else:
        reps = [one(a) for a in pairs]
    worst = max(max(r.max_upper_violation, r.max_lower_violation,
                    r.max_xi_upper_violation, r.max_xi_lower_violation)
                for r in reps)
    items["gronwall"] = {"pairs": n, "worst_violation": worst,
                         "ok": all(r.ok for r in reps)}

    rec = flow.integrate(system, system.random_states(1, rng=rng)[0], 1.0,
                         flow.StepPolicy(c=cfg.step_c, record_states=False),
                         richardson=True)
    items["richardson"] = {"error_estimate": rec.richardson_error,
                           "monotonicity_defect": rec.monotonicity_defect,
                           "ok": rec.monotonicity_defect <= 1e-9}
    _write(out_dir, "orbit_sample.csv", rec.to_csv())
    return _summary(out_dir, cfg, "flow", items)


def run_linking(cfg, out_dir):
    _, _, system = build_system(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.prop3_pairs
    Z = system.random_states(n, rng=rng)
    Zp = system.random_states(n, rng=rng)
    rep = linking.prop3_campaign(system, Z, Zp, 1.0,
                                 flow.StepPolicy(c=cfg.step_c))
    genuine = [c for c in rep.crossings if c.genuine]
    items = {
        "prop3": {
            "pairs": n,
            "crossings": len(rep.crossings),
            "genuine": len(genuine),
            "degenerate_contacts": rep.degenerate_contacts,
            "violations": len(rep.violations),
            "ok": not rep.violations,
        }
    }
    # oracle agreement
    W = system.random_states(10000, rng=rng)
    mism = int(np.sum(linking.linking_L(W) != linking.winding_oracle(W)))
    items["winding_oracle"] = {"samples": 10000, "mismatches": mism,
                               "ok": mism == 0}
    _write(out_dir, "crossings.csv", linking.crossings_to_csv(rep))
    return _summary(out_dir, cfg, "linking", items)


def run_disk(cfg, out_dir):
    _, _, system = build_system(cfg)
    gmesh = disk.graph_transform_disk(system, cfg.p, t=cfg.graph_t,
                                      n_r=cfg.mesh_n_r,
                                      n_theta=cfg.mesh_n_theta,
                                      t_base=cfg.graph_t_base, rng=cfg.seed)
    smesh = disk.shooting_disk(system, cfg.p, n_r=cfg.mesh_n_r,
                               n_theta=cfg.mesh_n_theta, T_f=cfg.shoot_T)
    dd = np.linalg.norm(
        (gmesh.states - smesh.states).reshape(cfg.mesh_n_r,
                                              cfg.mesh_n_theta, -1), axis=2)
    agreement = float(dd.max())
    repg = disk.verify_disk(system, gmesh, rng=cfg.seed)
    reps = disk.verify_disk(system, smesh, rng=cfg.seed)
    en = disk.node_orbit_energies(system, gmesh, subsample=96, rng=cfg.seed)
    C = system.action_gap(cfg.p)
    err = float(np.max(np.abs(en["energy"] - C)))
    items = {
        "mesh_agreement": {"value": agreement, "ok": agreement < 1e-4},
        "verify_graph": {"ok": repg.ok, "failures": repg.failures},
        "verify_shooting": {"ok": reps.ok, "failures": reps.failures},
        "node_energy": {"max_err": err, "C": C, "ok": err < 1e-4},
        "holdout": {"value": gmesh.diagnostics["holdout_error"], "ok": True},
    }
    _write(out_dir, "mesh_graph.csv", disk.mesh_to_csv(gmesh))
    _write(out_dir, "mesh_shooting.csv", disk.mesh_to_csv(smesh))
    return _summary(out_dir, cfg, "disk", items)


def run_approx(cfg, out_dir):
    _, _, system = build_system(cfg)
    gmesh = disk.graph_transform_disk(system, cfg.p, t=cfg.graph_t,
                                      n_r=cfg.mesh_n_r,
                                      n_theta=cfg.mesh_n_theta,
                                      t_base=cfg.graph_t_base, rng=cfg.seed)
    ap = approx.PeriodicApprox(system, gmesh)
    rep = ap.error_bounds()
    resc = ap.rescale_to_unit()
    items = {
        "bound_f": {"bound": rep.bound_f, "measured": rep.measured_f,
                    "ok": rep.measured_f <= rep.bound_f},
        "rigidity": {"bound": rep.bound_rigidity,
                     "measured": rep.measured_rigidity,
                     "ok": rep.measured_rigidity <= rep.bound_rigidity},
        "period_defect": {"value": rep.period_defect,
                          "ok": rep.period_defect < 1e-4},
        "rescaled": {"bound": resc["bound"], "measured": resc["measured"],
                     "ok": resc["measured"] <= resc["bound"]},
    }
    _write(out_dir, "approx_report.json", rep.to_json())
    return _summary(out_dir, cfg, "approx", items)


def run_lemma6(cfg, out_dir):
    rng = np.random.default_rng(cfg.seed)
    n = cfg.lemma6_fields
    bad = 0
    checked = 0
    for b in range(n):
        K = float(rng.uniform(1.05, 1.6))
        r = int(rng.integers(8, 17))
        l = int(rng.integers(2, 6))
        fld = tridiag.random_fields(1, r, K, rng=rng)
        mu = float(rng.uniform(0.5, 0.95))
        tb = tridiag.build_table(K, l, mu)
        eps = float(rng.uniform(0.0, tb.eps0))
        i = int(rng.integers(0, r))
        x, xp = tridiag.admissible_pair(fld, i, l, mu, eps, rng=rng)
        for t in (tb.t0, -tb.t0, 0.5 * tb.t0):
            pred = tridiag.predict_signs(fld, x, xp, i, l, eps, mu, t, tb)
            res = tridiag.verify_prediction(fld, x, xp, pred)
            checked += 1
            if not res["ok"]:
                bad += 1
    items = {"lemma6": {"fields": n, "checks": checked, "violations": bad,
                        "ok": bad == 0}}
    tb = tridiag.build_table(1.2, 4, 0.8)
    _write(out_dir, "lemma6_table.json", tb.to_json())
    return _summary(out_dir, cfg, "lemma6", items)


def run_sweep(cfg, out_dir, q_list=(3, 6, 9, 13, 16)):
    """Closed-form bound table along near-convergents of alpha.

    For each q the nearest integer p to q alpha is used (the mirrored
    negative-twist extension covers p/q < alpha), and the bound
    (1 + ... + K^{m-1}) sqrt(A) sqrt(C) is tabulated with
    C = pi |p - q alpha| (1 + |d| + d^2/3), d = p/q - alpha.
    """
    _, dec, system = build_system(cfg)
    rows = ["q,p,abs_p_minus_q_alpha,C,bound_f"]
    vals = []
    for q in q_list:
        p = int(round(q * cfg.alpha))
        d = p / q - cfg.alpha
        C = np.pi * abs(p - q * cfg.alpha) * (1 + abs(d) + d * d / 3.0)
        bound = approx.chain_sum(system.K, system.m) \
            * np.sqrt(system.A) * np.sqrt(C)
        rows.append("%d,%d,%.12g,%.12g,%.12g"
                    % (q, p, abs(p - q * cfg.alpha), C, bound))
        vals.append(bound)
    _write(out_dir, "sweep.csv", "\n".join(rows) + "\n")
    items = {"sweep": {"q": list(q_list), "bounds": vals, "ok": True}}
    return _summary(out_dir, cfg, "sweep", items)


STAGES = {
    "decompose": run_decompose,
    "flow": run_flow,
    "linking": run_linking,
    "disk": run_disk,
    "approx": run_approx,
    "lemma6": run_lemma6,
    "sweep": run_sweep,
}


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="diskflow",
        description="staged experiments for the extended pseudo-rotation "
                    "pipeline")
    ap.add_argument("stage", choices=sorted(STAGES))
    ap.add_argument("--config", default=None, help="JSON config path")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args(argv)

    try:
        if args.config:
            cfg = ExperimentConfig.from_file(
                args.config, {"seed": args.seed, "workers": args.workers})
        else:
            cfg = ExperimentConfig()
            if args.seed is not None:
                cfg.seed = args.seed
            if args.workers is not None:
                cfg.workers = args.workers
            cfg.validate()
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    t0 = time.time()
    try:
        doc = STAGES[args.stage](cfg, args.out)
    except (AssertionError, maps.CertificationError) as exc:
        print("invariant failure: %s" % exc, file=sys.stderr)
        return EXIT_VIOLATION
    print("%s finished in %.1fs; passed=%s" % (args.stage, time.time() - t0,
                                               doc["passed"]))
    return EXIT_OK if doc["passed"] else EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
