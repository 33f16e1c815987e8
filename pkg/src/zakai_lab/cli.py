"""Command line entry point: ``zakai-lab {simulate,verify,audit,replay}``.

Outputs go to ``<out>/<name>-<hash>-s<seed>/`` where ``hash`` is the
fingerprint of the effective scenario (after overrides).  Every file name
inside also carries the hash and the seed.  Given the scenario and the seed,
all bytes written are the same for any ``--threads`` value.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import scipy

from . import __version__
from .config import linear_gaussian_from_scenario, load_scenario
from .errors import ConfigError, MissingArtifactError, ZakaiLabError
from .measure import load_cloud_csv
from .model import system_from_config
from .oracle import kalman_bucy, reference_independent_filter
from .paths import StreamKey, TimeGrid, sample_brownian
from .sde import (DriverPath, extract_vtilde, extract_wtilde, load_trajectory_csv, save_trajectory_csv,
                  simulate_truth_cn, simulate_truth_cs)
from .verify import (ResidualReport, build_ensemble, calibrate_allowance, calibrate_martingale_allowance,
                     fpe_integrability_audit, fpe_residual, lderiv_check, martingale_residual, mass_report,
                     random_lderiv_triple, write_jsonl, write_summary_csv)
from .zakai import (integrability_audit_path, load_zakai_path, pathwise_ito_residual, save_zakai_path,
                    solve_zakai_cn, solve_zakai_cs)

SUITES = ("fpe", "martingale", "lderiv", "kalman", "audit", "reduction")


def run_dir(sc, out=None):
    return os.path.join(out or sc.output, f"{sc.name}-{sc.fingerprint}-s{sc.seed}")


def _tag(sc):
    return f"{sc.fingerprint}-s{sc.seed}"


def _versions():
    return {"zakai_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _truth_and_filter(sc, key_root):
    # the driver is rebuilt from the recorded Y (not the exact increments) so
    # that replaying the stored CSV repeats the same arithmetic bit for bit
    sys_ = sc.system
    truth_key = key_root.child("truth")
    if sys_.kind == "cn":
        traj = simulate_truth_cn(sys_, sc.grid, truth_key, sc.initial)
        driver = extract_wtilde(sys_, traj.Y, sc.grid.dt)
        path = solve_zakai_cn(sys_, driver, sc.grid, sc.N, key_root.child("filter"), sc.initial)
    else:
        traj = simulate_truth_cs(sys_, sc.grid, truth_key, sc.initial)
        driver = extract_vtilde(sys_, traj.Y, sc.grid.dt)
        path = solve_zakai_cs(sys_, driver, sc.grid, sc.N, key_root.child("filter"), sc.initial)
    return traj, path


def cmd_simulate(sc, out=None, threads=1):
    """Simulate one truth trajectory and filter it; returns the run directory."""
    rd = run_dir(sc, out)
    os.makedirs(rd, exist_ok=True)
    traj, path = _truth_and_filter(sc, StreamKey(sc.seed))
    tag = _tag(sc)
    save_trajectory_csv(traj, os.path.join(rd, f"truth-{tag}.csv"))
    save_zakai_path(path, os.path.join(rd, f"zakai-{tag}"),
                    {"config_hash": sc.fingerprint, "seed": sc.seed, "stream": "filter"})
    manifest = {"config_hash": sc.fingerprint, "seed": sc.seed, "scenario": sc.raw, "versions": _versions(),
                "truth": f"truth-{tag}.csv", "zakai": f"zakai-{tag}"}
    with open(os.path.join(rd, f"manifest-{tag}.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rd


class _Context:
    """Ensembles shared by the suites of one ``verify`` invocation."""

    def __init__(self, sc, threads):
        self.sc, self.threads = sc, threads
        self._fine = self._coarse = None

    def ensembles(self):
        sc = self.sc
        if self._fine is None:
            phis = sc.tracked_phis
            self._fine = build_ensemble(sc.system, sc.grid, sc.initial, sc.N, sc.M, sc.seed, phis,
                                        threads=self.threads)
            allowance = sc.tolerances.get("allowance", "calibrate")
            if allowance == "calibrate":
                coarse = TimeGrid(sc.grid.T, sc.grid.steps // 2)
                needed = list(sc.check_times) + [sc.s, sc.t] + [x for c in sc.martingale_chis for x in c.times]
                try:
                    if sc.grid.steps % 2:
                        raise ValueError("odd number of steps")
                    for x in needed:
                        coarse.index(x)
                except ValueError as exc:
                    raise ConfigError("grid.steps", f"calibrating the allowance needs a grid of twice the step "
                                      f"containing every check time ({exc})") from None
                self._coarse = build_ensemble(sc.system, coarse, sc.initial, sc.N, sc.M, sc.seed, phis,
                                              substeps=2, threads=self.threads)
        return self._fine, self._coarse

    def fixed_allowance(self):
        a = self.sc.tolerances.get("allowance", "calibrate")
        return None if a == "calibrate" else float(a) * self.sc.grid.dt


def suite_fpe(ctx):
    sc = ctx.sc
    fine, coarse = ctx.ensembles()
    fixed = ctx.fixed_allowance()
    allow = calibrate_allowance(fine, coarse, sc.battery, sc.check_times) if fixed is None else {}
    reports = [mass_report(fine, sigma_mult=sc.tolerances["sigma_mult"])]
    for gi, G in enumerate(sc.battery):
        for t in sc.check_times:
            a = fixed if fixed is not None else allow[(gi, t)]
            reports.append(fpe_residual(fine, sc.system, G, t, allowance=a,
                                        sigma_mult=sc.tolerances["sigma_mult"], label=f"G{gi} t={t:g}"))
    return reports


def suite_martingale(ctx):
    sc = ctx.sc
    fine, coarse = ctx.ensembles()
    fixed = ctx.fixed_allowance()
    reports = []
    for pi, Phi in enumerate(sc.martingale_phis):
        for ci, chi in enumerate(sc.martingale_chis):
            if fixed is not None:
                a = fixed
            else:
                a = calibrate_martingale_allowance(fine, coarse, Phi, sc.s, sc.t, chi)
            r = martingale_residual(fine, sc.system, Phi, sc.s, sc.t, chi, allowance=a,
                                    sigma_mult=sc.tolerances["sigma_mult"], label=f"Phi{pi} chi{ci}")
            reports.append(r)
            reports.append(ResidualReport("martingale", f"Phi{pi} chi{ci} alpha-psd",
                                          min(0.0, r.metadata["alpha_min_eig"]), 0.0, 1e-10, 0.0,
                                          {"alpha_min_eig": r.metadata["alpha_min_eig"]}))
    return reports


def suite_lderiv(ctx):
    sc = ctx.sc
    rng = StreamKey(sc.seed).child("lderiv").generator()
    eps = float(sc.tolerances["lderiv_eps"])
    tol = float(sc.tolerances["lderiv_rel"])
    battery = sc.battery or None
    if battery is None:
        raise ConfigError("battery", "the lderiv suite needs at least one functional")
    reports, orders = [], []
    for i in range(int(sc.tolerances.get("lderiv_triples", 100))):
        G, mu, v = random_lderiv_triple(rng, battery, sc.initial, sc.system.n)
        res = lderiv_check(G, mu, v, eps)
        orders.append(res["order"])
        reports.append(ResidualReport("lderiv", f"triple {i}", res["rel_error"], 0.0, tol, 0.0, res))
    finite = [o for o in orders if np.isfinite(o)]
    med = float(np.median(finite)) if finite else float("nan")
    reports.append(ResidualReport("lderiv", "order", med - 1.0, 0.0, 0.2, 0.0, {"median_order": med}))
    return reports


def kalman_comparison(sc, threads=1):
    """Particle filter vs Kalman-Bucy on ``M`` truth paths; returns (mean_err, var_rel_err, ens)."""
    spec = linear_gaussian_from_scenario(sc)
    ens = build_ensemble(sc.system, sc.grid, sc.initial, sc.N, sc.M, sc.seed, (), driver_mode="truth",
                         threads=threads)
    mean_err, var_err = [], []
    for i, traj in enumerate(ens.truths):
        m_kb, P_kb = kalman_bucy(spec, traj.Y, sc.grid)
        mean_err.append(np.abs(ens.mean[i] - m_kb).sum(axis=-1).mean())
        var_p = np.diagonal(ens.cov[i], axis1=-2, axis2=-1)
        var_k = np.diagonal(P_kb, axis1=-2, axis2=-1)
        # relative error, read as absolute where the Riccati variance is zero
        scale = np.where(var_k > 0, var_k, 1.0)
        var_err.append((np.abs(var_p - var_k) / scale).mean())
    return float(np.mean(mean_err)), float(np.mean(var_err)), ens


def suite_kalman(ctx):
    sc = ctx.sc
    me, ve, _ = kalman_comparison(sc, ctx.threads)
    return [ResidualReport("kalman", "mean", me, 0.0, float(sc.tolerances["kalman_mean"]), 0.0,
                           {"M": sc.M, "N": sc.N, "dt": sc.grid.dt}),
            ResidualReport("kalman", "variance", ve, 0.0, float(sc.tolerances["kalman_var_rel"]), 0.0,
                           {"M": sc.M, "N": sc.N, "dt": sc.grid.dt})]


def decorrelated_system(sc):
    """The scenario system with its correlation coefficient set to zero."""
    cfg = json.loads(json.dumps(sc.raw["system"]))
    if cfg["variant"] == "cn":
        cfg["sigma1"] = {"kind": "constant", "value": np.zeros((cfg["n"], cfg["m"])).tolist()}
    else:
        m, d = cfg["m"], cfg["d"]
        if d < m:
            raise ConfigError("system.d", "decorrelating a sensor system needs d >= m")
        cfg["sigma2"] = np.zeros((m, m)).tolist()
        cfg["sigma3"] = np.eye(m, d).tolist()
    return system_from_config(cfg)


def reduction_gap(sc, sys0=None):
    """Largest pairing difference between the solver and the independent-noise reference."""
    sys0 = decorrelated_system(sc) if sys0 is None else sys0
    key = StreamKey(sc.seed).child("reduction")
    role = "Wtilde" if sys0.kind == "cn" else "Vtilde"
    driver = DriverPath.from_brownian(sample_brownian(sc.grid, sys0.m, key.child("driver")), role)
    solve = solve_zakai_cn if sys0.kind == "cn" else solve_zakai_cs
    a = solve(sys0, driver, sc.grid, sc.N, key.child("filter"), sc.initial)
    b = reference_independent_filter(sys0, driver, sc.grid, sc.N, key.child("filter"), sc.initial)
    phis = tuple(sc.dictionary.phis)
    gap = 0.0
    for j in range(sc.grid.steps + 1):
        ca, cb = a.cloud(j), b.cloud(j)
        for phi in phis + (None,):
            fa = np.ones(ca.N) if phi is None else phi.value(ca.atoms)
            fb = np.ones(cb.N) if phi is None else phi.value(cb.atoms)
            gap = max(gap, abs(float(np.sum(ca.weights * fa) / ca.N - np.sum(cb.weights * fb) / cb.N)))
    return gap


def suite_reduction(ctx):
    sc = ctx.sc
    gap = reduction_gap(sc)
    return [ResidualReport("reduction", "pairings", gap, 0.0, float(sc.tolerances["reduction"]), 0.0,
                           {"N": sc.N, "steps": sc.grid.steps})]


def _load_simulated(sc, out):
    rd = run_dir(sc, out)
    zdir = os.path.join(rd, f"zakai-{_tag(sc)}")
    if not os.path.exists(os.path.join(zdir, "manifest.json")):
        raise MissingArtifactError(f"no simulated path under {rd}; run 'simulate' first")
    return rd, load_zakai_path(zdir)[0]


def suite_audit(ctx, out=None):
    sc = ctx.sc
    _, path = _load_simulated(sc, out)
    fine, _ = ctx.ensembles()
    ceiling = float(sc.tolerances["audit_ceiling"])
    ens_rep = fpe_integrability_audit(fine, sc.system, ceiling=ceiling)
    path_rep = integrability_audit_path(path, sc.system, ceiling=ceiling)
    return [ResidualReport("audit", "ensemble", ens_rep.value, 0.0, ceiling, 0.0, {"ceiling": ceiling}),
            ResidualReport("audit", "path", path_rep.value, 0.0, ceiling, 0.0, {"ceiling": ceiling})]


def cmd_verify(sc, suites, out=None, threads=1):
    """Run the requested suites; returns ``(reports_by_suite, exit_status)``."""
    ctx = _Context(sc, threads)
    rd = run_dir(sc, out)
    os.makedirs(rd, exist_ok=True)
    runners = {"fpe": suite_fpe, "martingale": suite_martingale, "lderiv": suite_lderiv,
               "kalman": suite_kalman, "reduction": suite_reduction,
               "audit": lambda c: suite_audit(c, out)}
    results = {}
    for suite in suites:
        reports = runners[suite](ctx)
        results[suite] = reports
        write_jsonl(reports, os.path.join(rd, f"{suite}-{_tag(sc)}.jsonl"))
        write_summary_csv(reports, os.path.join(rd, f"{suite}-{_tag(sc)}.csv"))
    ok = all(r.passed for reps in results.values() for r in reps)
    return results, 0 if ok else 1


def cmd_audit(sc, out=None):
    """Integrability audit and pathwise Ito residuals of a simulated path."""
    rd, path = _load_simulated(sc, out)
    ceiling = float(sc.tolerances["audit_ceiling"])
    rep = integrability_audit_path(path, sc.system, ceiling=ceiling)
    reports = [ResidualReport("audit", "path", rep.value, 0.0, ceiling, 0.0, {"ceiling": ceiling})]
    for gi, G in enumerate(sc.battery):
        r = pathwise_ito_residual(path, sc.system, G)
        reports.append(ResidualReport("ito", f"G{gi}", float(r[-1]), 0.0, float("inf"), 0.0,
                                      {"max_abs": float(np.abs(r).max())}))
    write_jsonl(reports, os.path.join(rd, f"audit-path-{_tag(sc)}.jsonl"))
    write_summary_csv(reports, os.path.join(rd, f"audit-path-{_tag(sc)}.csv"))
    return reports, 0 if all(r.passed for r in reports) else 1


def cmd_replay(sc, out=None):
    """Re-filter the stored observations and compare with the stored path."""
    rd, saved = _load_simulated(sc, out)
    traj = load_trajectory_csv(os.path.join(rd, f"truth-{_tag(sc)}.csv"))
    sys_ = sc.system
    key = StreamKey(sc.seed).child("filter")
    if sys_.kind == "cn":
        path = solve_zakai_cn(sys_, extract_wtilde(sys_, traj.Y, sc.grid.dt), sc.grid, sc.N, key, sc.initial)
    else:
        path = solve_zakai_cs(sys_, extract_vtilde(sys_, traj.Y, sc.grid.dt), sc.grid, sc.N, key, sc.initial)
    d_atoms = float(np.abs(path.atoms - saved.atoms).max())
    # compare against the stored weight column itself; log/exp would add an ulp
    zdir = os.path.join(rd, f"zakai-{_tag(sc)}")
    files = load_zakai_path(zdir)[1]["snapshots"]
    d_w = max(float(np.abs(path.cloud(j).weights - load_cloud_csv(os.path.join(zdir, f)).weights).max())
              for j, f in enumerate(files))
    return {"atoms": d_atoms, "weights": d_w}, 0 if d_atoms == 0.0 and d_w == 0.0 else 1


def build_parser():
    p = argparse.ArgumentParser(prog="zakai-lab", description="Particle Zakai solvers and their verification.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output root (default: scenario 'output')")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--dt-override", type=float, default=None)
        sp.add_argument("--particles-override", type=int, default=None)

    common(sub.add_parser("simulate", help="simulate a truth trajectory and its particle filter"))
    v = sub.add_parser("verify", help="run verification suites")
    common(v)
    v.add_argument("--suite", action="append", choices=SUITES + ("all",), default=None)
    common(sub.add_parser("audit", help="audit a simulated path"))
    common(sub.add_parser("replay", help="re-run the filter on stored observations"))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.config, seed=args.seed, dt_override=args.dt_override,
                           particles_override=args.particles_override)
        if args.command == "simulate":
            print(cmd_simulate(sc, args.out, args.threads))
            return 0
        if args.command == "verify":
            suites = args.suite or ["all"]
            suites = list(SUITES) if "all" in suites else list(dict.fromkeys(suites))
            results, status = cmd_verify(sc, suites, args.out, args.threads)
            for suite, reps in results.items():
                npass = sum(r.passed for r in reps)
                print(f"{suite}: {npass}/{len(reps)} pass")
            return status
        if args.command == "audit":
            reports, status = cmd_audit(sc, args.out)
            for r in reports:
                print(f"{r.suite} {r.label}: {r.residual:.6g} ({'pass' if r.passed else 'fail'})")
            return status
        diffs, status = cmd_replay(sc, args.out)
        print(f"replay max differences: atoms {diffs['atoms']:.3g}, weights {diffs['weights']:.3g}")
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except ZakaiLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
