"""Command-line front end: ``quadmpc <command> --scenario FILE [--out DIR]``.

Exit codes: 0 success, 1 failed certificate, 2 infeasible tracking target, 3 invalid scenario.
"""
import argparse
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import report
from .errors import InfeasibleTargetError
from .invariant_sets import ConstraintSpec, max_admissible_invariant_set
from .model import quadrotor_model
from .scenario import ScenarioError, bundled_path, bundled_scenarios, load_scenario
from .sim import (certify_stability, compare_mpc_lqr, controller_config, is_settled,
                  peak_input, run_closed_loop, settling_time, sweep_horizon, sweep_weights)

OUT_ENV = "QUADMPC_OUT"
EXIT_OK, EXIT_CERT_FAILED, EXIT_INFEASIBLE_TARGET, EXIT_SCHEMA = 0, 1, 2, 3
DEFAULT_NS = (2, 5, 10, 50, 100)
DEFAULT_SCALES = (0.01, 0.1, 1.0, 10.0, 100.0)
REFERENCE_XF_ROWS = 480

log = logging.getLogger("quadmpc")


def _resolve_scenario(arg):
    path = Path(arg)
    if not path.exists() and arg in bundled_scenarios():
        path = bundled_path(arg)
    return load_scenario(path)


def _out_dir(args, command, name):
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / f"{command}-{name}"
    out.mkdir(parents=True, exist_ok=True)
    return out


class _Run:
    """Collects emitted files and writes the manifest at the end of a command."""

    def __init__(self, args, command, scenario):
        self.command = command
        self.scenario = scenario
        self.out = _out_dir(args, command, scenario.config.name if scenario else "default")
        self.plots = not args.no_plots
        self.files = []
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def trajectory(self, name, lg, title):
        report.write_trajectory(self.path(f"{name}.csv"), lg)
        if self.plots:
            report.plot_states(self.path(f"{name}_states.svg" if name != "trajectory"
                                         else "states.svg"), lg, title=f"{title}: pose")
            report.plot_inputs(self.path(f"{name}_inputs.svg" if name != "trajectory"
                                         else "inputs.svg"), lg, title=f"{title}: inputs")

    def finish(self, summary):
        sc = self.scenario
        manifest = {
            "command": self.command,
            "version": __version__,
            "csv_schema_version": report.CSV_SCHEMA_VERSION,
            "scenario": None if sc is None else sc.source,
            "scenario_sha256": None if sc is None else sc.sha256,
            "seed": None if sc is None else sc.config.seed,
            "output_dir": str(self.out),
            "files": sorted(self.files + ["manifest.json"]),
            "summary": summary,
            "wall_clock": {"started": self.started.isoformat(),
                           "finished": datetime.now(timezone.utc).isoformat(),
                           "elapsed_s": time.perf_counter() - self.t0},
        }
        report.write_manifest(self.out / "manifest.json", manifest)
        print(f"wrote {len(self.files) + 1} files to {self.out}")


def _with_seed(scenario, args):
    if args.seed is None:
        return scenario
    from dataclasses import replace
    return replace(scenario, config=scenario.config.with_(seed=args.seed))


def _log_summary(lg):
    return {"steps": lg.steps, "settled": is_settled(lg), "settling_time_s": settling_time(lg),
            "diverged": lg.diverged, "infeasible_steps": lg.infeasible_steps,
            "flagged_steps": int(np.sum(lg.flagged)),
            "final_state_inf_norm": float(np.max(np.abs(lg.x[-1])))}


def cmd_run(args):
    sc = _with_seed(_resolve_scenario(args.scenario), args)
    run = _Run(args, "run", sc)
    lg = run_closed_loop(sc.config)
    run.trajectory("trajectory", lg, sc.config.name)
    summary = _log_summary(lg)
    if lg.d_hat is not None:
        summary["d_hat_final"] = float(lg.d_hat[-1])
    run.finish(summary)
    return EXIT_OK


def cmd_sweep_n(args):
    sc = _with_seed(_resolve_scenario(args.scenario), args)
    Ns = args.Ns or sc.sweep.get("Ns") or DEFAULT_NS
    run = _Run(args, "sweep-n", sc)
    sw = sweep_horizon(sc.config, list(Ns))
    rows = [["N", "mean_ms", "median_ms", "settled", "infeasible_steps"]]
    rows += [[r["N"], r["mean_ms"], r["median_ms"], r["settled"], r["infeasible_steps"]]
             for r in sw.table]
    report.write_csv(run.path("timing.csv"), rows)
    for N, lg in sw.logs.items():
        report.write_trajectory(run.path(f"trajectory_N{N}.csv"), lg)
    if run.plots:
        lgs = sw.logs
        report.line_chart(run.path("sweep_n_Z.svg"), next(iter(lgs.values())).t,
                          {f"N={N}": lg.x[:, 2] for N, lg in lgs.items()},
                          title="altitude for each horizon", ylabel="Z [m]")
        report.line_chart(run.path("timing.svg"), [r["N"] for r in sw.table],
                          {"mean solve time": [r["mean_ms"] for r in sw.table]},
                          title="solve time per iterate", xlabel="N", ylabel="ms")
    run.finish({"Ns": list(Ns), "settled": {str(r["N"]): r["settled"] for r in sw.table},
                "infeasible_steps": {str(r["N"]): r["infeasible_steps"] for r in sw.table}})
    return EXIT_OK


def _cmd_sweep_weights(args, which):
    sc = _with_seed(_resolve_scenario(args.scenario), args)
    key = "q_scales" if which == "q" else "r_scales"
    scales = args.scales or sc.sweep.get(key) or DEFAULT_SCALES
    run = _Run(args, f"sweep-{which}", sc)
    logs, rows = sweep_weights(sc.config, **{key: list(scales)})
    out = [["scale", "settling_time_s", "peak_abs_u", "settled"]]
    out += [[r["scale"], r["settling_time"], r["peak_u"], r["settled"]] for r in rows]
    report.write_csv(run.path("summary.csv"), out)
    for lam, lg in logs.items():
        report.write_trajectory(run.path(f"trajectory_{which}{lam:g}.csv"), lg)
    if run.plots:
        t = next(iter(logs.values())).t
        report.line_chart(run.path(f"sweep_{which}_Z.svg"), t,
                          {f"{which.upper()} x {lam:g}": lg.x[:, 2] for lam, lg in logs.items()},
                          title=f"altitude for each {which.upper()} scale", ylabel="Z [m]")
        report.line_chart(run.path(f"sweep_{which}_F.svg"), t[:-1],
                          {f"{which.upper()} x {lam:g}": lg.u[:, 0] for lam, lg in logs.items()},
                          title=f"thrust for each {which.upper()} scale", ylabel="F [N]")
    run.finish({"scales": list(scales),
                "settling_time_s": {f"{r['scale']:g}": r["settling_time"] for r in rows},
                "peak_abs_u": {f"{r['scale']:g}": r["peak_u"] for r in rows}})
    return EXIT_OK


def cmd_sweep_q(args):
    return _cmd_sweep_weights(args, "q")


def cmd_sweep_r(args):
    return _cmd_sweep_weights(args, "r")


def cmd_compare_lqr(args):
    sc = _with_seed(_resolve_scenario(args.scenario), args)
    run = _Run(args, "compare-lqr", sc)
    mpc, lqr = compare_mpc_lqr(sc.config)
    run.trajectory("mpc", mpc, "MPC")
    run.trajectory("lqr", lqr, "finite-horizon LQR")
    rows = [["controller", "settled", "settling_time_s", "peak_abs_u", "flagged_steps",
             "final_state_inf_norm"]]
    for name, lg in (("mpc", mpc), ("lqr", lqr)):
        rows.append([name, is_settled(lg), settling_time(lg), peak_input(lg),
                     int(np.sum(lg.flagged)), float(np.max(np.abs(lg.x[-1])))])
    report.write_csv(run.path("summary.csv"), rows)
    run.finish({"mpc": _log_summary(mpc), "lqr": _log_summary(lqr)})
    return EXIT_OK


def cmd_certify(args):
    sc = _resolve_scenario(args.scenario) if args.scenario else None
    cfg_s = sc.config if sc else None
    if cfg_s is None:
        from .sim import ScenarioConfig
        cfg_s = ScenarioConfig()
    n = args.samples or (sc.certify.get("n_samples") if sc else None) or 1000
    seed = args.seed if args.seed is not None else cfg_s.seed
    run = _Run(args, "certify", sc)
    model = quadrotor_model()
    cfg = controller_config(cfg_s.with_(terminal_mode="set"))
    rep = certify_stability(model, cfg, n_samples=n, seed=seed)
    rows = [["check", "value", "passed"]] + [[a, b, c] for a, b, c in rep.rows()]
    report.write_csv(run.path("certificate.csv"), rows)
    if run.plots:
        report.line_chart(run.path("decrease_margin.svg"), np.arange(n),
                          {"-(Vf(x+) - Vf(x) + l(x,u))": rep.decrease_margins},
                          title="terminal cost decrease margin on samples of X_f",
                          xlabel="sample", ylabel="margin")
    run.finish({name: value for name, value, _ in rep.rows()} | {"passed": rep.passed})
    for name, value, ok in rep.rows():
        print(f"{'PASS' if ok else 'FAIL'} {name} = {value}")
    return EXIT_OK if rep.passed else EXIT_CERT_FAILED


def cmd_xf(args):
    sc = _resolve_scenario(args.scenario) if args.scenario else None
    from .sim import ScenarioConfig
    cfg_s = sc.config if sc else ScenarioConfig()
    run = _Run(args, "xf", sc)
    model = quadrotor_model()
    spec = ConstraintSpec.default(model.params)
    K = controller_config(cfg_s.with_(terminal_mode="cost_only")).K
    res = max_admissible_invariant_set(model.Phi, model.Gamma, K, spec)
    P = res.polyhedron
    header = [f"H{i}" for i in range(1, P.dim + 1)] + ["h"]
    rows = [header] + [list(P.H[i]) + [P.h[i]] for i in range(P.n_constraints)]
    report.write_csv(run.path("xf.csv"), rows)
    summary = {"t_star": res.t_star, "rows_per_step": res.rows_per_step,
               "rows": P.n_constraints, "reference_rows": REFERENCE_XF_ROWS, "lp_count": res.lp_count}
    run.finish(summary)
    print(f"X_f: t* = {res.t_star}, {P.n_constraints} rows (reference value {REFERENCE_XF_ROWS})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep-n": cmd_sweep_n, "sweep-q": cmd_sweep_q,
            "sweep-r": cmd_sweep_r, "compare-lqr": cmd_compare_lqr, "certify": cmd_certify,
            "xf": cmd_xf}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="quadmpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario YAML file, or the name of a bundled scenario")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--no-plots", action="store_true", help="skip SVG plots")
        return p

    common(sub.add_parser("run", help="closed-loop simulation of one scenario"))
    p = common(sub.add_parser("sweep-n", help="horizon sweep with solve-time table"))
    p.add_argument("--Ns", type=_ints, help="comma-separated horizons")
    for which in ("q", "r"):
        p = common(sub.add_parser(f"sweep-{which}", help=f"scale the {which.upper()} weight"))
        p.add_argument("--scales", type=_floats, help="comma-separated scale factors")
    common(sub.add_parser("compare-lqr", help="MPC against saturated finite-horizon LQR"))
    p = common(sub.add_parser("certify", help="numerical stability certificates"), False)
    p.add_argument("--samples", type=int, help="number of terminal-set samples")
    common(sub.add_parser("xf", help="export the terminal set as H|h rows"), False)
    sub.add_parser("scenarios", help="list bundled scenarios")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenarios":
        for name in bundled_scenarios():
            print(name)
        return EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except InfeasibleTargetError as exc:
        print(f"error: infeasible target: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_TARGET


if __name__ == "__main__":
    sys.exit(main())
