"""Command-line front end: scenario-driven runs, comparisons and audits.

Every run writes a per-run directory holding the trace CSV plus a JSON
summary; `compare` nests one directory per charging method.  Verbosity is
controlled with the ``PACKCHARGE_LOG`` environment variable (DEBUG, INFO,
WARNING; default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import defaults, nmpc, protocols, scenario as sc, sim
from . import cell as cm
from . import pack as pk
from .errors import ConfigError, ProtocolError, SolverError, StateValidityError

log = logging.getLogger("packcharge")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDITY = 3
EXIT_SOLVER = 4


def _setup_logging():
    level = os.environ.get("PACKCHARGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> sc.Scenario:
    if args.scenario:
        return sc.load_scenario(args.scenario)
    return sc.testbed_scenario()


def _outdir(args, scn, sub=None):
    base = args.out or scn.output_dir
    path = os.path.join(base, sub) if sub else base
    os.makedirs(path, exist_ok=True)
    return path


def _dump_summary(path, summary):
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_protocol_run(outdir, result, discharge=None):
    result.trace.to_csv(os.path.join(outdir, "trace.csv"))
    summary = dict(result.summary)
    summary["events"] = result.trace.events
    if discharge is not None:
        extracted_ah, dres = discharge
        dres.trace.to_csv(os.path.join(outdir, "discharge.csv"))
        summary["extracted_ah"] = extracted_ah
    _dump_summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def _ageing_deltas(scn, final_state):
    C_lost = scn.capacity0_as / 3600.0 - np.asarray(final_state.cells.C) / 3600.0
    dR = np.asarray(final_state.cells.R_sei) - scn.film_resistance0_ohm
    return ([float(v) for v in C_lost], [float(v) for v in dR])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args):
    scn = _load(args)
    out = _outdir(args, scn)
    delta = np.full(scn.N, args.duty)
    steps = max(1, int(round(args.duration / scn.cccv.Ts)))
    schedule = [sim.InputStep(I_branch=args.current, delta=delta,
                              Ts=scn.cccv.Ts)] * steps
    def validity(st, I_here):
        pk.validate_state(st, scn.plant, I_here)

    state, trace = sim.simulate(scn.initial_state(), schedule, args.mode,
                                scn.integrator, scn.plant, validity=validity)
    trace.to_csv(os.path.join(out, "trace.csv"))
    z = trace.z[-1]
    _dump_summary(os.path.join(out, "summary.json"), {
        "protocol": "open_loop", "mode": args.mode,
        "final_z": [float(v) for v in z],
        "peak_V": float(trace.V.max()), "peak_T": float(trace.T.max()),
        "duration_s": float(trace.t[-1] - trace.t[0])})
    print(f"simulate: {steps} steps, final SOC "
          f"{np.array2string(z, precision=4)} -> {out}")
    return EXIT_OK


def cmd_charge_cccv(args, chain_discharge=True, outdir=None):
    scn = _load(args)
    out = outdir or _outdir(args, scn)
    res = protocols.charge_cccv(scn.initial_state(), scn.cccv,
                                scn.integrator, scn.plant)
    discharge = (protocols.discharge_capacity_test(
        res.state, scn.plant, scn.discharge, scn.integrator)
        if chain_discharge else None)
    summary = _write_protocol_run(out, res, discharge)
    print(f"cc-cv: {summary['duration_s']:.0f} s, "
          f"{len(res.trace.events)} overcharge events -> {out}")
    return EXIT_OK


def cmd_charge_voltage(args, chain_discharge=True, outdir=None):
    scn = _load(args)
    out = outdir or _outdir(args, scn)
    res = protocols.charge_voltage_based(scn.initial_state(),
                                         scn.voltage_based,
                                         scn.integrator, scn.plant)
    discharge = (protocols.discharge_capacity_test(
        res.state, scn.plant, scn.discharge, scn.integrator)
        if chain_discharge else None)
    summary = _write_protocol_run(out, res, discharge)
    print(f"voltage-based: {summary['duration_s']:.0f} s, spread "
          f"{summary['final_z_spread']:.4f} -> {out}")
    return EXIT_OK


def _run_nmpc(scn):
    return nmpc.receding_horizon_charge(
        scn.initial_state(), scn.plant, scn.control, scn.weights,
        scn.limits, scn.solver, scn.integrator,
        z_done=scn.soc_done, max_hours=scn.nmpc_max_hours)


def cmd_charge_nmpc(args, chain_discharge=True, outdir=None):
    scn = _load(args)
    out = outdir or _outdir(args, scn)
    run = _run_nmpc(scn)
    run.trace.to_csv(os.path.join(out, "trace.csv"))
    nmpc.write_solve_log(run.solve_log, os.path.join(out, "solve_log.csv"))
    summary = dict(run.summary)
    if chain_discharge:
        extracted_ah, dres = protocols.discharge_capacity_test(
            run.state, scn.plant, scn.discharge, scn.integrator)
        dres.trace.to_csv(os.path.join(out, "discharge.csv"))
        summary["extracted_ah"] = extracted_ah
    _dump_summary(os.path.join(out, "summary.json"), summary)
    print(f"nmpc: {summary['duration_s']:.0f} s, {summary['control_steps']} "
          f"solves, spread {summary['final_z_spread']:.4f} -> {out}")
    return EXIT_OK


def cmd_discharge_test(args):
    scn = _load(args)
    out = _outdir(args, scn)
    extracted_ah, res = protocols.discharge_capacity_test(
        scn.initial_state(), scn.plant, scn.discharge, scn.integrator)
    res.trace.to_csv(os.path.join(out, "trace.csv"))
    summary = dict(res.summary)
    summary["extracted_ah"] = extracted_ah
    _dump_summary(os.path.join(out, "summary.json"), summary)
    print(f"discharge: {extracted_ah:.3f} Ah extracted -> {out}")
    return EXIT_OK


def run_compare(scn: sc.Scenario, out: str) -> dict:
    """Three charges from identical initial states, each chained into the
    reference discharge; returns the comparison record."""
    state0 = scn.initial_state()
    report = {}

    res = protocols.charge_cccv(state0, scn.cccv, scn.integrator, scn.plant)
    dis = protocols.discharge_capacity_test(res.state, scn.plant,
                                            scn.discharge, scn.integrator)
    d = os.path.join(out, "cccv"); os.makedirs(d, exist_ok=True)
    summary = _write_protocol_run(d, res, dis)
    lost, dR = _ageing_deltas(scn, res.state)
    summary.update(capacity_lost_ah=lost, film_growth_ohm=dR)
    _dump_summary(os.path.join(d, "summary.json"), summary)
    report["cccv"] = summary
    log.info("compare: cc-cv done (%.0f s charge)", summary["duration_s"])

    res = protocols.charge_voltage_based(state0, scn.voltage_based,
                                         scn.integrator, scn.plant)
    dis = protocols.discharge_capacity_test(res.state, scn.plant,
                                            scn.discharge, scn.integrator)
    d = os.path.join(out, "voltage"); os.makedirs(d, exist_ok=True)
    summary = _write_protocol_run(d, res, dis)
    lost, dR = _ageing_deltas(scn, res.state)
    summary.update(capacity_lost_ah=lost, film_growth_ohm=dR)
    _dump_summary(os.path.join(d, "summary.json"), summary)
    report["voltage"] = summary
    log.info("compare: voltage-based done (%.0f s charge)",
             summary["duration_s"])

    run = _run_nmpc(scn)
    d = os.path.join(out, "nmpc"); os.makedirs(d, exist_ok=True)
    run.trace.to_csv(os.path.join(d, "trace.csv"))
    nmpc.write_solve_log(run.solve_log, os.path.join(d, "solve_log.csv"))
    extracted_ah, dres = protocols.discharge_capacity_test(
        run.state, scn.plant, scn.discharge, scn.integrator)
    dres.trace.to_csv(os.path.join(d, "discharge.csv"))
    summary = dict(run.summary)
    summary["extracted_ah"] = extracted_ah
    lost, dR = _ageing_deltas(scn, run.state)
    summary.update(capacity_lost_ah=lost, film_growth_ohm=dR)
    _dump_summary(os.path.join(d, "summary.json"), summary)
    report["nmpc"] = summary
    log.info("compare: nmpc done (%.0f s charge)", summary["duration_s"])

    _dump_summary(os.path.join(out, "compare.json"), report)
    return report


def _print_compare_table(report):
    cols = ["method", "duration_s", "extracted_ah", "z_spread",
            "peak_V", "peak_T", "events"]
    print("  ".join(f"{c:>12}" for c in cols))
    for name in ("cccv", "voltage", "nmpc"):
        s = report[name]
        row = [name, f"{s['duration_s']:.0f}", f"{s['extracted_ah']:.3f}",
               f"{s['final_z_spread']:.4f}", f"{s['peak_V']:.4f}",
               f"{s['peak_T']:.2f}", str(len(s.get("events", [])))]
        print("  ".join(f"{c:>12}" for c in row))


def cmd_compare(args):
    scn = _load(args)
    out = _outdir(args, scn)
    report = run_compare(scn, out)
    _print_compare_table(report)
    return EXIT_OK


def cmd_gradcheck(args):
    scn = _load(args)
    rng = np.random.default_rng(args.seed)
    state0 = scn.initial_state()
    y0 = nmpc.restrict_state(state0, scn.plant, scn.control)
    obj = nmpc._Objective(y0, np.zeros(scn.N + 1), scn.weights, scn.limits,
                          scn.solver, scn.control)
    H, N = scn.solver.H, scn.N
    worst = 0.0
    for _ in range(args.points):
        x = np.concatenate([rng.uniform(0.05, 0.95, (H + 1) * N),
                            rng.uniform(-0.9, -0.1, H + 1)
                            * scn.weights.I_max])
        _, g = obj.fun_and_grad(x)
        g_ref = obj.grad_central(x)
        denom = max(float(np.linalg.norm(g_ref)), 1e-12)
        rel = float(np.linalg.norm(g - g_ref)) / denom
        worst = max(worst, rel)
    print(f"gradcheck: {args.points} points, worst relative error "
          f"{worst:.3e}")
    return EXIT_OK if worst < 1e-4 else EXIT_SOLVER


def cmd_convergence(args):
    scn = _load(args)
    out = _outdir(args, scn)
    state0 = scn.initial_state()
    y0 = pk.flatten(state0, scn.plant)
    rng = np.random.default_rng(args.seed)
    rows = []
    for base in (20, 40):
        e1, e2, ratio = richardson_ratio(scn.control, scn.soc0,
                                         scn.capacity0_as,
                                         scn.film_resistance0_ohm,
                                         scn.T0, base)
        rows.append(("rk4", base, e1))
        rows.append(("rk4", 2 * base, e2))
        print(f"rk4 h=Ts/{base}: halving ratio {ratio:.2f}")
    errs = smoothing_errors(scn, rng)
    for a, err in zip((5.0, 20.0, 50.0), errs["sigmoid"]):
        rows.append(("sigmoid", a, err))
    rows.append(("average", 0, errs["average_T"]))
    path = os.path.join(out, "convergence.csv")
    with open(path, "w") as f:
        f.write("sweep,parameter,error\n")
        for r in rows:
            f.write("%s,%g,%.12g\n" % r)
    for r in rows:
        print("%-8s %8g  %.6e" % r)
    return EXIT_OK


def richardson_ratio(params, z0, C0_as, R_sei0, T0, base_substeps,
                     mode="switched", delta=None):
    """Consecutive halving-error ratio of the integrator on a smooth input.

    The coolant's threshold switch is disabled (it chatters, flooring the
    error at first order) and the default full duty makes the switched
    input independent of the substep grid; sigmoid mode is smooth for any
    duty.  States are scaled before the norm; the flux states are ~1e8 in
    magnitude and would otherwise drown everything in their roundoff floor.
    """
    net0 = params.network
    net = pk.ThermalNetwork(R_cell=net0.R_cell, R_sink=net0.R_sink,
                            C_th=net0.C_th, C_th_sink=net0.C_th_sink,
                            xi_power=0.0, T_norm=net0.T_norm)
    p = pk.PackParams(cells=params.cells, network=net,
                      T_env=params.T_env, N=params.N)
    cells = cm.rested_state(p.cells, z0, C0_as, R_sei0, T0)
    y0 = pk.flatten(pk.PackState(cells=cells, T_sink=T0), p)
    if delta is None:
        delta = np.ones(p.N)
    step = sim.InputStep(I_branch=-7.5, delta=delta, Ts=10.0)

    def final(s):
        cfg = sim.IntegratorConfig(substeps=s, sample_every=s)
        y, _, _ = sim.integrate_step(y0.copy(), step, mode, cfg, p)
        return y

    scale = np.abs(final(8 * base_substeps))
    scale[scale < 1.0] = 1.0
    e1 = float(np.linalg.norm((final(base_substeps)
                               - final(2 * base_substeps)) / scale))
    e2 = float(np.linalg.norm((final(2 * base_substeps)
                               - final(4 * base_substeps)) / scale))
    return e1, e2, e1 / e2


def smoothing_errors(scn, rng, n_steps=20, substeps=3200):
    """Final-state errors of the smoothed duty modes vs the switched plant.

    Duties are drawn from a 1/16 grid so the switching instants land
    exactly on the substep boundaries of the reference run.
    """
    y0 = pk.flatten(scn.initial_state(), scn.plant)
    Ts = 10.0
    schedule = [sim.InputStep(
        I_branch=float(-7.5 * rng.uniform(0.3, 1.0)),
        delta=rng.integers(4, 16, scn.N) / 16.0, Ts=Ts)
        for _ in range(n_steps)]

    def final(mode, a=5.0):
        cfg = sim.IntegratorConfig(substeps=substeps, sample_every=substeps,
                                   sigmoid_a=a)
        y = y0.copy()
        ch = np.zeros(scn.N)
        t = 0.0
        for step in schedule:
            y, ch, _ = sim.integrate_step(y, step, mode, cfg, scn.plant,
                                          t0=t, charge0=ch)
            t += Ts
        return y

    sw = final("switched")
    scale = np.abs(sw).copy()
    scale[scale < 1.0] = 1.0

    def T_err(y):
        s = pk.unflatten(y - sw, scn.plant)
        return float(np.linalg.norm(np.concatenate(
            [np.asarray(s.cells.T), [s.T_sink]])))

    out = {"sigmoid": [], "sigmoid_T": []}
    for a in (5.0, 20.0, 50.0):
        y = final("sigmoid", a)
        out["sigmoid"].append(float(np.linalg.norm((y - sw) / scale)))
        out["sigmoid_T"].append(T_err(y))
    y = final("average")
    out["average"] = float(np.linalg.norm((y - sw) / scale))
    out["average_T"] = T_err(y)
    return out


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _build_parser():
    p = argparse.ArgumentParser(
        prog="packcharge",
        description="Reduced-order battery pack simulation and "
                    "balancing-aware charging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="scenario YAML (default: shipped "
                                           "six-cell testbed)")
        sp.add_argument("--out", help="output directory (default from "
                                      "scenario)")
        sp.add_argument("--seed", type=int, default=0,
                        help="seed for randomized sweeps")

    s = sub.add_parser("simulate", help="open-loop run of a constant input")
    common(s)
    s.add_argument("--mode", choices=["switched", "sigmoid", "average"],
                   default="switched")
    s.add_argument("--current", type=float, default=-3.75,
                   help="branch current in A (negative = charging)")
    s.add_argument("--duty", type=float, default=1.0)
    s.add_argument("--duration", type=float, default=600.0,
                   help="simulated seconds")
    s.set_defaults(func=cmd_simulate)

    for name, fn in (("charge-cccv", cmd_charge_cccv),
                     ("charge-voltage", cmd_charge_voltage),
                     ("charge-nmpc", cmd_charge_nmpc)):
        s = sub.add_parser(name, help=f"run the {name[7:]} charge and the "
                                      "reference discharge")
        common(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("discharge-test",
                       help="reference discharge from the scenario state")
    common(s)
    s.set_defaults(func=cmd_discharge_test)

    s = sub.add_parser("compare",
                       help="three-way charging comparison on one testbed")
    common(s)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gradcheck",
                       help="finite-difference audit of the objective "
                            "gradient")
    common(s)
    s.add_argument("--points", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("convergence",
                       help="integrator and duty-smoothing refinement sweeps")
    common(s)
    s.set_defaults(func=cmd_convergence)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StateValidityError, ProtocolError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_VALIDITY
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
