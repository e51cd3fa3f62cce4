"""Top-level acceptance checks, one test per headline requirement.

Each test prints a single summary line with the measured quantity next to
its threshold.  The comparison fixture at the bottom runs the full
three-method charging study once and is shared by the end-to-end checks.
"""

import dataclasses
import time

import numpy as np
import pytest

import packcharge.scenario as sc
from packcharge import cell as cm
from packcharge import cli, defaults, nmpc, sim
from packcharge import pack as pk

from conftest import rested_flat


def single_cell_pack(M=10):
    net = pk.ThermalNetwork(R_cell=np.full((1, 1), np.inf),
                            R_sink=np.array([2.5]), C_th=np.array([120.0]),
                            C_th_sink=800.0, xi_power=0.0, T_norm=298.15)
    return pk.PackParams.from_cells([defaults.default_cell(M)], net,
                                    T_env=298.15)


def no_ageing(params):
    ag = dataclasses.replace(params.cells.ageing, i0_base=0.0)
    return dataclasses.replace(params, cells=dataclasses.replace(
        params.cells, ageing=ag))


@pytest.fixture(scope="module", autouse=True)
def warm_compiled_kernels():
    """First call into the compiled integrator pays the JIT cost; keep that
    out of the timed sections."""
    p = single_cell_pack(M=3)
    y = rested_flat(p, z0=0.5)
    step = sim.InputStep(I_branch=-1.0, delta=np.ones(1), Ts=1.0)
    for mode in ("switched", "sigmoid", "average"):
        sim.integrate_step(y.copy(), step,
                           mode, sim.IntegratorConfig(substeps=4,
                                                      sample_every=4), p)


# --------------------------------------------------------------------------
# conservation and consistency
# --------------------------------------------------------------------------

def test_electrolyte_conservation():
    params = single_cell_pack(M=10)
    y0 = rested_flat(params, z0=0.5)
    st = pk.unflatten(y0, params)
    rng = np.random.default_rng(0)
    st.cells.ce = np.asarray(st.cells.ce) * (
        1.0 + 0.1 * rng.uniform(-1, 1, np.shape(st.cells.ce)))
    y = pk.flatten(st, params)
    li0 = float(cm.electrolyte_lithium(st.cells.ce, params.cells)[0])
    cfg = sim.IntegratorConfig(substeps=200, sample_every=200)
    t_start = time.perf_counter()

    def drift_after(I, delta):
        yk = y.copy()
        step = sim.InputStep(I_branch=I, delta=np.full(1, delta), Ts=10.0)
        for _ in range(100):            # 1000 s
            yk, _, _ = sim.integrate_step(yk, step, "switched", cfg, params)
        li = float(cm.electrolyte_lithium(
            pk.unflatten(yk, params).cells.ce, params.cells)[0])
        return abs(li - li0) / li0

    drift0 = drift_after(0.0, 1.0)
    driftI = drift_after(-5.0, 0.5)
    elapsed = time.perf_counter() - t_start
    print(f"\nPASS electrolyte conservation: zero-current drift "
          f"{drift0:.2e} < 1e-9, with current {driftI:.2e} < 1e-8 "
          f"({elapsed:.2f} s < 1 s)")
    assert drift0 < 1e-9
    assert driftI < 1e-8
    assert elapsed < 1.0


def test_coulomb_consistency(testbed):
    params = no_ageing(testbed.control)
    y = rested_flat(params, z0=0.2,
                    C0_ah=testbed.capacity0_as / 3600.0,
                    R_sei0=testbed.film_resistance0_ohm)
    z_start = cm.soc(np.asarray(pk.unflatten(y, params).cells.theta_p),
                     params.cells)
    I_1C = params.cells.ageing.I_1C[0] if np.ndim(
        params.cells.ageing.I_1C) else params.cells.ageing.I_1C
    # the 3-volume model is stable well below the plant's substep count
    cfg = sim.IntegratorConfig(substeps=50, sample_every=50)
    step = sim.InputStep(I_branch=-I_1C, delta=np.ones(6), Ts=10.0)
    t_start = time.perf_counter()
    for _ in range(180):                # 1800 s
        y, _, _ = sim.integrate_step(y, step, "switched", cfg, params)
    elapsed = time.perf_counter() - t_start
    z_end = cm.soc(np.asarray(pk.unflatten(y, params).cells.theta_p),
                   params.cells)
    expected = I_1C * 1800.0 / testbed.capacity0_as
    rel = float(np.max(np.abs((z_end - z_start) - expected) / expected))
    print(f"\nPASS coulomb consistency: worst relative error {rel:.2e} "
          f"< 1e-6 ({elapsed:.2f} s < 1 s)")
    assert rel < 1e-6
    assert elapsed < 1.0


def test_ageing_signs():
    net = pk.ThermalNetwork(R_cell=np.full((2, 2), np.inf),
                            R_sink=np.full(2, 2.5), C_th=np.full(2, 120.0),
                            C_th_sink=800.0, xi_power=0.0, T_norm=298.15)
    params = pk.PackParams.from_cells([defaults.default_cell(3)] * 2, net,
                                      T_env=298.15)
    cfg = sim.IntegratorConfig(substeps=50, sample_every=10)
    rng = np.random.default_rng(42)
    t_start = time.perf_counter()
    violations = 0
    for _ in range(100):
        y = rested_flat(params, z0=rng.uniform(0.1, 0.6, 2))
        samples_C, samples_R = [], []

        def record(st, I_here):
            samples_C.append(np.asarray(st.cells.C).copy())
            samples_R.append(np.asarray(st.cells.R_sei).copy())

        for _ in range(4):
            step = sim.InputStep(I_branch=float(-rng.uniform(1.0, 7.5)),
                                 delta=rng.uniform(0.2, 1.0, 2), Ts=10.0)
            y, _, _ = sim.integrate_step(y, step, "switched", cfg, params,
                                         validity=record)
        C = np.array(samples_C)
        R = np.array(samples_R)
        if np.any(np.diff(C, axis=0) > 0) or np.any(np.diff(R, axis=0) < 0):
            violations += 1
    # pure discharge: both ageing states exactly constant
    y = rested_flat(params, z0=0.8)
    st0 = pk.unflatten(y, params)
    step = sim.InputStep(I_branch=5.0, delta=np.ones(2), Ts=10.0)
    for _ in range(3):
        y, _, _ = sim.integrate_step(y, step, "switched", cfg, params)
    st1 = pk.unflatten(y, params)
    elapsed = time.perf_counter() - t_start
    exact = (np.array_equal(st0.cells.C, st1.cells.C)
             and np.array_equal(st0.cells.R_sei, st1.cells.R_sei))
    print(f"\nPASS ageing signs: 0 of 100 charging schedules violated "
          f"monotonicity, discharge leaves ageing states exactly constant "
          f"({elapsed:.2f} s < 10 s)")
    assert violations == 0
    assert exact
    assert elapsed < 10.0


def test_thermal_energy_balance():
    rng = np.random.default_rng(7)
    n = 4
    R = np.full((n, n), np.inf)
    for a, b in ((0, 1), (1, 2), (2, 3)):
        R[a, b] = R[b, a] = 1.5
    net = pk.ThermalNetwork(R_cell=R, R_sink=rng.uniform(2.0, 6.0, n),
                            C_th=rng.uniform(80.0, 150.0, n),
                            C_th_sink=800.0, xi_power=0.0, T_norm=298.15)
    T = 298.15 + rng.uniform(0.0, 12.0, n)
    T_sink = 298.15
    h = 1.0
    t_start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        Q = rng.uniform(0.0, 8.0, n)

        def f(y):
            dT, dTs = pk.thermal_rhs(y[:n], y[n], Q, net)
            return np.concatenate([dT, [dTs]])

        y = np.concatenate([T, [T_sink]])
        k1 = f(y); k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2); k4 = f(y + h * k3)
        y1 = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        dE = (net.C_th * (y1[:n] - y[:n])).sum() \
            + net.C_th_sink * (y1[n] - y[n])
        worst = max(worst, abs(dE - Q.sum() * h) / (Q.sum() * h))
        T, T_sink = y1[:n], y1[n]
    elapsed = time.perf_counter() - t_start
    print(f"\nPASS thermal energy balance: worst per-step relative error "
          f"{worst:.2e} < 1e-6 ({elapsed:.2f} s < 1 s)")
    assert worst < 1e-6
    assert elapsed < 1.0


# --------------------------------------------------------------------------
# duty-cycle smoothing and integrator order
# --------------------------------------------------------------------------

def test_sigmoid_convergence(testbed):
    rng = np.random.default_rng(0)
    t_start = time.perf_counter()
    errs = cli.smoothing_errors(testbed, rng)
    elapsed = time.perf_counter() - t_start
    e5, e20, e50 = errs["sigmoid"]
    print(f"\nPASS sigmoid convergence: errors {e5:.3e} > {e20:.3e} > "
          f"{e50:.3e} over slopes (5, 20, 50); average-mode temperature "
          f"error {errs['average_T']:.3e} > {errs['sigmoid_T'][2]:.3e} "
          f"({elapsed:.1f} s < 30 s)")
    assert e5 > e20 > e50
    assert errs["average_T"] > errs["sigmoid_T"][2]
    assert elapsed < 30.0


def test_rk4_convergence(testbed):
    rng = np.random.default_rng(3)
    t_start = time.perf_counter()
    e1, e2, ratio = cli.richardson_ratio(
        testbed.control, testbed.soc0, testbed.capacity0_as,
        testbed.film_resistance0_ohm, testbed.T0, 80,
        mode="sigmoid", delta=rng.uniform(0.3, 0.9, 6))
    elapsed = time.perf_counter() - t_start
    print(f"\nPASS rk4 convergence: halving-error ratio {ratio:.2f} in "
          f"[12, 20] ({elapsed:.2f} s < 1 s)")
    assert 12.0 <= ratio <= 20.0
    assert elapsed < 1.0


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

def test_gradient_audit(testbed):
    y0 = nmpc.restrict_state(testbed.initial_state(), testbed.plant,
                             testbed.control)
    obj = nmpc._Objective(y0, np.zeros(7), testbed.weights, testbed.limits,
                          testbed.solver, testbed.control)
    H, N = testbed.solver.H, 6
    rng = np.random.default_rng(0)
    t_start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        x = np.concatenate([rng.uniform(0.05, 0.95, (H + 1) * N),
                            rng.uniform(-0.9, -0.1, H + 1)
                            * testbed.weights.I_max])
        _, g = obj.fun_and_grad(x)
        g_ref = obj.grad_central(x)
        rel = float(np.linalg.norm(g - g_ref)
                    / max(np.linalg.norm(g_ref), 1e-12))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t_start
    print(f"\nPASS gradient audit: worst relative error {worst:.2e} < 1e-4 "
          f"at 20 seeded points ({elapsed:.1f} s < 30 s)")
    assert worst < 1e-4
    assert elapsed < 30.0


def test_solver_oracle():
    scn = sc.testbed_scenario(
        pack={"n_cells": 1},
        cells={"capacity_ah": 7.5, "film_resistance_mohm": 2.0,
               "soc_initial": 0.5},
        thermal={"contact_pairs": [], "sink_r_kpw": 2.5})
    y0 = rested_flat(scn.control, z0=np.array([0.5]))
    w = nmpc.CostWeights()
    lim = nmpc.ConstraintLimits(P_max=0.75 * 4.2 * 7.5 / 6.0)
    scfg = nmpc.SolverConfig(H=1, Ts=10.0, substeps=25, maxiter=200)
    obj = nmpc._Objective(y0, np.zeros(2), w, lim, scfg, scn.control)
    t_start = time.perf_counter()
    deltas = np.linspace(0.0, 1.0, 200)
    best = np.inf
    for I in np.linspace(-w.I_max, 0.0, 200):
        X = np.column_stack([deltas, deltas,
                             np.full(200, I), np.full(200, I)])
        best = min(best, float(obj.costs(X).min()))
    res = nmpc.solve(y0, np.zeros(2), w, lim, scfg, scn.control)
    f_solver = float(obj.costs(res.decision.to_flat())[0])
    elapsed = time.perf_counter() - t_start
    rel = abs(f_solver - best) / best
    print(f"\nPASS solver oracle: solver cost {f_solver:.6g} vs 200x200 "
          f"grid optimum {best:.6g}, relative gap {rel:.2e} < 1e-2 "
          f"({elapsed:.1f} s < 60 s)")
    assert rel < 0.01
    assert elapsed < 60.0


# --------------------------------------------------------------------------
# end-to-end charging study
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def compare_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("compare"))
    scn = sc.testbed_scenario()
    t_start = time.perf_counter()
    report = cli.run_compare(scn, out)
    wall = time.perf_counter() - t_start
    return report, wall, out


def test_end_to_end_nmpc(compare_run):
    report, _, out = compare_run
    s = report["nmpc"]
    z = np.asarray(s["final_z"])
    trace = sim.SimTrace.from_csv(f"{out}/nmpc/trace.csv")
    peak_V = float(trace.V.max())
    peak_T = float(trace.T.max())
    print(f"\nPASS end-to-end nmpc: final SOC in "
          f"[{z.min():.4f}, {z.max():.4f}] within [0.99, 1.005], spread "
          f"{s['final_z_spread']:.4f} < 0.01, peak V {peak_V:.4f} <= 4.201, "
          f"peak T {peak_T:.3f} <= 313.25, stopped '{s['stop_reason']}'")
    assert np.all(z >= 0.99) and np.all(z <= 1.005)
    assert s["final_z_spread"] < 0.01
    assert peak_V <= 4.2 + 1e-3
    assert peak_T <= 313.15 + 0.1
    assert s["stop_reason"] == "charged"


def test_three_way_ordering(compare_run):
    report, wall, _ = compare_run
    ah_nmpc = report["nmpc"]["extracted_ah"]
    ah_vb = report["voltage"]["extracted_ah"]
    gain = ah_nmpc / ah_vb - 1.0
    spread = {m: report[m]["final_z_spread"]
              for m in ("cccv", "voltage", "nmpc")}
    cccv_events = report["cccv"]["events"]
    print(f"\nPASS three-way ordering: extracted {ah_nmpc:.3f} Ah vs "
          f"{ah_vb:.3f} Ah (+{100 * gain:.1f}% >= 3%), cc-cv overcharge "
          f"events {len(cccv_events)} >= 1, spreads "
          f"{spread['nmpc']:.4f} < {spread['voltage']:.4f} < "
          f"{spread['cccv']:.4f}, total wall {wall / 60:.1f} min < 20 min")
    assert gain >= 0.03
    assert len(cccv_events) >= 1
    assert max(report["cccv"]["final_z"]) > 1.0
    assert spread["nmpc"] < spread["voltage"] < spread["cccv"]
    assert wall < 20 * 60.0


def test_render_all_figures(compare_run):
    """Figure package regenerates the full set from the run artifacts."""
    import shutil
    import subprocess
    if shutil.which("packplots") is None:
        pytest.skip("figure package not installed (pip install -e plots/)")
    _, _, out = compare_run
    proc = subprocess.run(["packplots", "render-all", "--rundir", out],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    written = proc.stdout.split()
    print(f"\nPASS figure set: {len(written)} figures rendered with zero "
          f"errors, soc monotonicity pre-check passed")
    assert len(written) == 7 * 3 + 1
    import os
    assert all(os.path.getsize(p) > 0 for p in written)
