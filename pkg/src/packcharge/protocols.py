"""Baseline charging strategies and the post-charge capacity test.

Two baselines frame the comparison with the predictive controller:

* CC-CV on the series string: identical current through every cell, then a
  constant-total-voltage phase.  Weak cells overcharge, which is recorded
  rather than rejected (demonstrating the failure mode is the point).
* Voltage-based bypass: constant current per cell until that cell reaches
  its voltage ceiling, then the cell is bypassed permanently.

The discharge test extracts charge at 1C until the first cell hits the
cutoff voltage and reports the ampere-hours delivered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cell as cm
from . import pack as pk
from . import sim
from .errors import ConfigError, ProtocolError

_BISECT_TOL_V = 1e-3      # CV regulation tolerance on total voltage, V
_BISECT_MAX_ITER = 40
_OVERCHARGE_HARD_Z = 1.3  # safety rail: abort CC-CV past this SOC


@dataclass(frozen=True)
class CccvConfig:
    """Series CC-CV settings."""

    I_cc: float                   # constant-current magnitude, A (> 0)
    V_total_limit: float          # series voltage threshold, V
    I_cutoff: float               # CV-phase terminal current magnitude, A
    per_cell_guard: float | None = None   # optional per-cell abort ceiling, V
    Ts: float = 10.0
    max_hours: float = 10.0

    def __post_init__(self):
        if self.I_cc <= 0 or self.V_total_limit <= 0:
            raise ConfigError("I_cc and V_total_limit must be positive")
        if not 0 < self.I_cutoff < self.I_cc:
            raise ConfigError("need 0 < I_cutoff < I_cc")


@dataclass(frozen=True)
class VoltageBasedConfig:
    """Per-cell bypass-on-voltage settings."""

    I_cc: float
    V_cell_max: float = 4.2
    Ts: float = 10.0
    max_hours: float = 10.0

    def __post_init__(self):
        if self.I_cc <= 0 or self.V_cell_max <= 0:
            raise ConfigError("currents and voltages must be positive")


@dataclass(frozen=True)
class DischargeConfig:
    I_1C: float | None = None     # discharge current, A; default from params
    V_cutoff: float = 2.7
    Ts: float = 10.0
    max_hours: float = 10.0


@dataclass
class ProtocolResult:
    """Trace plus the final state (needed to chain the discharge test)."""

    trace: sim.SimTrace
    state: pk.PackState
    summary: dict = field(default_factory=dict)


def _voltages(state: pk.PackState, I_app, params: pk.PackParams):
    return np.asarray(cm.terminal_voltage(state.cells, I_app, params.cells,
                                          strict=False))


def _summary(trace: sim.SimTrace, params: pk.PackParams, extra=None):
    out = {
        "final_z": [float(v) for v in trace.z[-1]],
        "final_z_spread": float(trace.z[-1].max() - trace.z[-1].min()),
        "peak_V": float(trace.V.max()),
        "peak_T": float(trace.T.max()),
        "duration_s": float(trace.t[-1] - trace.t[0]),
        "stop_reason": trace.stop_reason,
        "n_events": len(trace.events),
    }
    if extra:
        out.update(extra)
    return out


def _predict_total_voltage(y, I, substeps, Ts, params):
    """Total series voltage after one control step at constant current I."""
    h = Ts / substeps
    table = np.full((substeps, params.N), I)
    step = sim.InputStep(I_branch=I, delta=np.ones(params.N), Ts=Ts)
    cfg = sim.IntegratorConfig(substeps=substeps, sample_every=substeps)
    y1 = sim._advance_block(y.copy(), 0, substeps, h, step, "average", cfg,
                            params, lambda t: table[0], table * h)
    st = pk.unflatten(y1, params)
    return float(np.sum(_voltages(st, np.full(params.N, I), params)))


def _cv_current(y, target, I_cc, config: sim.IntegratorConfig, Ts, params):
    """Bisection on the branch current holding the predicted total voltage."""

    def f(I):
        return _predict_total_voltage(y, I, config.substeps, Ts, params) - target

    lo, hi = -I_cc, 0.0
    f_lo, f_hi = f(lo), f(hi)
    if f_lo <= 0.0:
        return lo            # limit unreachable even at full current
    if f_hi >= 0.0:
        return hi            # above the limit even at rest
    mid = 0.5 * (lo + hi)
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if not np.isfinite(f_mid):
            raise ProtocolError("CV-phase bisection lost its voltage bracket")
        if abs(f_mid) < _BISECT_TOL_V:
            return mid
        if f_mid > 0.0:
            lo = mid
        else:
            hi = mid
    return mid


def charge_cccv(state: pk.PackState, cfg: CccvConfig,
                icfg: sim.IntegratorConfig, params: pk.PackParams
                ) -> ProtocolResult:
    """Series CC-CV charge; per-cell overcharge is recorded, not rejected."""
    N = params.N
    ones = np.ones(N)
    y = pk.flatten(state, params)
    V0 = _voltages(state, np.zeros(N), params)
    if V0.sum() >= cfg.V_total_limit:
        raise ProtocolError("pack already at the series voltage limit")

    def validity(st, I_here):
        pk.validate_state(st, params, I_here, z_max=_OVERCHARGE_HARD_Z)
        if cfg.per_cell_guard is not None:
            V = _voltages(st, I_here, params)
            if np.any(V > cfg.per_cell_guard):
                raise ProtocolError(
                    f"per-cell guard voltage {cfg.per_cell_guard} V exceeded")

    trace = sim._TraceBuilder(params)
    charge = np.zeros(N)
    trace.add(0.0, y, np.full(N, -cfg.I_cc), -cfg.I_cc, charge)
    t = 0.0
    I = -cfg.I_cc
    phase = "cc"
    overcharged = np.zeros(N, dtype=bool)
    reason = None
    max_steps = int(cfg.max_hours * 3600 / cfg.Ts)
    for _ in range(max_steps):
        if phase == "cv":
            I = _cv_current(y, cfg.V_total_limit, cfg.I_cc, icfg, cfg.Ts,
                            params)
            if abs(I) <= cfg.I_cutoff:
                reason = "cv_cutoff"
                break
        step = sim.InputStep(I_branch=I, delta=ones, Ts=cfg.Ts)
        y, charge, stop = sim.integrate_step(
            y, step, "switched", icfg, params, t0=t, charge0=charge,
            trace=trace, validity=validity)
        t += cfg.Ts
        st = pk.unflatten(y, params)
        z = np.asarray(cm.soc(np.asarray(st.cells.theta_p), params.cells))
        for i in np.nonzero((z > 1.0) & ~overcharged)[0]:
            overcharged[i] = True
            trace.events.append({"type": "overcharge", "cell": int(i),
                                 "t": t, "z": float(z[i])})
        if np.any(z >= _OVERCHARGE_HARD_Z):
            reason = "overcharge_rail"
            break
        if phase == "cc":
            V_tot = float(_voltages(st, np.full(N, I), params).sum())
            if V_tot >= cfg.V_total_limit:
                phase = "cv"
    else:
        reason = "max_duration"
    tr = trace.build(stop_reason=reason)
    final = pk.unflatten(y, params)
    return ProtocolResult(tr, final, _summary(tr, params, {
        "protocol": "cccv", "overcharged_cells": [int(i) for i in
                                                  np.nonzero(overcharged)[0]]}))


def charge_voltage_based(state: pk.PackState, cfg: VoltageBasedConfig,
                         icfg: sim.IntegratorConfig, params: pk.PackParams
                         ) -> ProtocolResult:
    """Constant current with permanent per-cell bypass at the voltage ceiling."""
    N = params.N
    y = pk.flatten(state, params)
    delta = np.ones(N)
    V0 = _voltages(state, np.zeros(N), params)
    if np.any(V0 >= cfg.V_cell_max):
        raise ProtocolError("a cell already sits at the bypass threshold")

    def validity(st, I_here):
        pk.validate_state(st, params, I_here)

    def stop(st, t_abs, I_here):
        V = _voltages(st, I_here, params)
        if np.any((delta > 0) & (V >= cfg.V_cell_max)):
            return "cell_at_ceiling"
        return None

    trace = sim._TraceBuilder(params)
    charge = np.zeros(N)
    trace.add(0.0, y, -cfg.I_cc * delta, -cfg.I_cc, charge)
    t = 0.0
    t_end = cfg.max_hours * 3600
    reason = None
    while t < t_end:
        step = sim.InputStep(I_branch=-cfg.I_cc, delta=delta.copy(),
                             Ts=cfg.Ts)
        y, charge, stop_reason = sim.integrate_step(
            y, step, "switched", icfg, params, t0=t, charge0=charge,
            trace=trace, validity=validity, stop_predicate=stop)
        if stop_reason:
            # latch every cell at/over the ceiling; time continues mid-step
            st = pk.unflatten(y, params)
            V = _voltages(st, -cfg.I_cc * (delta > 0), params)
            hit = (delta > 0) & (V >= cfg.V_cell_max)
            for i in np.nonzero(hit)[0]:
                trace.events.append({"type": "bypass", "cell": int(i),
                                     "t": float(trace.rows["t"][-1]),
                                     "V": float(V[i])})
            delta[hit] = 0.0
            t = float(trace.rows["t"][-1])
            if not delta.any():
                reason = "all_bypassed"
                break
        else:
            t += cfg.Ts
    else:
        reason = "max_duration"
    tr = trace.build(stop_reason=reason)
    final = pk.unflatten(y, params)
    return ProtocolResult(tr, final, _summary(tr, params, {
        "protocol": "voltage_based"}))


def discharge_capacity_test(state: pk.PackState, params: pk.PackParams,
                            cfg: DischargeConfig | None = None,
                            icfg: sim.IntegratorConfig | None = None
                            ) -> tuple[float, ProtocolResult]:
    """Constant 1C discharge to the cutoff; returns extracted charge in Ah."""
    cfg = cfg or DischargeConfig()
    icfg = icfg or sim.IntegratorConfig(substeps=400, sample_every=40)
    N = params.N
    I = cfg.I_1C if cfg.I_1C is not None else float(
        np.max(np.broadcast_to(np.asarray(params.cells.ageing.I_1C,
                                          dtype=float), (N,))))
    ones = np.ones(N)

    def validity(st, I_here):
        # a post-CC-CV pack can start overcharged; the discharge must still run
        pk.validate_state(st, params, I_here, z_min=-0.05,
                          z_max=_OVERCHARGE_HARD_Z)

    def stop(st, t_abs, I_here):
        V = _voltages(st, I_here, params)
        if float(V.min()) <= cfg.V_cutoff:
            return "cutoff_voltage"
        return None

    y = pk.flatten(state, params)
    if stop(state, 0.0, np.full(N, I)):
        tr = sim._TraceBuilder(params)
        tr.add(0.0, y, np.full(N, I), I, np.zeros(N))
        built = tr.build(stop_reason="cutoff_voltage")
        return 0.0, ProtocolResult(built, state.copy(),
                                   _summary(built, params,
                                            {"protocol": "discharge",
                                             "extracted_ah": 0.0}))
    n_steps = int(cfg.max_hours * 3600 / cfg.Ts)
    schedule = [sim.InputStep(I_branch=I, delta=ones, Ts=cfg.Ts)
                for _ in range(n_steps)]
    final, tr = sim.simulate(state, schedule, "switched", icfg, params,
                             stop_predicate=stop, validity=validity)
    extracted = float(tr.charge_as[-1, 0]) / 3600.0
    return extracted, ProtocolResult(tr, final, _summary(tr, params, {
        "protocol": "discharge", "extracted_ah": extracted}))
