"""Pack ODE integration under the switched per-cell supply.

Three input realizations of one control step are supported:

* ``switched``  — ideal bypass switching: cell i is disconnected for the
  first (1-delta_i)*Ts seconds, then conducts the branch current.  Switching
  instants are quantized to the substep grid so each substep sees a constant
  current and the per-step charge identity is exact on the grid.
* ``sigmoid``   — smooth logistic relaxation of the same profile (the
  prediction model used by the optimizer).
* ``average``   — constant delta_i * I per cell (baseline approximation).

Integration is fixed-step classical Runge-Kutta 4; discontinuities are
aligned to substep boundaries in switched mode and smeared over O(dt) in the
coolant switching term (documented trade-off for reproducibility).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import cell as cm
from . import pack as pk
from .errors import ConfigError, StateValidityError

MODES = ("switched", "sigmoid", "average")


@dataclass(frozen=True)
class InputStep:
    """One control interval: branch current plus per-cell duty cycles."""

    I_branch: float
    delta: np.ndarray     # (N,) duty cycles in [0, 1]
    Ts: float

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))
        if np.any(self.delta < -1e-12) or np.any(self.delta > 1 + 1e-12):
            raise ConfigError("duty cycles must lie in [0, 1]")
        if self.Ts <= 0:
            raise ConfigError("step duration must be positive")


@dataclass(frozen=True)
class IntegratorConfig:
    substeps: int = 100          # RK4 substeps per control step
    sigmoid_a: float = 5.0       # logistic slope
    # False: switching instant at (1-delta)*Ts (time argument in seconds,
    # offset scaled by Ts).  True: the literal unscaled (1-delta) offset.
    sigmoid_literal_offset: bool = False
    # record/validate/stop-check every n-th substep boundary; substeps in
    # between run inside the compiled kernel without interruption
    sample_every: int = 1
    use_fastpath: bool = True    # compiled RK4 kernel (falls back if absent)

    def __post_init__(self):
        if self.substeps < 1:
            raise ConfigError("at least one substep is required")
        if self.sigmoid_a <= 0:
            raise ConfigError("sigmoid slope must be positive")
        if self.sample_every < 1 or self.substeps % self.sample_every:
            raise ConfigError("sample_every must divide substeps")


# --------------------------------------------------------------------------
# per-cell applied currents
# --------------------------------------------------------------------------

def applied_current_switched(t, k, step: InputStep, i):
    """Exact (unquantized) switched current of cell i at absolute time t."""
    t_on = k * step.Ts + (1.0 - step.delta[i]) * step.Ts
    return np.where(np.asarray(t) < t_on, 0.0, step.I_branch)


def applied_current_sigmoid(t, k, step: InputStep, i, a, literal_offset=False):
    """Logistic relaxation of the switched profile for cell i."""
    t_rel = np.asarray(t) - k * step.Ts
    off = (1.0 - step.delta[i]) * (1.0 if literal_offset else step.Ts)
    return step.I_branch / (1.0 + np.exp(-a * (t_rel - off)))


def _sigmoid_currents(t_rel, step: InputStep, config: IntegratorConfig):
    """(N,) sigmoid currents at relative time t_rel within the step."""
    off = (1.0 - step.delta) * (1.0 if config.sigmoid_literal_offset else step.Ts)
    return step.I_branch / (1.0 + np.exp(-config.sigmoid_a * (t_rel - off)))


def switched_substep_currents(step: InputStep, substeps: int):
    """(S, N) constant per-substep currents with grid-quantized switching."""
    s = np.arange(substeps)[:, None]
    n_off = np.rint((1.0 - step.delta) * substeps)
    return np.where(s >= n_off, step.I_branch, 0.0)


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass
class SimTrace:
    """Time-indexed record of a pack simulation (see to_csv for the contract)."""

    t: np.ndarray
    I_branch: np.ndarray
    z: np.ndarray        # (n, N)
    V: np.ndarray
    T: np.ndarray
    C_ah: np.ndarray
    R_sei: np.ndarray
    I_app: np.ndarray
    T_sink: np.ndarray
    charge_as: np.ndarray   # cumulative per-cell applied charge, As
    stop_reason: str | None = None
    events: list = field(default_factory=list)

    @property
    def N(self):
        return self.z.shape[1]

    def to_csv(self, path):
        n = self.N
        cols = (["t", "I_branch"]
                + [f"{q}_{i+1}" for q in ("z", "V", "T", "C_ah", "Rsei", "Iapp")
                   for i in range(n)]
                + ["T_sink"] + [f"charge_as_{i+1}" for i in range(n)])
        data = np.column_stack([self.t, self.I_branch, self.z, self.V, self.T,
                                self.C_ah, self.R_sei, self.I_app,
                                self.T_sink, self.charge_as])
        with open(path, "w") as f:
            f.write("# units: t s, I A, T K, C Ah, Rsei Ohm, charge As; "
                    "z dimensionless\n")
            f.write(",".join(cols) + "\n")
            np.savetxt(f, data, delimiter=",", fmt="%.10g")

    @classmethod
    def from_csv(cls, path):
        with open(path) as f:
            lines = [ln for ln in f if not ln.startswith("#")]
        header = lines[0].strip().split(",")
        data = np.loadtxt(io.StringIO("".join(lines[1:])), delimiter=",", ndmin=2)
        n = sum(1 for c in header if c.startswith("z_"))
        col = {c: j for j, c in enumerate(header)}

        def block(q):
            return data[:, [col[f"{q}_{i+1}"] for i in range(n)]]

        return cls(t=data[:, col["t"]], I_branch=data[:, col["I_branch"]],
                   z=block("z"), V=block("V"), T=block("T"), C_ah=block("C_ah"),
                   R_sei=block("Rsei"), I_app=block("Iapp"),
                   T_sink=data[:, col["T_sink"]], charge_as=block("charge_as"))


class _TraceBuilder:
    def __init__(self, params: pk.PackParams):
        self.params = params
        self.rows = {k: [] for k in ("t", "I_branch", "z", "V", "T", "C_ah",
                                     "R_sei", "I_app", "T_sink", "charge_as")}
        self.events = []

    def add(self, t, y, I_app, I_branch, charge_as):
        st = pk.unflatten(y, self.params)
        c = st.cells
        p = self.params.cells
        r = self.rows
        r["t"].append(t)
        r["I_branch"].append(I_branch)
        r["z"].append(cm.soc(np.asarray(c.theta_p), p))
        r["V"].append(cm.terminal_voltage(c, I_app, p, strict=False))
        r["T"].append(np.asarray(c.T).copy())
        r["C_ah"].append(np.asarray(c.C) / 3600.0)
        r["R_sei"].append(np.asarray(c.R_sei).copy())
        r["I_app"].append(np.asarray(I_app, dtype=float)
                          * np.ones(self.params.N))
        r["T_sink"].append(float(st.T_sink))
        r["charge_as"].append(np.asarray(charge_as).copy())

    def build(self, stop_reason=None):
        r = self.rows
        return SimTrace(
            t=np.asarray(r["t"], dtype=float),
            I_branch=np.asarray(r["I_branch"], dtype=float),
            z=np.asarray(r["z"]), V=np.asarray(r["V"]), T=np.asarray(r["T"]),
            C_ah=np.asarray(r["C_ah"]), R_sei=np.asarray(r["R_sei"]),
            I_app=np.asarray(r["I_app"]), T_sink=np.asarray(r["T_sink"]),
            charge_as=np.asarray(r["charge_as"]),
            stop_reason=stop_reason, events=self.events)


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

def rk4_substep(y, t_rel, h, current_at, params: pk.PackParams):
    """One classical RK4 substep; ``current_at(t_rel)`` gives (..., N) currents."""
    I1 = current_at(t_rel)
    Im = current_at(t_rel + 0.5 * h)
    I2 = current_at(t_rel + h)
    k1 = pk.pack_rhs(y, I1, params)
    k2 = pk.pack_rhs(y + 0.5 * h * k1, Im, params)
    k3 = pk.pack_rhs(y + 0.5 * h * k2, Im, params)
    k4 = pk.pack_rhs(y + h * k3, I2, params)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_current_fn(step: InputStep, mode, config: IntegratorConfig):
    """Return current_at(t_rel) plus the per-substep charge increments (S, N)."""
    S = config.substeps
    h = step.Ts / S
    if mode == "switched":
        table = switched_substep_currents(step, S)

        def current_at(t_rel):
            idx = min(int(t_rel / h), S - 1)
            return table[idx]

        charge = table * h
    elif mode == "average":
        const = step.delta * step.I_branch

        def current_at(t_rel):
            return const

        charge = np.tile(const * h, (S, 1))
    elif mode == "sigmoid":
        def current_at(t_rel):
            return _sigmoid_currents(t_rel, step, config)

        # Simpson per substep, consistent with the RK4 stage sampling
        edges = np.linspace(0.0, step.Ts, 2 * S + 1)
        vals = np.stack([_sigmoid_currents(t, step, config) for t in edges])
        charge = (h / 6.0) * (vals[0:-1:2] + 4.0 * vals[1::2] + vals[2::2])
    else:
        raise ConfigError(f"unknown input mode {mode!r}")
    return current_at, charge


try:
    from . import fastpath as _fp
except ImportError:          # pragma: no cover - numba not installed
    _fp = None


def _advance_block(y, s0, nsub, h, step, mode, config, params, current_at, dq):
    """Advance nsub substeps starting at substep s0 of the control step."""
    if config.use_fastpath and _fp is not None and y.ndim == 1:
        pp = _fp.build_param_pack(params)
        if mode in ("switched", "average"):
            table = np.ascontiguousarray(dq[s0:s0 + nsub]) / h
            return _fp._rk4_const_block(np.ascontiguousarray(y).copy(),
                                        table, h, *pp)
        offs = (1.0 - step.delta) * (1.0 if config.sigmoid_literal_offset
                                     else step.Ts)
        return _fp._rk4_sigmoid_block(
            np.ascontiguousarray(y).copy(), s0 * h, nsub, h,
            float(step.I_branch), np.ascontiguousarray(step.delta),
            float(config.sigmoid_a), np.ascontiguousarray(offs), *pp)
    if mode in ("switched", "average"):
        # the current is constant within each substep (the switching instant
        # is resolved on the substep grid); sampling table entries at stage
        # times would pull the neighbouring substep's value at the boundary
        for s in range(s0, s0 + nsub):
            I_s = dq[s] / h
            y = rk4_substep(y, s * h, h, lambda t: I_s, params)
        return y
    for s in range(s0, s0 + nsub):
        y = rk4_substep(y, s * h, h, current_at, params)
    return y


def integrate_step(y, step: InputStep, mode, config: IntegratorConfig,
                   params: pk.PackParams, t0=0.0, charge0=None,
                   trace: _TraceBuilder | None = None, validity=None,
                   stop_predicate=None):
    """Advance one control step of Ts seconds with RK4 substeps.

    Returns ``(y_new, charge_new, stop_reason)``; ``stop_reason`` is None
    unless the stop predicate fired.  Validity, trace sampling and the stop
    predicate are all evaluated at every ``sample_every``-th substep
    boundary (every boundary by default); state-validity violations raise
    StateValidityError.
    """
    S = config.substeps
    h = step.Ts / S
    charge = np.zeros(params.N) if charge0 is None else np.array(charge0)
    current_at, dq = _step_current_fn(step, mode, config)
    block = config.sample_every
    for s0 in range(0, S, block):
        y = _advance_block(y, s0, block, h, step, mode, config, params,
                           current_at, dq)
        charge = charge + dq[s0:s0 + block].sum(axis=0)
        t_rel = (s0 + block) * h
        t_abs = t0 + t_rel
        # left-limit current: what was applied over the substep just completed
        I_here = current_at(t_rel - 0.5 * h)
        st = pk.unflatten(y, params)
        if validity is not None:
            validity(st, I_here)
        if trace is not None:
            trace.add(t_abs, y, I_here, step.I_branch, charge)
        if stop_predicate is not None:
            reason = stop_predicate(st, t_abs, I_here)
            if reason:
                return y, charge, reason
    return y, charge, None


def simulate(state: pk.PackState, schedule, mode, config: IntegratorConfig,
             params: pk.PackParams, stop_predicate=None, validity=None,
             t0=0.0) -> tuple[pk.PackState, SimTrace]:
    """Run a schedule of input steps until exhausted or the predicate fires."""
    if not schedule:
        raise ConfigError("empty input schedule")
    y = pk.flatten(state, params)
    trace = _TraceBuilder(params)
    charge = np.zeros(params.N)
    first_I = _step_current_fn(schedule[0], mode, config)[0](0.0)
    trace.add(t0, y, first_I, schedule[0].I_branch, charge)
    t = t0
    reason = None
    try:
        for k, step in enumerate(schedule):
            y, charge, reason = integrate_step(
                y, step, mode, config, params, t0=t, charge0=charge,
                trace=trace, validity=validity, stop_predicate=stop_predicate)
            t += step.Ts
            if reason:
                break
    except StateValidityError as e:
        # surface the partial trace alongside the diagnostic
        e.trace = trace.build(stop_reason="validity")
        raise
    return pk.unflatten(y, params), trace.build(stop_reason=reason)
