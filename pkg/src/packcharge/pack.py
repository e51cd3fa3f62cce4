"""Pack-level model: N cells coupled through a lumped thermal network.

The pack state is the concatenation of every cell's electrochemical state
with the coolant temperature.  For integration the state flattens to one
vector of length ``N*(6+3M)+1``; all RHS evaluations broadcast over leading
batch dimensions so an ensemble of packs integrates in one vectorized call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cell as cm
from .cell import CellParams, CellState, stack_params
from .errors import ParameterError, StateValidityError


@dataclass(frozen=True)
class ThermalNetwork:
    """Lumped thermal couplings: cell-cell conduction, cell-coolant convection.

    Absent couplings are encoded as zero conductance (``R = inf`` in the
    resistance inputs), so the RHS sums only over declared edges.
    """

    R_cell: np.ndarray      # (N, N) pairwise resistances, K/W; inf = no contact
    R_sink: np.ndarray      # (N,) cell-coolant resistances, K/W; inf = insulated
    C_th: np.ndarray        # (N,) cell thermal capacities, J/K
    C_th_sink: float        # coolant thermal capacity, J/K
    xi_power: float         # coolant release power, W
    T_norm: float           # coolant activation threshold, K

    def __post_init__(self):
        R = np.asarray(self.R_cell, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ParameterError("R_cell must be a square matrix")
        if not np.allclose(R, R.T, equal_nan=True):
            raise ParameterError("R_cell must be symmetric")
        finite = R[np.isfinite(R)]
        if np.any(finite <= 0):
            raise ParameterError("finite thermal resistances must be positive")
        if np.any(np.asarray(self.C_th) <= 0) or self.C_th_sink <= 0:
            raise ParameterError("thermal capacities must be positive")
        object.__setattr__(self, "R_cell", R)
        object.__setattr__(self, "R_sink", np.asarray(self.R_sink, dtype=float))
        object.__setattr__(self, "C_th", np.asarray(self.C_th, dtype=float))
        with np.errstate(divide="ignore"):
            G = 1.0 / R
            g = 1.0 / self.R_sink
        G[~np.isfinite(R)] = 0.0
        np.fill_diagonal(G, 0.0)
        g[~np.isfinite(self.R_sink)] = 0.0
        object.__setattr__(self, "_G_cell", G)
        object.__setattr__(self, "_G_sink", g)

    @property
    def N(self):
        return self.R_cell.shape[0]

    @property
    def G_cell(self):
        return self._G_cell

    @property
    def G_sink(self):
        return self._G_sink


@dataclass(frozen=True)
class PackParams:
    cells: CellParams        # stacked record, array fields of shape (N,)
    network: ThermalNetwork
    T_env: float
    N: int

    @classmethod
    def from_cells(cls, cell_list, network, T_env):
        n = len(cell_list)
        if network.N != n:
            raise ParameterError(
                f"thermal network size {network.N} != number of cells {n}")
        return cls(cells=stack_params(cell_list), network=network, T_env=T_env, N=n)

    @property
    def M(self):
        return self.cells.M

    @property
    def state_size(self):
        return self.N * (6 + 3 * self.M) + 1


@dataclass
class PackState:
    cells: CellState         # fields shaped (..., N); ce is (..., N, 3M)
    T_sink: np.ndarray

    def copy(self):
        return PackState(self.cells.copy(), np.array(self.T_sink, dtype=float))


# --------------------------------------------------------------------------
# flat layout
# --------------------------------------------------------------------------

def flatten(state: PackState, params: PackParams) -> np.ndarray:
    N, M = params.N, params.M
    c = state.cells
    parts = [np.asarray(c.theta_p), np.asarray(c.q_p), np.asarray(c.q_n),
             np.asarray(c.ce).reshape(np.shape(c.theta_p)[:-1] + (N * 3 * M,)),
             np.asarray(c.C), np.asarray(c.R_sei), np.asarray(c.T),
             np.asarray(state.T_sink)[..., None]]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=-1)


def unflatten(y: np.ndarray, params: PackParams) -> PackState:
    N, M = params.N, params.M
    y = np.asarray(y)
    lead = y.shape[:-1]
    i = 0

    def take(n):
        nonlocal i
        out = y[..., i:i + n]
        i += n
        return out

    theta_p = take(N)
    q_p = take(N)
    q_n = take(N)
    ce = take(N * 3 * M).reshape(lead + (N, 3 * M))
    C = take(N)
    R_sei = take(N)
    T = take(N)
    T_sink = take(1)[..., 0]
    return PackState(CellState(theta_p, q_p, q_n, ce, C, R_sei, T), T_sink)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def heat_generation(cell_state: CellState, I_app, V, params: CellParams):
    """Polarisation heat Q = |I| * |V - OCV| >= 0 (W)."""
    U_p, U_n = cm.open_circuit_potentials(cell_state, I_app, params)
    return np.abs(np.asarray(I_app)) * np.abs(np.asarray(V) - (U_p - U_n))


def thermal_rhs(T_cells, T_sink, Q, network: ThermalNetwork):
    """Temperature derivatives of the N cells and the coolant."""
    T_cells = np.asarray(T_cells)
    T_sink = np.asarray(T_sink)
    G = network.G_cell
    g = network.G_sink
    exchange = np.einsum("ij,...j->...i", G, T_cells) - T_cells * G.sum(axis=1)
    to_sink = g * (T_cells - T_sink[..., None])
    dT = (np.asarray(Q) - to_sink + exchange) / network.C_th
    xi = np.where(T_sink > network.T_norm, network.xi_power, 0.0)
    dT_sink = (to_sink.sum(axis=-1) - xi) / network.C_th_sink
    return dT, dT_sink


def pack_rhs(y, I_app, params: PackParams):
    """Full pack state derivative in flat layout.

    ``I_app`` has shape (..., N).  Algebraic outputs are evaluated in
    non-strict mode; state validity is enforced at substep boundaries by the
    simulator, not inside integrator stages.
    """
    state = unflatten(y, params)
    c = state.cells
    p = params.cells
    dtheta_p, dq_p, dq_n = cm.solid_rhs(c, I_app, p)
    dce = cm.electrolyte_rhs(c, I_app, p)
    dC, dR = cm.ageing_rhs(c, I_app, p, strict=False)
    V = cm.terminal_voltage(c, I_app, p, strict=False)
    Q = heat_generation(c, I_app, V, p)
    dT, dT_sink = thermal_rhs(c.T, state.T_sink, Q, params.network)

    lead = np.broadcast_shapes(np.shape(dtheta_p)[:-1], np.shape(dce)[:-2],
                               np.shape(dT_sink))
    N, M = params.N, params.M

    def full(a, shape):
        return np.broadcast_to(a, lead + shape).reshape(lead + (int(np.prod(shape)),))

    return np.concatenate([
        full(dtheta_p, (N,)), full(dq_p, (N,)), full(dq_n, (N,)),
        full(dce, (N, 3 * M)).reshape(lead + (N * 3 * M,)),
        full(dC, (N,)), full(dR, (N,)), full(dT, (N,)),
        np.broadcast_to(dT_sink, lead)[..., None],
    ], axis=-1)


def validate_state(state: PackState, params: PackParams, I_app,
                   z_min=-0.02, z_max=1.01):
    """Hard state-validity check; raises with the offending cell index."""
    c = state.cells
    p = params.cells
    checks = [
        ("electrolyte concentration <= 0", np.asarray(c.ce).min(axis=-1) <= 0.0),
        ("capacity <= 0", np.asarray(c.C) <= 0.0),
        ("temperature <= 0", np.asarray(c.T) <= 0.0),
    ]
    for el in ("pos", "neg"):
        th = cm.surface_stoichiometry(c, I_app, p, el)
        checks.append((f"{el} surface stoichiometry out of (0,1)",
                       (th <= 0.0) | (th >= 1.0)))
    z = cm.soc(c.theta_p, p)
    checks.append(("SOC below lower validity bound", z < z_min))
    checks.append(("SOC above upper validity bound", z > z_max))
    for reason, bad in checks:
        bad = np.asarray(bad)
        if bad.any():
            idx = int(np.argwhere(bad)[0][-1])
            raise StateValidityError(f"cell {idx}: {reason}",
                                     cell_index=idx, reason=reason)
