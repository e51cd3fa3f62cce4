"""Single-cell electrochemical model.

Reduced single-particle model with electrolyte dynamics: solid-phase
stoichiometry ODEs, finite-volume electrolyte diffusion, SEI ageing and the
algebraic voltage/overpotential outputs.

All functions are pure and broadcast over leading array dimensions, so the
same code evaluates one cell (scalar fields), a whole pack (shape ``(N,)``
fields) or a batch of packs (shape ``(B, N)``).  The electrolyte vector
always occupies the last axis with layout ``[p_1..p_M, s_1..s_M, n_1..n_M]``,
where ``p_1`` sits at the positive current collector and ``n_M`` at the
negative one.

Sign convention: charging current is negative.  Capacity ``C`` is carried in
ampere-seconds internally; Ah appears only at I/O boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import FARADAY, GAS_CONSTANT
from .errors import DomainError, ParameterError


# --------------------------------------------------------------------------
# parameter records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrheniusParam:
    """Temperature-dependent parameter: value(T) = psi0 * exp(-Ea / (R*T))."""

    psi0: float
    Ea: float = 0.0

    def __post_init__(self):
        if not np.all(np.asarray(self.psi0) > 0):
            raise ParameterError("Arrhenius psi0 must be positive")
        if not np.all(np.asarray(self.Ea) >= 0):
            raise ParameterError("Arrhenius activation energy must be nonnegative")

    def at(self, T):
        return arrhenius(self, T)


@dataclass(frozen=True)
class ElectrodeParams:
    Rp: float            # particle radius, m
    cs_max: float        # max solid concentration, mol/m^3
    theta_0pct: float    # stoichiometry at 0% charge
    theta_100pct: float  # stoichiometry at 100% charge
    Ds: ArrheniusParam   # solid diffusion coefficient, m^2/s
    k_rate: ArrheniusParam  # reaction rate constant
    L: float             # layer thickness, m
    eps: float           # electrolyte-phase porosity
    brug: float          # Bruggeman exponent

    def __post_init__(self):
        for name in ("Rp", "cs_max", "L"):
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ParameterError(f"electrode {name} must be positive")
        for name in ("theta_0pct", "theta_100pct"):
            v = np.asarray(getattr(self, name))
            if not (np.all(v > 0) and np.all(v < 1)):
                raise ParameterError(f"electrode {name} must lie in (0, 1)")
        eps = np.asarray(self.eps)
        if not (np.all(eps > 0) and np.all(eps < 1)):
            raise ParameterError("electrode porosity must lie in (0, 1)")
        if np.any(np.asarray(self.delta_theta) == 0):
            raise ParameterError("electrode stoichiometry window is empty")

    @property
    def delta_theta(self):
        return self.theta_100pct - self.theta_0pct


@dataclass(frozen=True)
class SeparatorParams:
    L: float
    eps: float
    brug: float

    def __post_init__(self):
        if not np.all(np.asarray(self.L) > 0):
            raise ParameterError("separator thickness must be positive")
        eps = np.asarray(self.eps)
        if not (np.all(eps > 0) and np.all(eps < 1)):
            raise ParameterError("separator porosity must lie in (0, 1)")


@dataclass(frozen=True)
class AgeingParams:
    Mw: float        # side-product molar weight, kg/mol
    rho_n: float     # film density, kg/m^3
    nu: float        # film admittance (fitted, absorbs area factors)
    i0_base: float   # base side-reaction exchange current, A/m^2
    w: float         # empirical current exponent
    U_sei: float     # SEI reference potential, V
    I_1C: float      # 1C-rate current, A


@dataclass(frozen=True)
class CellParams:
    """Full per-cell parameter set.

    Fields may be scalars or per-cell arrays of shape ``(N,)``; all model
    functions broadcast either form.
    """

    pos: ElectrodeParams
    neg: ElectrodeParams
    sep: SeparatorParams
    A: float                 # solid-electrolyte contact area, m^2
    t_plus: float            # transference number
    De: ArrheniusParam       # electrolyte diffusion coefficient, m^2/s
    M: int                   # finite volumes per section
    ageing: AgeingParams
    ce_init: float           # nominal electrolyte concentration, mol/m^3
    Ea_kappa: float = 0.0    # conductivity activation energy, J/mol
    # positive OCP: degree-6 polynomial in surface stoichiometry (descending)
    ocp_pos_coeffs: tuple = (18.45, -40.7, 20.94, 8.07, -7.837, 0.02414, 4.571)
    # negative OCP: rational (num deg 1 / den deg 2), descending coefficients
    ocp_neg_num: tuple = (0.1261, 0.00694)
    ocp_neg_den: tuple = (1.0, 0.6995, 0.00405)
    # conductivity cubic in gamma = 1e-3 * ce (descending)
    kappa_coeffs: tuple = (0.2667, -1.2983, 1.7919, 0.1726)

    def __post_init__(self):
        tp = np.asarray(self.t_plus)
        if not (np.all(tp > 0) and np.all(tp < 1)):
            raise ParameterError("transference number must lie in (0, 1)")
        if self.M < 1:
            raise ParameterError("at least one finite volume per section is required")
        if not np.all(np.asarray(self.A) > 0):
            raise ParameterError("contact area must be positive")

    def electrode(self, which):
        if which == "pos":
            return self.pos
        if which == "neg":
            return self.neg
        raise ValueError(f"unknown electrode {which!r}")


def stack_params(cells) -> CellParams:
    """Stack per-cell parameter records into one record with array fields.

    All cells must share ``M`` and the curve coefficients; physical scalars
    may differ and become shape-(N,) arrays.
    """
    cells = list(cells)
    ref = cells[0]
    if any(c.M != ref.M for c in cells):
        raise ParameterError("all cells in a pack must use the same electrolyte grid")
    for name in ("ocp_pos_coeffs", "ocp_neg_num", "ocp_neg_den", "kappa_coeffs"):
        if any(getattr(c, name) != getattr(ref, name) for c in cells):
            raise ParameterError("per-cell curve coefficients are not supported")

    def arr(get):
        vals = [get(c) for c in cells]
        return vals[0] if all(v == vals[0] for v in vals) else np.array(vals)

    def arrh(get):
        return ArrheniusParam(arr(lambda c: get(c).psi0), arr(lambda c: get(c).Ea))

    def electrode(which):
        return ElectrodeParams(
            Rp=arr(lambda c: c.electrode(which).Rp),
            cs_max=arr(lambda c: c.electrode(which).cs_max),
            theta_0pct=arr(lambda c: c.electrode(which).theta_0pct),
            theta_100pct=arr(lambda c: c.electrode(which).theta_100pct),
            Ds=arrh(lambda c: c.electrode(which).Ds),
            k_rate=arrh(lambda c: c.electrode(which).k_rate),
            L=arr(lambda c: c.electrode(which).L),
            eps=arr(lambda c: c.electrode(which).eps),
            brug=arr(lambda c: c.electrode(which).brug),
        )

    return CellParams(
        pos=electrode("pos"),
        neg=electrode("neg"),
        sep=SeparatorParams(
            L=arr(lambda c: c.sep.L),
            eps=arr(lambda c: c.sep.eps),
            brug=arr(lambda c: c.sep.brug),
        ),
        A=arr(lambda c: c.A),
        t_plus=arr(lambda c: c.t_plus),
        De=arrh(lambda c: c.De),
        M=ref.M,
        ageing=AgeingParams(
            Mw=arr(lambda c: c.ageing.Mw),
            rho_n=arr(lambda c: c.ageing.rho_n),
            nu=arr(lambda c: c.ageing.nu),
            i0_base=arr(lambda c: c.ageing.i0_base),
            w=arr(lambda c: c.ageing.w),
            U_sei=arr(lambda c: c.ageing.U_sei),
            I_1C=arr(lambda c: c.ageing.I_1C),
        ),
        ce_init=arr(lambda c: c.ce_init),
        Ea_kappa=arr(lambda c: c.Ea_kappa),
        ocp_pos_coeffs=ref.ocp_pos_coeffs,
        ocp_neg_num=ref.ocp_neg_num,
        ocp_neg_den=ref.ocp_neg_den,
        kappa_coeffs=ref.kappa_coeffs,
    )


# --------------------------------------------------------------------------
# dynamic state
# --------------------------------------------------------------------------

@dataclass
class CellState:
    """Dynamic state of one cell (or an array of cells, see module docstring).

    ``ce`` spans the last axis with 3*M entries; ``C`` is in ampere-seconds.
    """

    theta_p: np.ndarray   # cathodic average stoichiometry
    q_p: np.ndarray       # volume-averaged concentration flux, positive electrode
    q_n: np.ndarray       # volume-averaged concentration flux, negative electrode
    ce: np.ndarray        # electrolyte concentrations, (..., 3M)
    C: np.ndarray         # available capacity, As
    R_sei: np.ndarray     # film resistance, Ohm
    T: np.ndarray         # temperature, K

    def copy(self):
        return CellState(*(np.array(getattr(self, f), dtype=float)
                           for f in ("theta_p", "q_p", "q_n", "ce", "C", "R_sei", "T")))


def rested_state(params: CellParams, z0, C0_as, R_sei0, T0) -> CellState:
    """Rested-cell initial condition: zero fluxes, uniform electrolyte."""
    z0 = np.asarray(z0, dtype=float)
    theta_p = params.pos.theta_0pct + z0 * params.pos.delta_theta
    shape = np.shape(theta_p)
    ce = np.broadcast_to(
        np.asarray(params.ce_init, dtype=float)[..., None],
        shape + (3 * params.M,),
    ).copy()
    zeros = np.zeros(shape)
    return CellState(
        theta_p=np.array(theta_p, dtype=float),
        q_p=zeros.copy(),
        q_n=zeros.copy(),
        ce=ce,
        C=np.broadcast_to(np.asarray(C0_as, dtype=float), shape).copy(),
        R_sei=np.broadcast_to(np.asarray(R_sei0, dtype=float), shape).copy(),
        T=np.broadcast_to(np.asarray(T0, dtype=float), shape).copy(),
    )


# --------------------------------------------------------------------------
# elementary relations
# --------------------------------------------------------------------------

def arrhenius(p: ArrheniusParam, T):
    """Evaluate an Arrhenius-scaled parameter at temperature T (K)."""
    T = np.asarray(T)
    if np.any(T <= 0):
        raise DomainError("Arrhenius law requires a positive absolute temperature")
    return p.psi0 * np.exp(-p.Ea / (GAS_CONSTANT * T))


def anodic_from_cathodic(theta_p, params: CellParams):
    """Map the cathodic average stoichiometry to the anodic one (lithium bookkeeping)."""
    pos, neg = params.pos, params.neg
    return neg.theta_0pct + (theta_p - pos.theta_0pct) / pos.delta_theta * neg.delta_theta


def soc(theta_p, params: CellParams):
    """Normalized state of charge from the cathodic average stoichiometry."""
    return (theta_p - params.pos.theta_0pct) / params.pos.delta_theta


def theta_for_soc(z, params: CellParams):
    return params.pos.theta_0pct + z * params.pos.delta_theta


def theta_bar(state: CellState, params: CellParams, electrode):
    if electrode == "pos":
        return state.theta_p
    return anodic_from_cathodic(state.theta_p, params)


def harmonic_mean(rho1, rho2, lam1, lam2):
    """Distance-weighted harmonic mean of two interface transport coefficients."""
    for v in (rho1, rho2, lam1, lam2):
        if np.any(np.asarray(v) <= 0):
            raise DomainError("harmonic mean requires positive arguments")
    return rho1 * rho2 * (lam1 + lam2) / (rho1 * lam2 + rho2 * lam1)


def active_material_fractions(C_as, params: CellParams):
    """Active material volume fractions implied by the available capacity (As)."""
    pos, neg = params.pos, params.neg
    eps_p = -C_as / (pos.delta_theta * params.A * FARADAY * pos.L * pos.cs_max)
    eps_n = C_as / (neg.delta_theta * params.A * FARADAY * neg.L * neg.cs_max)
    return eps_p, eps_n


# --------------------------------------------------------------------------
# right-hand sides
# --------------------------------------------------------------------------

def solid_rhs(state: CellState, I_app, params: CellParams):
    """Time derivatives of (theta_p, q_p, q_n)."""
    pos, neg = params.pos, params.neg
    dtheta_p = -pos.delta_theta / state.C * I_app
    dq = []
    for el, q in ((pos, state.q_p), (neg, state.q_n)):
        Ds = el.Ds.at(state.T)
        dq.append(-30.0 * Ds / el.Rp**2 * q
                  - 45.0 * el.delta_theta * el.cs_max / (6.0 * el.Rp * state.C) * I_app)
    return dtheta_p, dq[0], dq[1]


def surface_stoichiometry(state: CellState, I_app, params: CellParams, electrode):
    el = params.electrode(electrode)
    q = state.q_p if electrode == "pos" else state.q_n
    tb = theta_bar(state, params, electrode)
    Ds = el.Ds.at(state.T)
    return (tb
            + 8.0 * el.Rp * q / (35.0 * el.cs_max)
            - el.Rp**2 * el.delta_theta / (105.0 * Ds * state.C) * I_app)


def _section_geometry(params: CellParams):
    M = params.M
    dx = (params.pos.L / M, params.sep.L / M, params.neg.L / M)
    return M, dx


def _vol(x):
    """Append a volume axis so per-cell params broadcast against (..., N, M)."""
    return np.asarray(x)[..., None]


def effective_diffusivities(params: CellParams, T):
    De = params.De.at(T)
    return (De * params.pos.eps**params.pos.brug,
            De * params.sep.eps**params.sep.brug,
            De * params.neg.eps**params.neg.brug)


def electrolyte_rhs(state: CellState, I_app, params: CellParams):
    """Finite-volume RHS for the 3*M electrolyte concentrations.

    Zero-flux outer boundaries; section interfaces use the harmonic mean of
    the two adjacent effective diffusivities (the separator value on the
    positive interface, matching the FV construction).  Source terms inject
    (1-t+)/(F A L) * I into the negative section and remove it from the
    positive one, so total electrolyte lithium is conserved exactly.
    """
    M, (dxp, dxs, dxn) = _section_geometry(params)
    ce = np.asarray(state.ce)
    cp, cs, cn = ce[..., :M], ce[..., M:2 * M], ce[..., 2 * M:]
    Dp, Dsep, Dn = effective_diffusivities(params, state.T)
    D_ps = harmonic_mean(Dp, Dsep, dxp, dxs)
    D_sn = harmonic_mean(Dsep, Dn, dxs, dxn)

    # fluxes D * dc/dx at every internal face; outer boundaries carry zero flux
    fp = _vol(Dp) * np.diff(cp, axis=-1) / _vol(dxp)
    fs = _vol(Dsep) * np.diff(cs, axis=-1) / _vol(dxs)
    fn = _vol(Dn) * np.diff(cn, axis=-1) / _vol(dxn)
    f_ps = _vol(D_ps) * (cs[..., :1] - cp[..., -1:]) / _vol(0.5 * (dxp + dxs))
    f_sn = _vol(D_sn) * (cn[..., :1] - cs[..., -1:]) / _vol(0.5 * (dxs + dxn))

    zero = np.zeros(np.broadcast_shapes(fp.shape[:-1], f_ps.shape[:-1]) + (1,))
    f_ps = np.broadcast_to(f_ps, zero.shape)
    f_sn = np.broadcast_to(f_sn, zero.shape)
    flux_p = np.concatenate([zero, np.broadcast_to(fp, zero.shape[:-1] + fp.shape[-1:]), f_ps], axis=-1)
    flux_s = np.concatenate([f_ps, np.broadcast_to(fs, zero.shape[:-1] + fs.shape[-1:]), f_sn], axis=-1)
    flux_n = np.concatenate([f_sn, np.broadcast_to(fn, zero.shape[:-1] + fn.shape[-1:]), zero], axis=-1)

    Iv = _vol(I_app)
    src_p = -_vol((1.0 - params.t_plus) / (FARADAY * params.A * params.pos.L)) * Iv
    src_n = _vol((1.0 - params.t_plus) / (FARADAY * params.A * params.neg.L)) * Iv

    dcp = (np.diff(flux_p, axis=-1) / _vol(dxp) + src_p) / _vol(params.pos.eps)
    dcs = (np.diff(flux_s, axis=-1) / _vol(dxs)) / _vol(params.sep.eps)
    dcn = (np.diff(flux_n, axis=-1) / _vol(dxn) + src_n) / _vol(params.neg.eps)
    return np.concatenate([dcp, dcs, dcn], axis=-1)


def electrolyte_lithium(ce, params: CellParams):
    """Porosity-and-volume weighted total electrolyte lithium (per unit area)."""
    M, (dxp, dxs, dxn) = _section_geometry(params)
    ce = np.asarray(ce)
    return (params.pos.eps * dxp * ce[..., :M].sum(axis=-1)
            + params.sep.eps * dxs * ce[..., M:2 * M].sum(axis=-1)
            + params.neg.eps * dxn * ce[..., 2 * M:].sum(axis=-1))


def section_mean_ce(state: CellState, params: CellParams, electrode):
    M = params.M
    ce = np.asarray(state.ce)
    if electrode == "pos":
        return ce[..., :M].mean(axis=-1)
    return ce[..., 2 * M:].mean(axis=-1)


_THETA_CLIP = 1e-9


def overpotential(state: CellState, I_app, params: CellParams, electrode,
                  strict=True):
    """Butler-Volmer surface overpotential of one electrode.

    With ``strict`` the surface stoichiometry must lie strictly inside (0,1);
    otherwise it is clipped (used inside optimizer predictions, where the
    trajectory-validity penalty handles excursions).
    """
    el = params.electrode(electrode)
    theta = surface_stoichiometry(state, I_app, params, electrode)
    if strict and (np.any(theta <= 0.0) or np.any(theta >= 1.0)):
        raise DomainError(
            f"{electrode} surface stoichiometry left (0, 1); state is invalid")
    theta = np.clip(theta, _THETA_CLIP, 1.0 - _THETA_CLIP)
    cbar = section_mean_ce(state, params, electrode)
    if strict and np.any(cbar <= 0.0):
        raise DomainError("electrolyte concentration must stay positive")
    cbar = np.maximum(cbar, _THETA_CLIP)
    i0 = FARADAY * el.k_rate.at(state.T) * np.sqrt(cbar * theta * (1.0 - theta))
    arg = el.delta_theta * FARADAY * el.Rp / (6.0 * i0 * state.C) * I_app
    return 2.0 * GAS_CONSTANT * state.T / FARADAY * np.arcsinh(arg)


def ocp(theta_surface, params: CellParams, electrode):
    """Open-circuit potential of one electrode at a surface stoichiometry."""
    th = np.asarray(theta_surface)
    if electrode == "pos":
        return np.polyval(params.ocp_pos_coeffs, th)
    return np.polyval(params.ocp_neg_num, th) / np.polyval(params.ocp_neg_den, th)


def _kappa(ce_volume, T, Ea, coeffs, strict):
    gamma = 1e-3 * np.asarray(ce_volume)
    kappa = np.polyval(coeffs, gamma) * np.exp(-Ea / (GAS_CONSTANT * np.asarray(T)))
    if strict and np.any(kappa <= 0.0):
        raise DomainError("electrolyte conductivity is non-positive "
                          "(concentration far outside the fitted range)")
    return kappa if strict else np.maximum(kappa, 1e-6)


def electrolyte_conductivity(ce_volume, T, params: CellParams, strict=True):
    """Empirical electrolyte conductivity, cubic in gamma = 1e-3 * ce."""
    if np.any(np.asarray(ce_volume) <= 0) or np.any(np.asarray(T) <= 0):
        raise DomainError("conductivity requires positive concentration and temperature")
    return _kappa(ce_volume, T, params.Ea_kappa, params.kappa_coeffs, strict)


def phi_drop(state: CellState, I_app, params: CellParams, strict=True):
    """Ohmic electrolyte potential drop under the trapezoidal ionic-current shape."""
    M, (dxp, dxs, dxn) = _section_geometry(params)
    ce = np.asarray(state.ce)
    Tv = _vol(state.T)
    Ea = _vol(params.Ea_kappa)
    kp = _kappa(ce[..., :M], Tv, Ea, params.kappa_coeffs, strict)
    ks = _kappa(ce[..., M:2 * M], Tv, Ea, params.kappa_coeffs, strict)
    kn = _kappa(ce[..., 2 * M:], Tv, Ea, params.kappa_coeffs, strict)
    k = np.arange(1, M + 1)
    phi_p = dxp * ((2 * k - 1) / (kp * _vol(params.pos.eps**params.pos.brug))).sum(axis=-1)
    phi_s = dxs * (1.0 / (ks * _vol(params.sep.eps**params.sep.brug))).sum(axis=-1)
    phi_n = dxn * ((2 * M - 2 * k + 1) / (kn * _vol(params.neg.eps**params.neg.brug))).sum(axis=-1)
    return -np.asarray(I_app) / (2.0 * M) * (phi_p + 2.0 * phi_s + phi_n)


def open_circuit_potentials(state: CellState, I_app, params: CellParams):
    """Surface-stoichiometry OCPs (U_pos, U_neg) at the applied current."""
    th_p = surface_stoichiometry(state, I_app, params, "pos")
    th_n = surface_stoichiometry(state, I_app, params, "neg")
    return ocp(th_p, params, "pos"), ocp(th_n, params, "neg")


def terminal_voltage(state: CellState, I_app, params: CellParams, strict=True):
    """Cell terminal voltage."""
    M = params.M
    U_p, U_n = open_circuit_potentials(state, I_app, params)
    eta_p = overpotential(state, I_app, params, "pos", strict)
    eta_n = overpotential(state, I_app, params, "neg", strict)
    ce = np.asarray(state.ce)
    c_left = ce[..., 0]        # positive-collector volume
    c_right = ce[..., -1]      # negative-collector volume
    if strict and (np.any(c_left <= 0) or np.any(c_right <= 0)):
        raise DomainError("boundary electrolyte concentration must be positive")
    ratio = np.maximum(c_left, _THETA_CLIP) / np.maximum(c_right, _THETA_CLIP)
    delta_phi = (phi_drop(state, I_app, params, strict)
                 + 2.0 * GAS_CONSTANT * state.T / FARADAY
                 * (1.0 - params.t_plus) * np.log(ratio))
    return U_p - U_n + eta_p - eta_n + delta_phi + np.asarray(I_app) * state.R_sei


def ageing_rhs(state: CellState, I_app, params: CellParams, strict=True):
    """Capacity-fade and SEI-growth rates (dC/dt <= 0, dR_sei/dt >= 0)."""
    ag = params.ageing
    I_app = np.asarray(I_app)
    i0_side = np.where(I_app <= 0,
                       ag.i0_base * (np.abs(I_app) / ag.I_1C)**ag.w,
                       0.0)
    eta_n = overpotential(state, I_app, params, "neg", strict)
    th_n = np.clip(surface_stoichiometry(state, I_app, params, "neg"),
                   _THETA_CLIP, 1.0 - _THETA_CLIP)
    U_n = ocp(th_n, params, "neg")
    eta_side = eta_n + U_n - ag.U_sei
    j_side = -(i0_side / FARADAY) * np.exp(
        0.5 * FARADAY / (GAS_CONSTANT * state.T) * eta_side)
    neg = params.neg
    dC = 3.0 * state.C / (neg.Rp * params.A * neg.delta_theta * neg.cs_max) * j_side
    dR = -(ag.Mw / (ag.rho_n * ag.nu)) * j_side
    return dC, dR
